//! Extract the extensive-form game a protocol denotes and poke at it:
//! information sets, terminal utilities, expected utility and the outcome
//! distribution under a uniform policy profile.
//!
//! ```sh
//! cargo run --example build_game
//! ```

use pact::checker::check_well_formed;
use pact::dist::Dist;
use pact::game::{
    build_game, expected_utility, outcome_distribution, BeliefProfile, Node, PolicyProfile,
};
use pact::parser::parse_protocol;

fn main() {
    let protocol = parse_protocol(pact::bundled::BOOKSELLER).expect("parses");
    let checked = check_well_formed(&protocol).expect("checks");
    let beliefs =
        BeliefProfile::from_json(pact::bundled::LEMONS_BELIEFS, &checked).expect("beliefs load");
    let game = build_game(&checked, &beliefs).expect("game builds");

    println!(
        "{}: {} terminals, {} decision info sets, {} chance node(s)",
        checked.desugared.name,
        game.terminal_count(),
        game.decision_info_set_count(),
        game.chance_count()
    );

    println!("\ninformation sets:");
    for (key, nodes) in &game.info_sets {
        println!("  {key} ({} node(s))", nodes.len());
    }

    println!("\nterminals:");
    for (_, bindings, utility) in game.terminals() {
        let b = bindings
            .iter()
            .map(|(v, val)| format!("{v}={val}"))
            .collect::<Vec<_>>()
            .join(", ");
        let u = utility
            .iter()
            .map(|(r, x)| format!("{r}: {x}"))
            .collect::<Vec<_>>()
            .join(", ");
        println!("  {b}\n    utility {u}");
    }

    // a uniform profile over every information set
    let mut uniform = PolicyProfile::new();
    for key in game.info_sets.keys() {
        let actions = game.actions[&key.var].clone();
        uniform.insert(key.clone(), Dist::uniform(actions).expect("non-empty domain"));
    }

    println!("\nunder uniform play:");
    for role in &game.roles {
        let eu = expected_utility(&game, role, &uniform).expect("complete profile");
        println!("  expected utility of {role}: {eu:.4}");
    }
    let outcomes = outcome_distribution(&game, &uniform).expect("complete profile");
    println!("  outcome distribution over {} terminals:", outcomes.len());
    for (id, p) in outcomes.iter() {
        if let Node::Terminal { bindings, .. } = game.node(*id) {
            let quality = &bindings[&pact::VarName::new("book.quality")];
            let price = &bindings[&pact::VarName::new("price")];
            let accept = &bindings[&pact::VarName::new("accept")];
            println!("    q={quality} p={price} accept={accept}: {p:.3}");
        }
    }
}
