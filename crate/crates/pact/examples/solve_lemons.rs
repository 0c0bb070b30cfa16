//! Solve level-k decision policies for the bundled buyer-seller market and
//! print the ladder: who does what, at which depth, believing what.
//!
//! ```sh
//! cargo run --example solve_lemons
//! ```

use pact::checker::check_well_formed;
use pact::game::{build_game, BeliefProfile};
use pact::parser::parse_protocol;
use pact::solver::solve_level_k;

fn main() {
    let protocol = parse_protocol(pact::bundled::BOOKSELLER).expect("parses");
    let checked = check_well_formed(&protocol).expect("checks");
    let beliefs =
        BeliefProfile::from_json(pact::bundled::LEMONS_BELIEFS, &checked).expect("beliefs load");
    let game = build_game(&checked, &beliefs).expect("game builds");

    let result = solve_level_k(&game, &beliefs).expect("solves");
    println!(
        "solved levels 0..={} at noise {}\n",
        beliefs.level, beliefs.noise
    );
    for lr in &result.levels {
        println!("level {}:", lr.level);
        for (role, sets) in &lr.policies.policies {
            for (key, dist) in sets {
                let actions = dist
                    .iter()
                    .map(|(a, p)| format!("{a}: {p:.4}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                println!("  {role} picks {} | {} -> {actions}", key.var, key.obs_text());
            }
        }
        println!("  posteriors:");
        for (key, post) in &lr.posteriors {
            let hidden = post
                .iter()
                .map(|(assignment, p)| {
                    let a = assignment
                        .iter()
                        .map(|(v, val)| format!("{v}={val}"))
                        .collect::<Vec<_>>()
                        .join(",");
                    format!("[{a}]: {p:.4}")
                })
                .collect::<Vec<_>>()
                .join("  ");
            println!("    {key} -> {hidden}");
        }
        println!();
    }
}
