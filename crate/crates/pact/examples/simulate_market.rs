//! Execute the projected endpoints repeatedly under solved policies and
//! compare empirical averages with the game-tree expectation.
//!
//! ```sh
//! cargo run --example simulate_market [trials] [seed]
//! ```

use pact::checker::check_well_formed;
use pact::game::{build_game, expected_utility, BeliefProfile};
use pact::parser::parse_protocol;
use pact::project::project_all;
use pact::sim::{run_once, run_trials, Schedule};
use pact::solver::solve_level_k;

fn main() {
    let trials: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10_000);
    let seed: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(7);

    let protocol = parse_protocol(pact::bundled::BOOKSELLER).expect("parses");
    let checked = check_well_formed(&protocol).expect("checks");
    let beliefs = BeliefProfile::from_json(pact::bundled::LEMONS_BELIEFS, &checked)
        .expect("beliefs load")
        .with_overrides(Some(1), None)
        .expect("valid overrides");
    let game = build_game(&checked, &beliefs).expect("game builds");
    let policies = solve_level_k(&game, &beliefs)
        .expect("solves")
        .top()
        .policies
        .clone();
    let programs = project_all(&checked);

    // one annotated trace first
    let trace = run_once(&checked, &programs, &policies, &beliefs, seed, Schedule::RoundRobin)
        .expect("runs");
    println!("sample trace (seed {seed}):");
    for event in &trace.events {
        match event {
            pact::sim::Event::Message {
                from,
                to,
                var,
                value,
                money,
            } => {
                let tag = if *money { " [money]" } else { "" };
                println!("  {from} -> {to}: {var} = {value}{tag}");
            }
            pact::sim::Event::Choice {
                role, var, value, ..
            } => println!("  {role} chooses {var} = {value}"),
        }
    }
    for (role, u) in &trace.utility {
        println!("  realized utility of {role}: {u}");
    }

    println!("\nrunning {trials} trials...");
    let report = run_trials(
        &checked,
        &programs,
        &policies,
        &beliefs,
        trials,
        seed,
        Schedule::RoundRobin,
    )
    .expect("trials run");
    assert_eq!(report.conformance_failures, 0, "all traces must conform");
    for (role, stats) in &report.stats {
        let expected = expected_utility(&game, role, &policies).expect("complete profile");
        println!(
            "  {role}: empirical {:.4} +- {:.4} (se) vs expected {expected:.4}",
            stats.mean, stats.std_err
        );
    }
    println!("\nempirical action frequencies:");
    for (key, actions) in &report.frequencies {
        let freq = actions
            .iter()
            .map(|(a, f)| format!("{a}: {f:.4}"))
            .collect::<Vec<_>>()
            .join(", ");
        println!("  {key} -> {freq}");
    }
}
