//! Deadlock-freedom and trace-equivalence audit: for every assignment of
//! choices and nature draws, exhaustively interleave the projected
//! endpoints and compare the terminals against direct execution of the
//! choreography.
//!
//! ```sh
//! cargo run --example audit_interleavings
//! ```

use pact::checker::check_well_formed;
use pact::corpus::{generate, GenConfig};
use pact::parser::parse_protocol;
use pact::project::project_all;
use pact::sim::{choreography_outcomes, explore_interleavings};

fn audit(name: &str, checked: &pact::CheckedProtocol) {
    let programs = project_all(checked);
    let outcomes = choreography_outcomes(checked).expect("choreography walks");
    let mut states = 0usize;
    for (forced, expected) in &outcomes {
        let result = explore_interleavings(checked, &programs, forced).expect("explores");
        assert!(!result.deadlocked, "{name}: deadlock under some schedule");
        assert_eq!(result.terminals.len(), 1, "{name}: non-confluent interleavings");
        assert_eq!(
            result.terminals.iter().next().unwrap(),
            expected,
            "{name}: projection disagrees with the choreography"
        );
        states += result.states_visited;
    }
    println!(
        "{name}: {} assignments, {} interleaving states, deadlock-free, \
         terminals match the choreography exactly",
        outcomes.len(),
        states
    );
}

fn main() {
    let protocol = parse_protocol(pact::bundled::BOOKSELLER).expect("parses");
    let checked = check_well_formed(&protocol).expect("checks");
    audit("bookseller", &checked);

    // and a handful of generated protocols
    let cfg = GenConfig::default();
    for seed in [1u64, 5, 9, 13] {
        let case = generate(seed, &cfg);
        let checked = check_well_formed(&case.protocol).expect("corpus protocol checks");
        audit(&case.protocol.name, &checked);
    }
}
