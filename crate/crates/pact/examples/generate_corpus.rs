//! Emit a few random well-formed protocols from the seeded generator.
//!
//! ```sh
//! cargo run --example generate_corpus [count] [first_seed]
//! ```

use pact::checker::check_well_formed;
use pact::corpus::{generate, GenConfig};
use pact::parser::render_protocol;

fn main() {
    let count: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let first: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let cfg = GenConfig::default();
    for seed in first..first + count {
        let case = generate(seed, &cfg);
        // every generated protocol passes the checker
        check_well_formed(&case.protocol).expect("generator soundness");
        println!("(* seed {seed} *)");
        println!("{}", render_protocol(&case.protocol));
    }
}
