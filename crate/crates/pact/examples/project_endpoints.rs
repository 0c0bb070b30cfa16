//! Endpoint projection: compile the global protocol into one program per
//! role and print the per-role columns side by side with the choreography.
//!
//! ```sh
//! cargo run --example project_endpoints
//! ```

use pact::checker::check_well_formed;
use pact::parser::parse_protocol;
use pact::project::{project_all, render_listing};

fn main() {
    let protocol = parse_protocol(pact::bundled::BOOKSELLER).expect("bundled protocol parses");
    let checked = check_well_formed(&protocol).expect("bundled protocol checks");

    println!("choreography:\n");
    for line in pact::render_protocol(&protocol).lines() {
        println!("    {line}");
    }

    println!("\nprojected endpoints:\n");
    for (_, program) in project_all(&checked) {
        for line in render_listing(&program).lines() {
            println!("    {line}");
        }
        println!();
    }
}
