//! Parse and check a protocol, then print what the checker learned.
//!
//! ```sh
//! cargo run --example check_protocol [file.pact]
//! ```

use pact::checker::analyze;
use pact::parser::{parse_protocol_named, render_protocol};

fn main() {
    let source = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(&path).expect("readable protocol file"),
        None => pact::bundled::BOOKSELLER.to_string(),
    };
    let protocol = match parse_protocol_named(&source, "protocol.pact") {
        Ok(p) => p,
        Err(diags) => {
            for d in diags {
                eprintln!("{}", d.line());
            }
            std::process::exit(1);
        }
    };

    let (checked, diags) = analyze(&protocol);
    for d in &diags {
        eprintln!("{}", d.line());
    }
    let checked = match checked {
        Some(c) if !pact::parser::has_errors(&diags) => c,
        _ => std::process::exit(1),
    };

    println!("protocol `{}` is well-formed", checked.desugared.name);
    println!(
        "participants: {}",
        checked
            .roles
            .iter()
            .map(|r| r.name())
            .collect::<Vec<_>>()
            .join(", ")
    );
    if checked.has_nature {
        println!("nature draws are present; analyses will need priors");
    }
    println!("\ninformation signatures at each choice:");
    for info in checked.choice_info.values() {
        let known = info
            .known
            .iter()
            .map(|v| v.name())
            .collect::<Vec<_>>()
            .join(", ");
        println!(
            "  {} chooses `{}` over {} knowing {{{known}}}",
            info.role, info.var, info.domain
        );
    }

    println!("\ncanonical form:\n{}", render_protocol(&protocol));
}
