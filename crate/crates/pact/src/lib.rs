//! Pact: a choreographic protocol language with agent choices, declared
//! utilities and nature variables.
//!
//! The crate takes a `.pact` protocol through a pipeline:
//!
//! 1. [`parser`] parses the surface syntax (and prints it back canonically);
//! 2. [`checker`] enforces well-formedness and computes who knows what;
//! 3. [`project`] compiles the choreography to one program per role;
//! 4. [`game`] extracts the extensive-form game induced by the protocol and
//!    an analyst's belief profile;
//! 5. [`solver`] computes bounded-rational level-k decision policies by
//!    exact Bayesian enumeration;
//! 6. [`sim`] jointly executes the projected endpoints under solved
//!    policies and validates trace conformance.
//!
//! Each step has a runnable demo under `examples/`; the thin `pact` binary
//! exposes the same steps as subcommands (`check`, `project`, `game`,
//! `solve`, `simulate`).

pub mod ast;
pub mod checker;
pub mod cli;
pub mod corpus;
pub mod dist;
pub mod eval;
pub mod game;
pub mod parser;
pub mod project;
pub mod sim;
pub mod solver;

/// Assets shipped with the crate: the canonical buyer-seller protocol and
/// the two-quality/two-price belief profile used throughout the examples.
pub mod bundled {
    /// `protocols/bookseller.pact`.
    pub const BOOKSELLER: &str = include_str!("../protocols/bookseller.pact");
    /// `protocols/lemons.beliefs.json`.
    pub const LEMONS_BELIEFS: &str = include_str!("../protocols/lemons.beliefs.json");
}

pub use ast::{Protocol, Role, Value, VarName};
pub use checker::{check_well_formed, CheckedProtocol};
pub use dist::Dist;
pub use game::{
    build_game, expected_utility, outcome_distribution, BeliefProfile, GameTree, InfoSetKey,
    PolicyProfile,
};
pub use parser::{parse_protocol, render_protocol, Diagnostic};
pub use project::{project_all, project_role, LocalProgram};
pub use sim::{check_trace_conformance, run_once, run_trials, Schedule, TraceRecord};
pub use solver::{solve_level_k, SolveResult};
