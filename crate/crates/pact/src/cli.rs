//! Batch command-line front end: check, project, game, solve, simulate.
//!
//! Diagnostics go to standard error as `FILE:LINE:COL: CODE: message` lines;
//! primary output goes to standard output (or `--out`) in the format picked
//! by `--format`. Exit codes: 0 success, 1 check/profile/policy failure,
//! 2 I/O or usage error. Outputs carry no timestamps, so identical
//! invocations produce byte-identical results.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};

use crate::ast::Role;
use crate::checker::{analyze, CheckedProtocol};
use crate::game::{build_game, BeliefProfile, GameTree};
use crate::parser::{has_errors, parse_protocol_named, Diagnostic};
use crate::project::{project_all, render_listing};
use crate::sim::{run_trials_with, Schedule, TraceRecord};
use crate::solver::{policies_from_json, solve_level_k};

#[derive(Debug, Parser)]
#[command(
    name = "pact",
    version,
    about = "Checker, projector, game extractor, level-k solver and simulator for Pact protocols"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format for the primary result.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write the primary result to a file instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Tsv,
    Structured,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a protocol and run the well-formedness checker.
    Check { file: PathBuf },
    /// Print per-role endpoint programs.
    Project {
        file: PathBuf,
        /// Restrict the listing to one role.
        #[arg(long)]
        role: Option<String>,
    },
    /// Extract the extensive-form game under a belief profile.
    Game {
        file: PathBuf,
        #[arg(long)]
        beliefs: PathBuf,
    },
    /// Solve bounded-rational level-k policies.
    Solve {
        file: PathBuf,
        #[arg(long)]
        beliefs: PathBuf,
        /// Reasoning depth override.
        #[arg(long)]
        level: Option<u32>,
        /// Softmax noise override (must be positive).
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Execute the projected endpoints repeatedly under solved policies.
    Simulate {
        file: PathBuf,
        #[arg(long)]
        beliefs: PathBuf,
        #[arg(long)]
        level: Option<u32>,
        #[arg(long)]
        noise: Option<f64>,
        /// Load policies from a `solve --format structured` export instead
        /// of solving inline.
        #[arg(long)]
        policies: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `roundrobin` or `random:K`.
        #[arg(long, default_value = "roundrobin")]
        schedule: String,
        /// Write every trace as one JSON line to this file.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
}

/// Entry point used by the `pact` binary.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/usage text
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = String::new();
    let code = execute(&cli, &mut stdout);
    deliver(&cli.out, &stdout);
    code
}

/// As [`run`], for in-process invocation with explicit arguments.
pub fn run_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = String::new();
    let code = execute(&cli, &mut stdout);
    deliver(&cli.out, &stdout);
    code
}

fn deliver(out: &Option<PathBuf>, payload: &str) {
    match out {
        None => print!("{payload}"),
        Some(path) => {
            if let Err(e) = std::fs::write(path, payload) {
                eprintln!("error: cannot write {}: {e}", path.display());
            }
        }
    }
}

fn execute(cli: &Cli, out: &mut String) -> i32 {
    match &cli.command {
        Command::Check { file } => cmd_check(file, cli.format, out),
        Command::Project { file, role } => cmd_project(file, role.as_deref(), cli.format, out),
        Command::Game { file, beliefs } => cmd_game(file, beliefs, cli.format, out),
        Command::Solve {
            file,
            beliefs,
            level,
            noise,
        } => cmd_solve(file, beliefs, *level, *noise, cli.format, out),
        Command::Simulate {
            file,
            beliefs,
            level,
            noise,
            policies,
            trials,
            seed,
            schedule,
            traces,
        } => cmd_simulate(
            file,
            beliefs,
            *level,
            *noise,
            policies.as_deref(),
            *trials,
            *seed,
            schedule,
            traces.as_deref(),
            cli.format,
            out,
        ),
    }
}

fn print_diagnostics(diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("{}", d.line());
    }
}

/// Loads, parses and checks a protocol; on failure prints diagnostics and
/// yields the exit code.
fn load_checked(file: &Path) -> Result<(CheckedProtocol, Vec<Diagnostic>), i32> {
    let text = match std::fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", file.display());
            return Err(2);
        }
    };
    let name = file.to_string_lossy().to_string();
    let protocol = match parse_protocol_named(&text, &name) {
        Ok(p) => p,
        Err(diags) => {
            print_diagnostics(&diags);
            return Err(1);
        }
    };
    let (checked, diags) = analyze(&protocol);
    print_diagnostics(&diags);
    if has_errors(&diags) {
        return Err(1);
    }
    match checked {
        Some(c) => Ok((c, diags)),
        None => Err(1),
    }
}

fn load_beliefs(
    path: &Path,
    checked: &CheckedProtocol,
    level: Option<u32>,
    noise: Option<f64>,
) -> Result<BeliefProfile, i32> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return Err(2);
        }
    };
    BeliefProfile::from_json(&text, checked)
        .and_then(|b| b.with_overrides(level, noise))
        .map_err(|e| {
            eprintln!("error: {e}");
            1
        })
}

fn cmd_check(file: &Path, format: Format, out: &mut String) -> i32 {
    let text = match std::fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", file.display());
            return 2;
        }
    };
    let name = file.to_string_lossy().to_string();
    let (checked, diags) = match parse_protocol_named(&text, &name) {
        Ok(p) => analyze(&p),
        Err(diags) => (None, diags),
    };
    print_diagnostics(&diags);
    let ok = !has_errors(&diags) && checked.is_some();
    match format {
        Format::Structured => {
            let mut report = serde_json::json!({
                "ok": ok,
                "diagnostics": diags,
            });
            if let (true, Some(c)) = (ok, &checked) {
                report["protocol"] = serde_json::json!(c.desugared.name);
                report["roles"] =
                    serde_json::json!(c.roles.iter().map(|r| r.name()).collect::<Vec<_>>());
                report["nature"] = serde_json::json!(c.has_nature);
                report["choice_points"] = serde_json::json!(c.choice_info.len());
            }
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&report).unwrap());
        }
        _ => {
            if let (true, Some(c)) = (ok, &checked) {
                let _ = writeln!(
                    out,
                    "ok: {} ({} roles, {} choice points{})",
                    c.desugared.name,
                    c.roles.len(),
                    c.choice_info.len(),
                    if c.has_nature { ", nature" } else { "" }
                );
            }
        }
    }
    if ok {
        0
    } else {
        1
    }
}

fn cmd_project(file: &Path, role: Option<&str>, format: Format, out: &mut String) -> i32 {
    let (checked, _) = match load_checked(file) {
        Ok(x) => x,
        Err(code) => return code,
    };
    let programs = project_all(&checked);
    let selected: Vec<&Role> = match role {
        None => programs.keys().collect(),
        Some(name) => {
            let role = Role::new(name);
            if !programs.contains_key(&role) {
                eprintln!("error: role `{name}` does not participate");
                return 1;
            }
            programs.keys().filter(|r| r.name() == name).collect()
        }
    };
    match format {
        Format::Structured => {
            let export: Vec<_> = selected.iter().map(|r| &programs[r]).collect();
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&export).unwrap());
        }
        _ => {
            for (i, r) in selected.iter().enumerate() {
                if i > 0 {
                    let _ = writeln!(out);
                }
                let _ = write!(out, "{}", render_listing(&programs[r]));
            }
        }
    }
    0
}

fn game_summary(g: &GameTree) -> String {
    format!(
        "{} terminals, {} decision info sets, {} chance node{}",
        g.terminal_count(),
        g.decision_info_set_count(),
        g.chance_count(),
        if g.chance_count() == 1 { "" } else { "s" }
    )
}

fn cmd_game(file: &Path, beliefs: &Path, format: Format, out: &mut String) -> i32 {
    let (checked, _) = match load_checked(file) {
        Ok(x) => x,
        Err(code) => return code,
    };
    let beliefs = match load_beliefs(beliefs, &checked, None, None) {
        Ok(b) => b,
        Err(code) => return code,
    };
    let g = match build_game(&checked, &beliefs) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let terminal_rows = || {
        let mut rows = Vec::new();
        for (id, bindings, utility) in g.terminals() {
            let binding_text = bindings
                .iter()
                .map(|(v, val)| format!("{v}={val}"))
                .collect::<Vec<_>>()
                .join(",");
            let utility_text = utility
                .iter()
                .map(|(r, u)| format!("{r}={u}"))
                .collect::<Vec<_>>()
                .join(",");
            rows.push((id, binding_text, utility_text));
        }
        rows
    };
    match format {
        Format::Structured => {
            let terminals: Vec<_> = g
                .terminals()
                .map(|(id, bindings, utility)| {
                    serde_json::json!({
                        "id": id,
                        "bindings": bindings,
                        "utility": utility,
                    })
                })
                .collect();
            let info_sets: Vec<_> = g
                .info_sets
                .iter()
                .map(|(k, nodes)| {
                    serde_json::json!({
                        "role": k.role.name(),
                        "var": k.var.name(),
                        "obs": k.obs,
                        "nodes": nodes,
                    })
                })
                .collect();
            let doc = serde_json::json!({
                "summary": game_summary(&g),
                "terminals": terminals,
                "info_sets": info_sets,
            });
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&doc).unwrap());
        }
        Format::Tsv => {
            let _ = writeln!(out, "terminal\tbindings\tutilities");
            for (id, b, u) in terminal_rows() {
                let _ = writeln!(out, "{id}\t{b}\t{u}");
            }
        }
        Format::Text => {
            let _ = writeln!(out, "{}: {}", checked.desugared.name, game_summary(&g));
            for (id, b, u) in terminal_rows() {
                let _ = writeln!(out, "  terminal {id}: {b} | {u}");
            }
        }
    }
    0
}

fn cmd_solve(
    file: &Path,
    beliefs: &Path,
    level: Option<u32>,
    noise: Option<f64>,
    format: Format,
    out: &mut String,
) -> i32 {
    let (checked, _) = match load_checked(file) {
        Ok(x) => x,
        Err(code) => return code,
    };
    let beliefs = match load_beliefs(beliefs, &checked, level, noise) {
        Ok(b) => b,
        Err(code) => return code,
    };
    let g = match build_game(&checked, &beliefs) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let result = match solve_level_k(&g, &beliefs) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match format {
        Format::Structured => {
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&result.to_json()).unwrap()
            );
        }
        Format::Tsv => {
            let _ = write!(out, "{}", result.to_tsv());
        }
        Format::Text => {
            let _ = writeln!(
                out,
                "solved {} levels at noise {}",
                result.levels.len(),
                beliefs.noise
            );
            for lr in &result.levels {
                let _ = writeln!(out, "level {}:", lr.level);
                for (role, sets) in &lr.policies.policies {
                    for (key, dist) in sets {
                        let actions = dist
                            .iter()
                            .map(|(a, p)| format!("{a}: {p:.4}"))
                            .collect::<Vec<_>>()
                            .join(", ");
                        let _ = writeln!(
                            out,
                            "  {role} chooses {} given {} -> {{{actions}}}",
                            key.var,
                            key.obs_text()
                        );
                    }
                }
                if !lr.unreachable.is_empty() {
                    for key in &lr.unreachable {
                        let _ = writeln!(out, "  (unreachable: {key})");
                    }
                }
            }
        }
    }
    0
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    file: &Path,
    beliefs_path: &Path,
    level: Option<u32>,
    noise: Option<f64>,
    policies: Option<&Path>,
    trials: u64,
    seed: u64,
    schedule: &str,
    traces: Option<&Path>,
    format: Format,
    out: &mut String,
) -> i32 {
    if trials == 0 {
        eprintln!("error: --trials must be at least 1");
        return 1;
    }
    let schedule = match Schedule::from_str(schedule) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let (checked, _) = match load_checked(file) {
        Ok(x) => x,
        Err(code) => return code,
    };
    let beliefs = match load_beliefs(beliefs_path, &checked, level, noise) {
        Ok(b) => b,
        Err(code) => return code,
    };
    let pp = match policies {
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", path.display());
                    return 2;
                }
            };
            let value: serde_json::Value = match serde_json::from_str(&text) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("error: invalid policy file: {e}");
                    return 1;
                }
            };
            match policies_from_json(&value) {
                Ok(pp) => pp,
                Err(e) => {
                    eprintln!("error: invalid policy file: {e}");
                    return 1;
                }
            }
        }
        None => {
            let g = match build_game(&checked, &beliefs) {
                Ok(g) => g,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 1;
                }
            };
            match solve_level_k(&g, &beliefs) {
                Ok(r) => r.top().policies.clone(),
                Err(e) => {
                    eprintln!("error: {e}");
                    return 1;
                }
            }
        }
    };
    let programs = project_all(&checked);
    let mut trace_lines = String::new();
    let sink = |trace: &TraceRecord| {
        if traces.is_some() {
            trace_lines.push_str(&trace.to_json_line());
            trace_lines.push('\n');
        }
    };
    let report = match run_trials_with(
        &checked, &programs, &pp, &beliefs, trials, seed, schedule, sink,
    ) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if let Some(path) = traces {
        if let Err(e) = std::fs::write(path, trace_lines) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return 2;
        }
    }
    match format {
        Format::Structured => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&report).unwrap());
        }
        Format::Tsv => {
            let _ = write!(out, "{}", report.to_tsv());
        }
        Format::Text => {
            let _ = writeln!(
                out,
                "{} trials (seed {seed}), {} conformance failures",
                report.trials, report.conformance_failures
            );
            for (role, s) in &report.stats {
                let _ = writeln!(
                    out,
                    "  {role}: mean utility {:.4} +- {:.4} (se)",
                    s.mean, s.std_err
                );
            }
            for (key, actions) in &report.frequencies {
                let freq = actions
                    .iter()
                    .map(|(a, f)| format!("{a}: {f:.4}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                let _ = writeln!(
                    out,
                    "  {} at {} given {} -> {{{freq}}}",
                    key.role,
                    key.var,
                    key.obs_text()
                );
            }
        }
    }
    if report.conformance_failures > 0 {
        eprintln!(
            "error: {} trace(s) failed conformance",
            report.conformance_failures
        );
        return 1;
    }
    0
}
