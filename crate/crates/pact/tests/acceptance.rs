//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use pact::ast::{Role, Value, VarName};
use pact::checker::{analyze, check_well_formed, CheckedProtocol};
use pact::corpus::{generate, GenConfig};
use pact::eval::Bindings;
use pact::game::{build_game, expected_utility, outcome_distribution, BeliefProfile};
use pact::parser::parse_protocol;
use pact::project::{project_all, project_role, skeleton};
use pact::sim::{choreography_outcomes, explore_interleavings, run_trials, Schedule};
use pact::solver::{level0_policy, solve_level_k, LevelResult, SolveResult};

fn bookseller() -> CheckedProtocol {
    check_well_formed(&parse_protocol(pact::bundled::BOOKSELLER).unwrap()).unwrap()
}

fn lemons_beliefs(c: &CheckedProtocol) -> BeliefProfile {
    BeliefProfile::from_json(pact::bundled::LEMONS_BELIEFS, c).unwrap()
}

fn accept_prob(lr: &LevelResult, price: i64) -> f64 {
    let buyer = Role::new("buyer");
    lr.policies.policies[&buyer]
        .iter()
        .find(|(k, _)| {
            k.obs
                .iter()
                .any(|(v, val)| v.name() == "price" && val.magnitude() == Some(price))
        })
        .map(|(_, d)| d.prob(&Value::Bool(true)))
        .expect("buyer info set")
}

fn seller_high_price_prob(lr: &LevelResult, quality: &str) -> f64 {
    let seller = Role::new("seller");
    lr.policies.policies[&seller]
        .iter()
        .find(|(k, _)| {
            k.obs
                .iter()
                .any(|(v, val)| v.name() == "book.quality" && val.text() == quality)
        })
        .map(|(_, d)| d.prob(&Value::Int(2)))
        .expect("seller info set")
}

/// Criterion 1: the bundled buyer-seller protocol parses, checks with zero
/// diagnostics, and projects to programs structurally matching the
/// reference per-role columns. Under one second.
#[test]
fn criterion_1_bookseller_fidelity() {
    let started = Instant::now();
    let protocol = parse_protocol(pact::bundled::BOOKSELLER).expect("parses");
    let (checked, diags) = analyze(&protocol);
    assert!(diags.is_empty(), "expected zero diagnostics, got {diags:?}");
    let checked = checked.expect("checks");

    let buyer = project_role(&checked, &Role::new("buyer"));
    assert_eq!(
        skeleton(&buyer),
        vec![
            "send title -> seller",
            "recv price <- seller",
            "choose accept : bool",
            "send accept -> seller",
            "branch accept",
            "| recv book <- seller",
        ],
        "buyer column skeleton"
    );
    let seller = project_role(&checked, &Role::new("seller"));
    assert_eq!(
        skeleton(&seller),
        vec![
            "recv title <- buyer",
            "choose price : Prices",
            "send price -> buyer",
            "recv accept <- buyer",
            "branch accept",
            "| send book -> buyer",
        ],
        "seller column skeleton"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 1 PASS: bookseller parses, checks clean, projects to the reference \
         buyer/seller skeletons in {elapsed:?}"
    );
}

/// Criterion 2: on a generated corpus of checked protocols (<= 4 choice
/// points, binary/ternary domains), exhaustive joint execution over all
/// interleavings terminates and reproduces exactly the choreography's
/// terminal-binding set. Under 60 seconds total.
#[test]
fn criterion_2_endpoint_projection_correctness() {
    let started = Instant::now();
    let cfg = GenConfig::default();
    let mut protocols = 0usize;
    let mut assignments = 0usize;
    for seed in 0..30u64 {
        let case = generate(seed, &cfg);
        let checked = check_well_formed(&case.protocol)
            .unwrap_or_else(|e| panic!("corpus seed {seed} failed the checker: {e:?}"));
        let programs = project_all(&checked);
        let outcomes = choreography_outcomes(&checked).expect("choreography walks");
        let mut joint: BTreeSet<Bindings> = BTreeSet::new();
        for (forced, expected) in &outcomes {
            let result = explore_interleavings(&checked, &programs, forced)
                .unwrap_or_else(|e| panic!("seed {seed}: exploration failed: {e}"));
            assert!(!result.deadlocked, "seed {seed}: a schedule deadlocked");
            assert_eq!(
                result.terminals.len(),
                1,
                "seed {seed}: interleavings disagree on the terminal"
            );
            let terminal = result.terminals.iter().next().unwrap();
            assert_eq!(terminal, expected, "seed {seed}: terminal bindings differ");
            joint.insert(terminal.clone());
            assignments += 1;
        }
        let choreo: BTreeSet<Bindings> = outcomes.into_iter().map(|(_, b)| b).collect();
        assert_eq!(joint, choreo, "seed {seed}: terminal sets differ");
        protocols += 1;
    }
    let elapsed = started.elapsed();
    assert!(protocols >= 25, "need at least 25 protocols");
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "criterion 2 PASS: {protocols} protocols / {assignments} assignments, every \
         interleaving deadlock-free and trace-equivalent to the choreography in {elapsed:?}"
    );
}

/// Criterion 3: solver posteriors match the brute-force joint-enumeration
/// oracle within 1e-9 at every reachable information set, on the bundled
/// market and on random small games.
#[test]
fn criterion_3_posterior_oracle_equivalence() {
    let mut compared = 0usize;

    let checked = bookseller();
    let beliefs = lemons_beliefs(&checked);
    let g = build_game(&checked, &beliefs).unwrap();
    let result = solve_level_k(&g, &beliefs).unwrap();
    compared += common::assert_posteriors_match_oracle(&checked, &beliefs, &result, 1e-9);

    let cfg = GenConfig::default();
    let mut games = 0usize;
    let mut seed = 100u64;
    while games < 10 {
        let case = generate(seed, &cfg);
        seed += 1;
        let checked = check_well_formed(&case.protocol).expect("corpus checks");
        let g = build_game(&checked, &case.beliefs).expect("game builds");
        if g.info_sets.is_empty() {
            continue;
        }
        let result = solve_level_k(&g, &case.beliefs).expect("solves");
        compared +=
            common::assert_posteriors_match_oracle(&checked, &case.beliefs, &result, 1e-9);
        games += 1;
    }
    assert!(compared > 40, "only {compared} info sets compared");
    println!(
        "criterion 3 PASS: posteriors match the enumeration oracle within 1e-9 at \
         {compared} reachable info sets across the bundled market and {games} random games"
    );
}

/// Criterion 4: naive stage of the market for lemons. Against the
/// price-proportional level-0 buyer, the level-1 seller at noise 0.01 puts
/// at least 0.99 on the maximum price at both quality information sets.
#[test]
fn criterion_4_lemons_naive_stage() {
    let checked = bookseller();
    let beliefs = lemons_beliefs(&checked)
        .with_overrides(Some(1), Some(0.01))
        .unwrap();
    let g = build_game(&checked, &beliefs).unwrap();
    let result = solve_level_k(&g, &beliefs).unwrap();
    let top = result.top();
    let low = seller_high_price_prob(top, "low");
    let high = seller_high_price_prob(top, "high");
    assert!(low >= 0.99, "mass on max price at low quality: {low}");
    assert!(high >= 0.99, "mass on max price at high quality: {high}");
    println!(
        "criterion 4 PASS: level-1 seller prices high irrespective of quality \
         (mass {low:.6} low / {high:.6} high, both >= 0.99)"
    );
}

/// Criterion 5: deep stage of the market for lemons. At noise 0.2 the
/// buyer's acceptance spread at level 5 is strictly smaller than at level 1;
/// both values are cross-checked against the independent hand recursion.
#[test]
fn criterion_5_lemons_deep_stage() {
    let checked = bookseller();
    let beliefs = lemons_beliefs(&checked);
    assert_eq!(beliefs.level, 5);
    assert_eq!(beliefs.noise, 0.2);
    let g = build_game(&checked, &beliefs).unwrap();
    let result = solve_level_k(&g, &beliefs).unwrap();

    let spread = |lr: &LevelResult| (accept_prob(lr, 1) - accept_prob(lr, 2)).abs();
    let s1 = spread(&result.levels[1]);
    let s5 = spread(&result.levels[5]);
    assert!(s5 < s1, "spread did not shrink: level 5 {s5} vs level 1 {s1}");

    let oracle = common::lemons::ladder(5, 0.2);
    for (level, policy) in oracle.iter().enumerate().skip(1) {
        let lr = &result.levels[level];
        assert!((accept_prob(lr, 1) - policy.acc[0]).abs() < 1e-9, "level {level} p=1");
        assert!((accept_prob(lr, 2) - policy.acc[1]).abs() < 1e-9, "level {level} p=2");
        assert!(
            (seller_high_price_prob(lr, "high") - policy.p2[1]).abs() < 1e-9,
            "level {level} seller"
        );
    }
    assert!((s1 - common::lemons::spread(&oracle[1])).abs() < 1e-9);
    assert!((s5 - common::lemons::spread(&oracle[5])).abs() < 1e-9);
    println!(
        "criterion 5 PASS: acceptance spread evens out, {s1:.10} at level 1 -> {s5:.10} \
         at level 5, matching the independent recursion within 1e-9"
    );
}

/// Criterion 6: softmax limit. For the level-1 buyer, the probability of the
/// argmax action is nondecreasing as noise falls through 1, 0.1, 0.01,
/// 0.001, and exceeds 0.999 at 0.001.
#[test]
fn criterion_6_softmax_limit() {
    let checked = bookseller();
    let base = lemons_beliefs(&checked);
    let g = build_game(&checked, &base).unwrap();
    // against the truthful level-0 seller the buyer's argmax is accept at
    // p=2 and reject at p=1
    let mut last_accept = 0.0;
    let mut last_reject = 0.0;
    let mut final_probs = (0.0, 0.0);
    for noise in [1.0, 0.1, 0.01, 0.001] {
        let beliefs = base.clone().with_overrides(Some(1), Some(noise)).unwrap();
        let result = solve_level_k(&g, &beliefs).unwrap();
        let top = result.top();
        let p_accept_at_2 = accept_prob(top, 2);
        let p_reject_at_1 = 1.0 - accept_prob(top, 1);
        assert!(
            p_accept_at_2 >= last_accept && p_reject_at_1 >= last_reject,
            "argmax probability decreased at noise {noise}"
        );
        last_accept = p_accept_at_2;
        last_reject = p_reject_at_1;
        final_probs = (p_accept_at_2, p_reject_at_1);
    }
    assert!(final_probs.0 > 0.999 && final_probs.1 > 0.999);
    println!(
        "criterion 6 PASS: argmax probability nondecreasing in 1/noise and {:.6}/{:.6} \
         at noise 0.001",
        final_probs.0, final_probs.1
    );
}

/// Criterion 7: simulation consistency. With level-1 policies and 10,000
/// seeded trials, each role's empirical mean utility lies within three
/// standard errors of the game expectation and no trace fails conformance.
/// Under 30 seconds.
#[test]
fn criterion_7_simulation_consistency() {
    let started = Instant::now();
    let checked = bookseller();
    let beliefs = lemons_beliefs(&checked).with_overrides(Some(1), None).unwrap();
    let g = build_game(&checked, &beliefs).unwrap();
    let pp = solve_level_k(&g, &beliefs).unwrap().top().policies.clone();
    let programs = project_all(&checked);
    let report = run_trials(
        &checked,
        &programs,
        &pp,
        &beliefs,
        10_000,
        20240817,
        Schedule::RoundRobin,
    )
    .unwrap();
    assert_eq!(report.conformance_failures, 0);
    let mut summary = String::new();
    for role in &checked.roles {
        let expected = expected_utility(&g, role, &pp).unwrap();
        let s = &report.stats[role];
        let dev = (s.mean - expected).abs();
        assert!(
            dev <= 3.0 * s.std_err,
            "{role}: empirical {:.5} vs expected {expected:.5} exceeds 3se {:.5}",
            s.mean,
            3.0 * s.std_err
        );
        summary.push_str(&format!(
            "{role} {:.4} vs {expected:.4} (3se {:.4}); ",
            s.mean,
            3.0 * s.std_err
        ));
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "criterion 7 PASS: 10000 trials, zero conformance failures, {summary}in {elapsed:?}"
    );
}

/// Criterion 8: normalization suite. Every distribution any module emits,
/// over the bundled market and a batch of random games, passes the shared
/// normalization assertion.
#[test]
fn criterion_8_normalization_suite() {
    let mut checked_dists = 0usize;

    let mut sweep = |checked: &CheckedProtocol, beliefs: &BeliefProfile| {
        for prior in beliefs.priors.values() {
            prior.assert_normalized();
            checked_dists += 1;
        }
        let g = build_game(checked, beliefs).unwrap();
        for role in &g.roles {
            let spec = beliefs
                .level0
                .get(role)
                .cloned()
                .unwrap_or(pact::game::Level0Spec::Uniform);
            for dist in level0_policy(&g, role, &spec).unwrap().values() {
                dist.assert_normalized();
                checked_dists += 1;
            }
        }
        let result: SolveResult = solve_level_k(&g, beliefs).unwrap();
        for lr in &result.levels {
            for sets in lr.policies.policies.values() {
                for dist in sets.values() {
                    dist.assert_normalized();
                    checked_dists += 1;
                }
            }
            for post in lr.posteriors.values() {
                post.assert_normalized();
                checked_dists += 1;
            }
            if !g.info_sets.is_empty() {
                let outcome = outcome_distribution(&g, &lr.policies).unwrap();
                outcome.assert_normalized();
                checked_dists += 1;
            }
        }
    };

    let checked = bookseller();
    let beliefs = lemons_beliefs(&checked);
    sweep(&checked, &beliefs);

    let cfg = GenConfig::default();
    for seed in 200..212u64 {
        let case = generate(seed, &cfg);
        let checked = check_well_formed(&case.protocol).expect("corpus checks");
        sweep(&checked, &case.beliefs);
    }
    assert!(checked_dists > 200, "only {checked_dists} distributions swept");
    println!(
        "criterion 8 PASS: {checked_dists} emitted distributions sum to 1 within 1e-9 \
         under the shared assertion"
    );
}

/// The per-info-set frequencies of a simulation report also normalize; kept
/// separate from criterion 8 because they are empirical ratios, not `Dist`s.
#[test]
fn simulation_frequencies_normalize() {
    let checked = bookseller();
    let beliefs = lemons_beliefs(&checked).with_overrides(Some(1), None).unwrap();
    let g = build_game(&checked, &beliefs).unwrap();
    let pp = solve_level_k(&g, &beliefs).unwrap().top().policies.clone();
    let programs = project_all(&checked);
    let report = run_trials(&checked, &programs, &pp, &beliefs, 500, 5, Schedule::RoundRobin)
        .unwrap();
    for freqs in report.frequencies.values() {
        let total: f64 = freqs.values().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

/// Hand-written three-role protocol through the whole pipeline: labeled
/// magnitudes in an expression guard, a compound exchange payment (which
/// desugars through a synthesized local), and exchanges on both branches.
#[test]
fn three_role_pipeline_with_magnitudes() {
    let src = "param gem : Gem @ miner\n\
               domain Grade = { raw = 10, cut = 40 }\n\
               domain Fees = { 1, 2 }\n\
               protocol appraisal {\n\
                 gem.grade <- world.choose(Grade)\n\
                 dealer.values(gem.grade)\n\
                 fee = courier.choose(Fees)\n\
                 send(fee, dealer)\n\
                 if broadcast(fee < 2) {\n\
                   exchange(dealer, miner, gem, fee + 1)\n\
                 } else {\n\
                   exchange(dealer, miner, gem, fee)\n\
                 }\n\
               }\n";
    let protocol = parse_protocol(src).unwrap();
    let checked = check_well_formed(&protocol).expect("checks cleanly");
    assert_eq!(checked.roles.len(), 3);
    let beliefs = BeliefProfile::from_json(
        r#"{"noise": 0.4, "level": 2,
            "priors": {"gem.grade": {"raw": 0.7, "cut": 0.3}},
            "utility_terms": {"dealer": {"gem.grade": {"weight": 0.1}}}}"#,
        &checked,
    )
    .unwrap();
    let g = build_game(&checked, &beliefs).unwrap();
    // one chance node, one courier decision, terminals for 2 grades x 2 fees
    assert_eq!(g.chance_count(), 1);
    assert_eq!(g.terminal_count(), 4);
    for (_, bindings, utility) in g.terminals() {
        let grade = bindings[&VarName::new("gem.grade")].magnitude().unwrap() as f64;
        let fee = bindings[&VarName::new("fee")].magnitude().unwrap() as f64;
        let paid = if fee < 2.0 { fee + 1.0 } else { fee };
        assert!((utility[&Role::new("dealer")] - (0.1 * grade - paid)).abs() < 1e-12);
        assert!((utility[&Role::new("miner")] - paid).abs() < 1e-12);
        assert_eq!(utility[&Role::new("courier")], 0.0);
    }
    // projections execute, conform, and agree with the choreography
    let programs = project_all(&checked);
    let outcomes = choreography_outcomes(&checked).unwrap();
    assert_eq!(outcomes.len(), 4);
    for (forced, expected) in &outcomes {
        let result = explore_interleavings(&checked, &programs, forced).unwrap();
        assert!(!result.deadlocked);
        assert_eq!(result.terminals.len(), 1);
        assert_eq!(result.terminals.iter().next().unwrap(), expected);
    }
    let pp = solve_level_k(&g, &beliefs).unwrap().top().policies.clone();
    let trace = pact::sim::run_once(&checked, &programs, &pp, &beliefs, 11, Schedule::RoundRobin)
        .unwrap();
    assert!(pact::sim::check_trace_conformance(&trace, &checked));
    // realized utilities match the matching game terminal
    let matching = g
        .terminals()
        .find(|(_, bind, _)| **bind == trace.bindings)
        .expect("terminal exists");
    assert_eq!(matching.2, &trace.utility);
}

/// Nature variables observed by nobody but named in a utility term still
/// bind at terminals (exercised through the full pipeline).
#[test]
fn pipeline_handles_unobserved_draws() {
    let src = "param tok : thing @ a\ndomain Q = { low, high }\nprotocol t {\n  x = b.choose(bool)\n  tok.q <- world.choose(Q)\n  a.values(tok.q)\n}\n";
    let p = parse_protocol(src).unwrap();
    let checked = check_well_formed(&p).unwrap();
    let beliefs = BeliefProfile::from_json(
        r#"{"noise": 0.3, "level": 1,
            "priors": {"tok.q": {"low": 0.5, "high": 0.5}},
            "utility_terms": {"a": {"tok.q": {"table": {"low": 0.0, "high": 2.0}}}}}"#,
        &checked,
    )
    .unwrap();
    let g = build_game(&checked, &beliefs).unwrap();
    let pp = solve_level_k(&g, &beliefs).unwrap().top().policies.clone();
    let programs = project_all(&checked);
    let trace = pact::sim::run_once(&checked, &programs, &pp, &beliefs, 3, Schedule::RoundRobin)
        .unwrap();
    assert!(trace.bindings.contains_key(&VarName::new("tok.q")));
    assert!(pact::sim::check_trace_conformance(&trace, &checked));
}
