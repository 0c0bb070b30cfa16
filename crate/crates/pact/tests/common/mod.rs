//! Shared test oracles, independent of the implementation paths they check.
//!
//! - [`lemons`] is a self-contained level-k recursion for the bundled
//!   two-quality/two-price market, written directly from the closed-form
//!   structure of that game with no reference to the game or solver modules.
//! - [`enumerate_posteriors`] is a brute-force joint-enumeration posterior:
//!   walk the protocol statements, enumerate every (nature, action) tuple
//!   with its prior/policy weight, filter by the observations of an
//!   information set, and normalize.

use std::collections::{BTreeMap, HashMap};

use pact::ast::{Guard, Role, Stmt, Value, VarName};
use pact::checker::{preorder, CheckedProtocol};
use pact::eval::eval_expr;
use pact::game::{BeliefProfile, InfoSetKey, PolicyProfile};

/// Hand-rolled level-k recursion for the bundled lemons market.
///
/// Game constants: Pr[high] = 0.6, prices {1, 2}, buyer values high at 3 and
/// low at 0, rejection pays (0, 0). Level-0 policies mirror the bundled
/// beliefs file: the buyer accepts proportional to price (1/2 at p=1, 1 at
/// p=2) and the naive seller model prices truthfully (low -> 1, high -> 2).
pub mod lemons {
    pub const P_HIGH: f64 = 0.6;
    pub const VALUE_HIGH: f64 = 3.0;
    pub const VALUE_LOW: f64 = 0.0;
    pub const PRICES: [f64; 2] = [1.0, 2.0];

    /// acc[i] = probability the buyer accepts at price index i;
    /// p2[q] = probability the seller asks the high price given quality q
    /// (0 = low, 1 = high).
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Policy {
        pub acc: [f64; 2],
        pub p2: [f64; 2],
    }

    fn softmax2(better: f64, worse: f64, tau: f64) -> f64 {
        // mass on `better` out of two options
        1.0 / (1.0 + ((worse - better) / tau).exp())
    }

    /// The level ladder `0..=levels` under softmax noise `tau`.
    pub fn ladder(levels: usize, tau: f64) -> Vec<Policy> {
        let mut out = vec![Policy {
            acc: [0.5, 1.0],          // accept proportional to price
            p2: [0.0, 1.0],           // truthful pricing
        }];
        for _ in 1..=levels {
            let prev = *out.last().unwrap();
            // buyer: posterior over quality from the previous seller policy
            let mut acc = [0.0; 2];
            for (i, price) in PRICES.iter().enumerate() {
                let w_high = P_HIGH * if i == 1 { prev.p2[1] } else { 1.0 - prev.p2[1] };
                let w_low = (1.0 - P_HIGH) * if i == 1 { prev.p2[0] } else { 1.0 - prev.p2[0] };
                let total = w_high + w_low;
                let p_high = if total > 0.0 { w_high / total } else { 0.5 };
                let eu_accept = p_high * VALUE_HIGH + (1.0 - p_high) * VALUE_LOW - price;
                acc[i] = softmax2(eu_accept, 0.0, tau);
            }
            // seller: expected revenue against the previous buyer policy,
            // identical at both quality information sets
            let eu_low_price = PRICES[0] * prev.acc[0];
            let eu_high_price = PRICES[1] * prev.acc[1];
            let p2 = softmax2(eu_high_price, eu_low_price, tau);
            out.push(Policy {
                acc,
                p2: [p2, p2],
            });
        }
        out
    }

    pub fn spread(p: &Policy) -> f64 {
        (p.acc[0] - p.acc[1]).abs()
    }
}

/// Unnormalized posterior weights per information set of `viewer`:
/// enumerate every joint assignment of nature draws and choices, weighting
/// by priors and the opponents' policies (the viewer's own moves weigh 1),
/// and record the upstream hidden assignment at the moment each viewer
/// decision point is reached.
pub fn enumerate_posteriors(
    checked: &CheckedProtocol,
    beliefs: &BeliefProfile,
    others: &PolicyProfile,
    viewer: &Role,
) -> BTreeMap<InfoSetKey, BTreeMap<BTreeMap<VarName, Value>, f64>> {
    let mut ids: HashMap<*const Stmt, usize> = HashMap::new();
    let mut flat = Vec::new();
    preorder(&checked.desugared.body, &mut flat);
    for (i, s) in flat.iter().enumerate() {
        ids.insert(*s as *const Stmt, i);
    }

    let mut acc: BTreeMap<InfoSetKey, BTreeMap<BTreeMap<VarName, Value>, f64>> = BTreeMap::new();
    let mut bindings: BTreeMap<VarName, Value> = BTreeMap::new();
    for param in &checked.desugared.params {
        bindings.insert(param.var.clone(), Value::Sym(param.var.name().to_string()));
    }
    walk(
        checked,
        beliefs,
        others,
        viewer,
        &ids,
        &[&checked.desugared.body],
        bindings,
        BTreeMap::new(),
        1.0,
        &mut acc,
    );
    acc
}

fn key_for(
    checked: &CheckedProtocol,
    ids: &HashMap<*const Stmt, usize>,
    stmt: &Stmt,
    role: &Role,
    var: &VarName,
    bindings: &BTreeMap<VarName, Value>,
) -> InfoSetKey {
    let id = ids[&(stmt as *const Stmt)];
    let info = &checked.choice_info[&id];
    InfoSetKey {
        role: role.clone(),
        var: var.clone(),
        obs: info
            .known
            .iter()
            .map(|v| (v.clone(), bindings[v].clone()))
            .collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn walk(
    checked: &CheckedProtocol,
    beliefs: &BeliefProfile,
    others: &PolicyProfile,
    viewer: &Role,
    ids: &HashMap<*const Stmt, usize>,
    blocks: &[&[Stmt]],
    bindings: BTreeMap<VarName, Value>,
    strategic: BTreeMap<VarName, Value>,
    weight: f64,
    acc: &mut BTreeMap<InfoSetKey, BTreeMap<BTreeMap<VarName, Value>, f64>>,
) {
    let (first, rest) = match blocks.split_first() {
        Some(x) => x,
        None => return,
    };
    let (stmt, tail) = match first.split_first() {
        Some(x) => x,
        None => {
            walk(
                checked, beliefs, others, viewer, ids, rest, bindings, strategic, weight, acc,
            );
            return;
        }
    };
    let mut with_tail: Vec<&[Stmt]> = vec![tail];
    with_tail.extend_from_slice(rest);

    let branch_choice =
        |role: &Role,
         var: &VarName,
         domain: &str,
         branches: Option<(&[Stmt], &[Stmt])>,
         bindings: &BTreeMap<VarName, Value>,
         strategic: &BTreeMap<VarName, Value>,
         acc: &mut BTreeMap<InfoSetKey, BTreeMap<BTreeMap<VarName, Value>, f64>>| {
            let key = key_for(checked, ids, stmt, role, var, bindings);
            if role == viewer {
                let hidden: BTreeMap<VarName, Value> = strategic
                    .iter()
                    .filter(|(v, _)| !key.obs.iter().any(|(ov, _)| ov == *v))
                    .map(|(v, val)| (v.clone(), val.clone()))
                    .collect();
                *acc.entry(key.clone()).or_default().entry(hidden).or_insert(0.0) += weight;
            }
            let values: Vec<Value> = checked
                .domain(domain)
                .expect("declared domain")
                .values
                .iter()
                .map(Value::from_literal)
                .collect();
            for v in values {
                let p = if role == viewer {
                    1.0
                } else {
                    others
                        .get(role, &key)
                        .map(|d| d.prob(&v))
                        .expect("opponent policy covers upstream sets")
                };
                if p == 0.0 {
                    continue;
                }
                let mut b = bindings.clone();
                let mut s = strategic.clone();
                b.insert(var.clone(), v.clone());
                s.insert(var.clone(), v.clone());
                let blocks2: Vec<&[Stmt]> = match branches {
                    None => with_tail.clone(),
                    Some((then_branch, else_branch)) => {
                        let taken = if v.as_bool().expect("boolean guard") {
                            then_branch
                        } else {
                            else_branch
                        };
                        let mut x: Vec<&[Stmt]> = vec![taken];
                        x.extend_from_slice(&with_tail);
                        x
                    }
                };
                walk(
                    checked,
                    beliefs,
                    others,
                    viewer,
                    ids,
                    &blocks2,
                    b,
                    s,
                    weight * p,
                    acc,
                );
            }
        };

    match stmt {
        Stmt::Choose {
            var,
            chooser,
            domain,
            ..
        } => branch_choice(chooser, var, domain, None, &bindings, &strategic, acc),
        Stmt::NatureChoose { var, domain, .. } => {
            let prior = &beliefs.priors[var];
            let values: Vec<Value> = checked
                .domain(domain)
                .expect("declared domain")
                .values
                .iter()
                .map(Value::from_literal)
                .collect();
            for v in values {
                let p = prior.prob(&v);
                if p == 0.0 {
                    continue;
                }
                let mut b = bindings.clone();
                let mut s = strategic.clone();
                b.insert(var.clone(), v.clone());
                s.insert(var.clone(), v.clone());
                walk(
                    checked, beliefs, others, viewer, ids, &with_tail, b, s,
                    weight * p, acc,
                );
            }
        }
        Stmt::If {
            guard,
            guard_var,
            then_branch,
            else_branch,
            ..
        } => match guard {
            Guard::Choice {
                var,
                chooser,
                domain,
            } => branch_choice(
                chooser,
                var,
                domain,
                Some((then_branch, else_branch)),
                &bindings,
                &strategic,
                acc,
            ),
            Guard::Expr(e) => {
                let v = eval_expr(e, &bindings).expect("guard evaluates");
                let b = v.as_bool().expect("boolean guard");
                let mut bind = bindings.clone();
                bind.insert(guard_var.clone(), v);
                let mut blocks2: Vec<&[Stmt]> =
                    vec![if b { then_branch } else { else_branch }];
                blocks2.extend_from_slice(&with_tail);
                walk(
                    checked, beliefs, others, viewer, ids, &blocks2, bind, strategic,
                    weight, acc,
                );
            }
        },
        Stmt::Local { var, expr, .. } => {
            let v = eval_expr(expr, &bindings).expect("local evaluates");
            let mut b = bindings;
            b.insert(var.clone(), v);
            walk(
                checked, beliefs, others, viewer, ids, &with_tail, b, strategic, weight, acc,
            );
        }
        _ => walk(
            checked, beliefs, others, viewer, ids, &with_tail, bindings, strategic, weight, acc,
        ),
    }
}

/// Asserts that the solver's posteriors at every reachable information set
/// match the enumeration oracle within `tol`. Returns how many sets were
/// compared.
pub fn assert_posteriors_match_oracle(
    checked: &CheckedProtocol,
    beliefs: &BeliefProfile,
    result: &pact::solver::SolveResult,
    tol: f64,
) -> usize {
    let mut compared = 0usize;
    for (idx, lr) in result.levels.iter().enumerate() {
        // level l responds to level l-1 opponents; level 0's posteriors are
        // taken against the level-0 profile itself
        let opponents_level = idx.saturating_sub(1);
        let base = &result.levels[opponents_level].policies;
        for (role, sets) in &lr.policies.policies {
            let others = base.without(role);
            let oracle = enumerate_posteriors(checked, beliefs, &others, role);
            for key in sets.keys() {
                if lr.unreachable.contains(key) {
                    continue;
                }
                let weights = oracle
                    .get(key)
                    .unwrap_or_else(|| panic!("oracle never reached {key}"));
                let total: f64 = weights.values().sum();
                assert!(total > 0.0, "oracle mass vanished at reachable {key}");
                let solver_post = &lr.posteriors[key];
                // identical supports
                for (assignment, w) in weights {
                    let expected = w / total;
                    let got = solver_post.prob(assignment);
                    assert!(
                        (got - expected).abs() <= tol,
                        "level {idx} {key}: posterior of {assignment:?} is {got}, oracle says {expected}"
                    );
                }
                let support: f64 = weights
                    .keys()
                    .map(|assignment| solver_post.prob(assignment))
                    .sum();
                assert!(
                    (support - 1.0).abs() <= tol,
                    "level {idx} {key}: solver posterior has mass outside the oracle support"
                );
                compared += 1;
            }
        }
    }
    compared
}
