//! Bounded-rational level-k policy solving by exact enumeration.
//!
//! A level-ℓ role softmax-best-responds to the level-(ℓ-1) policies of the
//! others: at each of its information sets it forms a Bayesian posterior
//! over the hidden nature draws and unobserved choices consistent with what
//! it knows, evaluates each action's expected utility under that posterior
//! and the opponents' downstream behavior, and mixes actions proportionally
//! to `exp(EU / noise)`. Levels advance in lockstep for every role, bottoming
//! out at the belief profile's level-0 policies.
//!
//! Everything is computed by full tree enumeration with deterministic
//! (sorted) iteration; no sampling is involved, so identical inputs produce
//! bit-identical results.
//!
//! Posterior weights condition on the deciding role's own past play: paths
//! are weighted by chance priors and opponents' policy probabilities only.
//! An information set that is unreachable under the opponents' policies
//! gets a uniform posterior over its consistent assignments and is flagged
//! in the result's diagnostics.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ast::{Role, Value, VarName};
use crate::dist::Dist;
use crate::eval::Bindings;
use crate::game::{
    BeliefProfile, GameTree, InfoSetKey, Level0Spec, Node, NodeId, PolicyError, PolicyProfile,
    ProfileError,
};

/// A joint assignment of hidden strategic variables (nature draws and
/// unobserved choices) consistent with an information set.
pub type Assignment = BTreeMap<VarName, Value>;

/// Posteriors per information set.
pub type Posteriors = BTreeMap<InfoSetKey, Dist<Assignment>>;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Policies and posteriors at one reasoning depth.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub level: u32,
    pub policies: PolicyProfile,
    pub posteriors: Posteriors,
    /// Information sets with zero reach probability under the opponents'
    /// previous-level policies (posterior fell back to uniform).
    pub unreachable: Vec<InfoSetKey>,
}

/// The full ladder of levels `0..=level`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub levels: Vec<LevelResult>,
}

impl SolveResult {
    /// The highest (requested) level.
    pub fn top(&self) -> &LevelResult {
        self.levels.last().expect("at least level 0")
    }

    /// Tab-separated policy table: level, role, information set, action,
    /// probability.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("level\trole\tinfo_set\taction\tprobability\n");
        for lr in &self.levels {
            for (role, sets) in &lr.policies.policies {
                for (key, dist) in sets {
                    for (action, p) in dist.iter() {
                        out.push_str(&format!(
                            "{}\t{}\t{}{{{}}}\t{}\t{:.6}\n",
                            lr.level,
                            role,
                            key.var,
                            key.obs_text(),
                            action,
                            p
                        ));
                    }
                }
            }
        }
        out
    }

    /// Structured export consumed by `simulate --policies`.
    pub fn to_json(&self) -> serde_json::Value {
        let levels: Vec<serde_json::Value> = self
            .levels
            .iter()
            .map(|lr| {
                serde_json::json!({
                    "level": lr.level,
                    "policies": policies_to_raw(&lr.policies),
                    "posteriors": lr.posteriors.iter().map(|(k, d)| {
                        serde_json::json!({
                            "role": k.role.name(),
                            "var": k.var.name(),
                            "obs": k.obs,
                            "dist": d.iter().map(|(a, p)| {
                                serde_json::json!({"assignment": a, "p": p})
                            }).collect::<Vec<_>>(),
                        })
                    }).collect::<Vec<_>>(),
                    "unreachable": lr.unreachable.iter().map(|k| k.to_string()).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({ "levels": levels })
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RawPolicyEntry {
    role: String,
    var: String,
    obs: Vec<(VarName, Value)>,
    dist: Vec<(Value, f64)>,
}

fn policies_to_raw(pp: &PolicyProfile) -> Vec<RawPolicyEntry> {
    let mut out = Vec::new();
    for (role, sets) in &pp.policies {
        for (key, dist) in sets {
            out.push(RawPolicyEntry {
                role: role.name().to_string(),
                var: key.var.name().to_string(),
                obs: key.obs.clone(),
                dist: dist.iter().map(|(v, p)| (v.clone(), p)).collect(),
            });
        }
    }
    out
}

/// Reads back a policy profile exported by [`SolveResult::to_json`]. When
/// the document carries several levels, the top level is used.
pub fn policies_from_json(value: &serde_json::Value) -> Result<PolicyProfile, String> {
    let levels = value
        .get("levels")
        .and_then(|l| l.as_array())
        .ok_or("missing `levels` array")?;
    let top = levels.last().ok_or("empty `levels` array")?;
    let raw: Vec<RawPolicyEntry> =
        serde_json::from_value(top.get("policies").cloned().ok_or("missing `policies`")?)
            .map_err(|e| e.to_string())?;
    let mut pp = PolicyProfile::new();
    for entry in raw {
        let key = InfoSetKey {
            role: Role::new(entry.role),
            var: VarName::new(entry.var),
            obs: entry.obs,
        };
        let dist = Dist::new(entry.dist.into_iter().collect()).map_err(|e| e.to_string())?;
        pp.insert(key, dist);
    }
    Ok(pp)
}

/// Level-0 policy for one role from its specification: `uniform` puts equal
/// mass on every action at every information set; an explicit table matches
/// rows against the set's bindings (first match wins) and normalizes.
pub fn level0_policy(
    g: &GameTree,
    role: &Role,
    spec: &Level0Spec,
) -> Result<RolePolicy, ProfileError> {
    let mut out = BTreeMap::new();
    for key in g.info_sets_of(role) {
        let actions = g.actions[&key.var].clone();
        let dist = match spec {
            Level0Spec::Uniform => Dist::uniform(actions).expect("non-empty domain"),
            Level0Spec::Table { var, rows } if var == &key.var => {
                let row = rows
                    .iter()
                    .find(|r| r.when.iter().all(|(v, val)| {
                        key.obs.iter().any(|(ov, oval)| ov == v && oval == val)
                    }))
                    .ok_or_else(|| ProfileError::Level0IncompleteTable {
                        role: role.clone(),
                        key: key.to_string(),
                    })?;
                let weights: BTreeMap<Value, f64> = actions
                    .iter()
                    .map(|a| (a.clone(), row.dist.get(a).copied().unwrap_or(0.0)))
                    .collect();
                Dist::normalized(weights).map_err(|_| ProfileError::Level0EmptyRow {
                    role: role.clone(),
                    key: key.to_string(),
                })?
            }
            Level0Spec::Table { .. } => Dist::uniform(actions).expect("non-empty domain"),
        };
        out.insert(key.clone(), dist);
    }
    Ok(out)
}

/// Reach statistics for every node: probability weight (chance priors times
/// opponents' policies, the viewer's own decisions weighted 1) and the
/// strategic bindings accumulated on the path.
fn node_stats(
    g: &GameTree,
    viewer: &Role,
    opponents: &PolicyProfile,
) -> Result<Vec<(f64, Bindings)>, PolicyError> {
    let mut out = vec![(0.0, Bindings::new()); g.nodes.len()];
    fn walk(
        g: &GameTree,
        id: NodeId,
        weight: f64,
        bindings: &Bindings,
        viewer: &Role,
        opponents: &PolicyProfile,
        out: &mut Vec<(f64, Bindings)>,
    ) -> Result<(), PolicyError> {
        out[id] = (weight, bindings.clone());
        match g.node(id) {
            Node::Terminal { .. } => Ok(()),
            Node::Chance { var, dist, children } => {
                for (v, child) in children {
                    let mut b = bindings.clone();
                    b.insert(var.clone(), v.clone());
                    walk(g, *child, weight * dist.prob(v), &b, viewer, opponents, out)?;
                }
                Ok(())
            }
            Node::Decision {
                role,
                var,
                key,
                children,
            } => {
                let dist = if role == viewer {
                    None
                } else {
                    Some(
                        opponents
                            .get(role, key)
                            .ok_or_else(|| PolicyError::MissingInfoSet(key.to_string()))?,
                    )
                };
                for (v, child) in children {
                    let p = dist.map(|d| d.prob(v)).unwrap_or(1.0);
                    let mut b = bindings.clone();
                    b.insert(var.clone(), v.clone());
                    walk(g, *child, weight * p, &b, viewer, opponents, out)?;
                }
                Ok(())
            }
        }
    }
    walk(g, g.root, 1.0, &Bindings::new(), viewer, opponents, &mut out)?;
    Ok(out)
}

/// Hidden part of a node's strategic bindings: everything not pinned down by
/// the information set's observations.
fn hidden_assignment(bindings: &Bindings, key: &InfoSetKey) -> Assignment {
    bindings
        .iter()
        .filter(|(v, _)| !key.obs.iter().any(|(ov, _)| ov == *v))
        .map(|(v, val)| (v.clone(), val.clone()))
        .collect()
}

/// Bayesian posterior over hidden assignments at an information set, given
/// the opponents' policies upstream. Unreachable sets (zero total mass)
/// yield a uniform posterior over consistent assignments; the second
/// component reports that fallback.
pub fn posterior(
    g: &GameTree,
    key: &InfoSetKey,
    opponents: &PolicyProfile,
) -> Result<(Dist<Assignment>, bool), PolicyError> {
    let stats = node_stats(g, &key.role, opponents)?;
    let nodes = g
        .info_sets
        .get(key)
        .ok_or_else(|| PolicyError::MissingInfoSet(key.to_string()))?;
    posterior_from_stats(&stats, nodes, key)
}

fn posterior_from_stats(
    stats: &[(f64, Bindings)],
    nodes: &[NodeId],
    key: &InfoSetKey,
) -> Result<(Dist<Assignment>, bool), PolicyError> {
    let mut weights: BTreeMap<Assignment, f64> = BTreeMap::new();
    for id in nodes {
        let (w, bindings) = &stats[*id];
        *weights.entry(hidden_assignment(bindings, key)).or_insert(0.0) += w;
    }
    let total: f64 = weights.values().sum();
    if total > 0.0 {
        Ok((Dist::normalized(weights).expect("positive mass"), false))
    } else {
        let keys: Vec<Assignment> = weights.into_keys().collect();
        Ok((Dist::uniform(keys).expect("non-empty info set"), true))
    }
}

/// One role's policy map over its information sets.
pub type RolePolicy = BTreeMap<InfoSetKey, Dist<Value>>;

/// Softmax best response of one role against fixed opponent policies.
///
/// The role's information sets are processed deepest-first so that its own
/// later decisions (already softmax-solved at this level) are in place when
/// earlier ones are evaluated: backward induction within the level.
pub fn softmax_response(
    g: &GameTree,
    role: &Role,
    opponents: &PolicyProfile,
    noise: f64,
) -> Result<(RolePolicy, Posteriors, Vec<InfoSetKey>), PolicyError> {
    assert!(noise > 0.0, "softmax noise must be positive");
    let stats = node_stats(g, role, opponents)?;
    let depths = node_depths(g);

    let mut sets: Vec<(&InfoSetKey, &Vec<NodeId>)> = g
        .info_sets
        .iter()
        .filter(|(k, _)| &k.role == role)
        .collect();
    sets.sort_by_key(|(k, nodes)| {
        let d = nodes.iter().map(|n| depths[*n]).max().unwrap_or(0);
        (std::cmp::Reverse(d), (*k).clone())
    });

    let mut own: RolePolicy = BTreeMap::new();
    let mut posteriors: Posteriors = BTreeMap::new();
    let mut unreachable: Vec<InfoSetKey> = Vec::new();
    let mut memo: Vec<Option<f64>> = vec![None; g.nodes.len()];

    for (key, nodes) in sets {
        let (post, fell_back) = posterior_from_stats(&stats, nodes, key)?;
        if fell_back {
            unreachable.push(key.clone());
        }
        // per-node conditional weights within the set
        let raw: Vec<f64> = nodes.iter().map(|n| stats[*n].0).collect();
        let total: f64 = raw.iter().sum();
        let node_weights: Vec<f64> = if total > 0.0 {
            raw.iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / nodes.len() as f64; nodes.len()]
        };

        let actions = g.actions[&key.var].clone();
        let mut eus: Vec<(Value, f64)> = Vec::new();
        for action in &actions {
            let mut eu = 0.0;
            for (n, w) in nodes.iter().zip(node_weights.iter()) {
                let child = match g.node(*n) {
                    Node::Decision { children, .. } => children
                        .iter()
                        .find(|(v, _)| v == action)
                        .map(|(_, c)| *c)
                        .expect("action in domain"),
                    _ => unreachable!("info set member is a decision"),
                };
                eu += w * continuation_value(g, child, role, opponents, &own, &mut memo)?;
            }
            eus.push((action.clone(), eu));
        }
        own.insert(key.clone(), softmax(&eus, noise));
        posteriors.insert(key.clone(), post);
    }
    Ok((own, posteriors, unreachable))
}

fn node_depths(g: &GameTree) -> Vec<usize> {
    let mut out = vec![0usize; g.nodes.len()];
    fn walk(g: &GameTree, id: NodeId, d: usize, out: &mut Vec<usize>) {
        out[id] = d;
        match g.node(id) {
            Node::Terminal { .. } => {}
            Node::Chance { children, .. } | Node::Decision { children, .. } => {
                for (_, c) in children {
                    walk(g, *c, d + 1, out);
                }
            }
        }
    }
    walk(g, g.root, 0, &mut out);
    out
}

/// Expected utility of `role` from a node onward, under the opponents'
/// policies and the role's own already-solved deeper responses.
fn continuation_value(
    g: &GameTree,
    id: NodeId,
    role: &Role,
    opponents: &PolicyProfile,
    own: &BTreeMap<InfoSetKey, Dist<Value>>,
    memo: &mut Vec<Option<f64>>,
) -> Result<f64, PolicyError> {
    if let Some(v) = memo[id] {
        return Ok(v);
    }
    let value = match g.node(id) {
        Node::Terminal { utility, .. } => utility.get(role).copied().unwrap_or(0.0),
        Node::Chance { dist, children, .. } => {
            let mut acc = 0.0;
            for (v, child) in children {
                let p = dist.prob(v);
                if p > 0.0 {
                    acc += p * continuation_value(g, *child, role, opponents, own, memo)?;
                }
            }
            acc
        }
        Node::Decision {
            role: decider,
            key,
            children,
            ..
        } => {
            let dist = if decider == role {
                own.get(key).ok_or_else(|| {
                    PolicyError::MissingInfoSet(format!("{key} (own, not yet solved)"))
                })?
            } else {
                opponents
                    .get(decider, key)
                    .ok_or_else(|| PolicyError::MissingInfoSet(key.to_string()))?
            };
            let mut acc = 0.0;
            for (v, child) in children {
                let p = dist.prob(v);
                if p > 0.0 {
                    acc += p * continuation_value(g, *child, role, opponents, own, memo)?;
                }
            }
            acc
        }
    };
    memo[id] = Some(value);
    Ok(value)
}

fn softmax(eus: &[(Value, f64)], noise: f64) -> Dist<Value> {
    let max = eus.iter().map(|(_, e)| *e).fold(f64::MIN, f64::max);
    let weights: BTreeMap<Value, f64> = eus
        .iter()
        .map(|(v, e)| (v.clone(), ((e - max) / noise).exp()))
        .collect();
    Dist::normalized(weights).expect("softmax weights are positive")
}

/// Solves the level ladder `0..=beliefs.level` with all roles advancing in
/// lockstep: `policies[l][r]` responds to `policies[l-1]` of the others.
pub fn solve_level_k(g: &GameTree, beliefs: &BeliefProfile) -> Result<SolveResult, SolveError> {
    if beliefs.noise <= 0.0 {
        return Err(ProfileError::NonPositiveNoise(beliefs.noise).into());
    }
    let mut levels: Vec<LevelResult> = Vec::new();

    // level 0 straight from the profile
    let mut base = PolicyProfile::new();
    for role in &g.roles {
        let spec = beliefs
            .level0
            .get(role)
            .cloned()
            .unwrap_or(Level0Spec::Uniform);
        for (key, dist) in level0_policy(g, role, &spec)? {
            base.insert(key, dist);
        }
    }
    let mut posteriors0: Posteriors = BTreeMap::new();
    let mut unreachable0 = Vec::new();
    for role in &g.roles {
        let opponents = base.without(role);
        for key in g.info_sets_of(role) {
            let (post, fell_back) = posterior(g, key, &opponents)?;
            if fell_back {
                unreachable0.push(key.clone());
            }
            posteriors0.insert(key.clone(), post);
        }
    }
    levels.push(LevelResult {
        level: 0,
        policies: base,
        posteriors: posteriors0,
        unreachable: unreachable0,
    });

    for level in 1..=beliefs.level {
        let prev = &levels.last().expect("previous level").policies;
        let mut policies = PolicyProfile::new();
        let mut posteriors: Posteriors = BTreeMap::new();
        let mut unreachable = Vec::new();
        for role in &g.roles {
            let opponents = prev.without(role);
            let (own, post, unreach) = softmax_response(g, role, &opponents, beliefs.noise)?;
            for (key, dist) in own {
                policies.insert(key, dist);
            }
            posteriors.extend(post);
            unreachable.extend(unreach);
        }
        unreachable.sort();
        levels.push(LevelResult {
            level,
            policies,
            posteriors,
            unreachable,
        });
    }
    Ok(SolveResult { levels })
}
