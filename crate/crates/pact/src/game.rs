//! Extensive-form game extraction.
//!
//! A checked protocol plus a belief profile denotes a finite game tree:
//! nature draws become chance nodes carrying the analyst's priors, agent
//! choices become decision nodes grouped into information sets by the
//! deciding role's known bindings, and every maximal path ends in a terminal
//! carrying the full variable bindings and one utility per role.
//!
//! Utilities compose as money delta plus the declared value terms. A value
//! term contributes at a terminal only when the valuing role has learned
//! every variable the term mentions (or its root) on that path: a buyer that
//! never receives the good gains nothing from its quality, which is what
//! makes the rejection outcome the zero status quo.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::ast::{Expr, Guard, Protocol, Role, SourceSpan, Stmt, Value, VarName};
use crate::checker::{preorder, CheckedProtocol, StmtId};
use crate::dist::{Dist, DistError};
use crate::eval::{eval_expr, Bindings, EvalError};
use crate::parser::render_expr;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("invalid beliefs file: {0}")]
    Json(String),
    #[error("no prior given for nature variable `{0}`")]
    MissingPrior(VarName),
    #[error("prior for `{var}` names `{value}`, which is not in its domain")]
    PriorValueOutsideDomain { var: VarName, value: String },
    #[error("prior for `{var}` sums to {sum}, expected 1")]
    PriorNotNormalized { var: VarName, sum: f64 },
    #[error("prior given for `{0}`, which is not a nature variable")]
    UnknownPriorVar(VarName),
    #[error("no utility term function for role `{role}`, term `{term}`")]
    MissingTerm { role: Role, term: String },
    #[error("utility term `{term}` of role `{role}` does not appear in the protocol")]
    UnknownTerm { role: Role, term: String },
    #[error("utility table for role `{role}`, term `{term}` has no entry for `{value}`")]
    TermValueMissing {
        role: Role,
        term: String,
        value: String,
    },
    #[error("utility term `{term}` of role `{role}` evaluated to `{value}`, which has no magnitude")]
    TermNotNumeric {
        role: Role,
        term: String,
        value: String,
    },
    #[error("noise must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("level-0 entry names role `{0}`, which does not participate")]
    UnknownLevel0Role(Role),
    #[error("level-0 table for role `{role}` names `{var}`, which is not one of its choice variables")]
    UnknownLevel0Var { role: Role, var: VarName },
    #[error("level-0 value `{value}` is not in the domain of `{var}`")]
    Level0ValueOutsideDomain { var: VarName, value: String },
    #[error("level-0 table for role `{role}` covers no actions at `{key}`")]
    Level0EmptyRow { role: Role, key: String },
    #[error("level-0 table for role `{role}` has no row matching information set `{key}`")]
    Level0IncompleteTable { role: Role, key: String },
    #[error("level-0 `when` clause names unknown variable `{0}`")]
    UnknownWhenVar(VarName),
}

/// Functional form of a declared value term, supplied by the analyst.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum TermFn {
    /// Utility per realized term value.
    Table(BTreeMap<Value, f64>),
    /// Linear in the term value's magnitude.
    Weight(f64),
}

/// One row of an explicit level-0 policy table: applies at every
/// information set whose bindings extend `when`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Level0Row {
    pub when: BTreeMap<VarName, Value>,
    pub dist: BTreeMap<Value, f64>,
}

/// Per-role level-0 policy specification.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum Level0Spec {
    Uniform,
    Table { var: VarName, rows: Vec<Level0Row> },
}

/// An analyst's injected assumptions: priors over nature, the functional
/// form behind every declared value term, the reasoning depth and softmax
/// noise, and level-0 policies to bottom out at.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefProfile {
    pub priors: BTreeMap<VarName, Dist<Value>>,
    pub utility_terms: BTreeMap<Role, BTreeMap<String, TermFn>>,
    pub level: u32,
    pub noise: f64,
    pub level0: BTreeMap<Role, Level0Spec>,
}

impl BeliefProfile {
    /// Loads and validates a beliefs JSON document against a protocol.
    pub fn from_json(text: &str, checked: &CheckedProtocol) -> Result<Self, ProfileError> {
        let raw: RawBeliefs =
            serde_json::from_str(text).map_err(|e| ProfileError::Json(e.to_string()))?;
        Self::resolve(raw, checked)
    }

    /// Applies command-line overrides; `noise` is validated here as well.
    pub fn with_overrides(mut self, level: Option<u32>, noise: Option<f64>) -> Result<Self, ProfileError> {
        if let Some(l) = level {
            self.level = l;
        }
        if let Some(t) = noise {
            self.noise = t;
        }
        if self.noise <= 0.0 {
            return Err(ProfileError::NonPositiveNoise(self.noise));
        }
        Ok(self)
    }

    fn resolve(raw: RawBeliefs, checked: &CheckedProtocol) -> Result<Self, ProfileError> {
        if raw.noise <= 0.0 {
            return Err(ProfileError::NonPositiveNoise(raw.noise));
        }
        let nature = nature_vars(&checked.desugared);

        let mut priors = BTreeMap::new();
        for (var_text, table) in raw.priors {
            let var = VarName::new(var_text);
            let domain_name = match nature.get(&var) {
                Some(d) => d.clone(),
                None => return Err(ProfileError::UnknownPriorVar(var)),
            };
            let domain = checked
                .domain(&domain_name)
                .ok_or_else(|| ProfileError::UnknownPriorVar(var.clone()))?;
            let mut weights: BTreeMap<Value, f64> = domain
                .values
                .iter()
                .map(|l| (Value::from_literal(l), 0.0))
                .collect();
            for (value_text, p) in table {
                let value = parse_domain_value(&domain, &value_text).ok_or_else(|| {
                    ProfileError::PriorValueOutsideDomain {
                        var: var.clone(),
                        value: value_text.clone(),
                    }
                })?;
                weights.insert(value, p);
            }
            let dist = Dist::new(weights).map_err(|e| match e {
                DistError::NotNormalized { sum } => ProfileError::PriorNotNormalized {
                    var: var.clone(),
                    sum,
                },
                other => ProfileError::Json(other.to_string()),
            })?;
            priors.insert(var, dist);
        }
        for var in nature.keys() {
            if !priors.contains_key(var) {
                return Err(ProfileError::MissingPrior(var.clone()));
            }
        }

        // declared terms, keyed by canonical rendering
        let declared = declared_terms(&checked.desugared);
        let mut utility_terms: BTreeMap<Role, BTreeMap<String, TermFn>> = BTreeMap::new();
        for (role_text, terms) in raw.utility_terms {
            let role = Role::new(role_text);
            for (term_text, raw_fn) in terms {
                if !declared
                    .iter()
                    .any(|(r, t)| *r == role && *t == term_text)
                {
                    return Err(ProfileError::UnknownTerm {
                        role,
                        term: term_text,
                    });
                }
                let f = match raw_fn {
                    RawTermFn::Table { table } => {
                        let mut parsed = BTreeMap::new();
                        for (value_text, u) in table {
                            let value = parse_value_anywhere(checked, &value_text);
                            parsed.insert(value, u);
                        }
                        TermFn::Table(parsed)
                    }
                    RawTermFn::Weight { weight } => TermFn::Weight(weight),
                };
                utility_terms
                    .entry(role.clone())
                    .or_default()
                    .insert(term_text, f);
            }
        }
        for (role, term) in &declared {
            let present = utility_terms
                .get(role)
                .map(|m| m.contains_key(term))
                .unwrap_or(false);
            if !present {
                return Err(ProfileError::MissingTerm {
                    role: role.clone(),
                    term: term.clone(),
                });
            }
        }

        // level-0 policies
        let choice_domains = choice_var_domains(checked);
        let mut level0 = BTreeMap::new();
        for (role_text, spec) in raw.level0 {
            let role = Role::new(role_text);
            if !checked.roles.contains(&role) {
                return Err(ProfileError::UnknownLevel0Role(role));
            }
            let resolved = match spec {
                RawLevel0::Keyword(ref k) if k == "uniform" => Level0Spec::Uniform,
                RawLevel0::Keyword(k) => {
                    return Err(ProfileError::Json(format!(
                        "level-0 spec must be \"uniform\" or a table, got \"{k}\""
                    )))
                }
                RawLevel0::Table { var, rows } => {
                    let var = VarName::new(var);
                    let domain_name = match choice_domains.get(&(role.clone(), var.clone())) {
                        Some(d) => d.clone(),
                        None => {
                            return Err(ProfileError::UnknownLevel0Var { role, var });
                        }
                    };
                    let domain = checked.domain(&domain_name).expect("checked domain");
                    let mut parsed_rows = Vec::new();
                    for row in rows {
                        let mut when = BTreeMap::new();
                        for (var_text, value_text) in row.when {
                            let wvar = VarName::new(var_text);
                            let value = parse_value_for_var(checked, &wvar, &value_text)
                                .ok_or_else(|| ProfileError::UnknownWhenVar(wvar.clone()))?;
                            when.insert(wvar, value);
                        }
                        let mut dist = BTreeMap::new();
                        for (value_text, p) in row.dist {
                            let value =
                                parse_domain_value(&domain, &value_text).ok_or_else(|| {
                                    ProfileError::Level0ValueOutsideDomain {
                                        var: var.clone(),
                                        value: value_text.clone(),
                                    }
                                })?;
                            dist.insert(value, p);
                        }
                        parsed_rows.push(Level0Row { when, dist });
                    }
                    Level0Spec::Table {
                        var,
                        rows: parsed_rows,
                    }
                }
            };
            level0.insert(role, resolved);
        }

        Ok(BeliefProfile {
            priors,
            utility_terms,
            level: raw.level,
            noise: raw.noise,
            level0,
        })
    }
}

#[derive(serde::Deserialize)]
struct RawBeliefs {
    #[serde(default)]
    priors: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    utility_terms: BTreeMap<String, BTreeMap<String, RawTermFn>>,
    #[serde(default)]
    level: u32,
    noise: f64,
    #[serde(default)]
    level0: BTreeMap<String, RawLevel0>,
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum RawTermFn {
    Table { table: BTreeMap<String, f64> },
    Weight { weight: f64 },
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum RawLevel0 {
    Keyword(String),
    Table {
        var: String,
        rows: Vec<RawLevel0Row>,
    },
}

#[derive(serde::Deserialize)]
struct RawLevel0Row {
    #[serde(default)]
    when: BTreeMap<String, String>,
    dist: BTreeMap<String, f64>,
}

/// Nature variables of a desugared protocol, with their domain names.
pub fn nature_vars(p: &Protocol) -> BTreeMap<VarName, String> {
    let mut flat = Vec::new();
    preorder(&p.body, &mut flat);
    flat.iter()
        .filter_map(|s| match s {
            Stmt::NatureChoose { var, domain, .. } => Some((var.clone(), domain.clone())),
            _ => None,
        })
        .collect()
}

/// Declared `(role, rendered term)` pairs, in order of appearance.
pub fn declared_terms(p: &Protocol) -> Vec<(Role, String)> {
    let mut flat = Vec::new();
    preorder(&p.body, &mut flat);
    flat.iter()
        .filter_map(|s| match s {
            Stmt::Values { role, term, .. } => Some((role.clone(), render_expr(term))),
            _ => None,
        })
        .collect()
}

fn choice_var_domains(checked: &CheckedProtocol) -> BTreeMap<(Role, VarName), String> {
    checked
        .choice_info
        .values()
        .map(|i| ((i.role.clone(), i.var.clone()), i.domain.clone()))
        .collect()
}

fn parse_domain_value(domain: &crate::ast::Domain, text: &str) -> Option<Value> {
    domain
        .values
        .iter()
        .find(|l| l.text() == text)
        .map(Value::from_literal)
}

/// Parses a value string against the domain of a specific variable; opaque
/// parameters accept their symbolic token.
fn parse_value_for_var(checked: &CheckedProtocol, var: &VarName, text: &str) -> Option<Value> {
    match checked.var_types.get(var)? {
        crate::checker::VarType::Domain(d) => {
            parse_domain_value(&checked.domain(d)?, text)
        }
        crate::checker::VarType::Opaque(_) => Some(Value::Sym(var.name().to_string())),
        crate::checker::VarType::Derived => {
            // derived values are integers or booleans
            if let Ok(n) = text.parse::<i64>() {
                Some(Value::Int(n))
            } else if let Ok(b) = text.parse::<bool>() {
                Some(Value::Bool(b))
            } else {
                None
            }
        }
    }
}

/// Best-effort value parse when the target domain is unknown (utility
/// tables over arbitrary term expressions).
fn parse_value_anywhere(checked: &CheckedProtocol, text: &str) -> Value {
    if let Ok(n) = text.parse::<i64>() {
        return Value::Int(n);
    }
    if let Ok(b) = text.parse::<bool>() {
        return Value::Bool(b);
    }
    for d in &checked.desugared.domains {
        if let Some(v) = parse_domain_value(d, text) {
            return v;
        }
    }
    Value::Label {
        name: text.to_string(),
        magnitude: None,
    }
}

/// Identifier of an information set: the deciding role, its decision
/// variable, and the bindings of everything the role knows at that point,
/// in introduction order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
pub struct InfoSetKey {
    pub role: Role,
    pub var: VarName,
    pub obs: Vec<(VarName, Value)>,
}

impl fmt::Display for InfoSetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.role, self.var)?;
        write!(f, "{{")?;
        for (i, (v, val)) in self.obs.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}={val}")?;
        }
        write!(f, "}}")
    }
}

impl InfoSetKey {
    /// Bindings string without role/var, for tabular output.
    pub fn obs_text(&self) -> String {
        if self.obs.is_empty() {
            return "-".to_string();
        }
        self.obs
            .iter()
            .map(|(v, val)| format!("{v}={val}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Chance {
        var: VarName,
        dist: Dist<Value>,
        children: Vec<(Value, NodeId)>,
    },
    Decision {
        role: Role,
        var: VarName,
        key: InfoSetKey,
        children: Vec<(Value, NodeId)>,
    },
    Terminal {
        bindings: Bindings,
        utility: BTreeMap<Role, f64>,
    },
}

/// The extensive-form game denoted by a checked protocol and a belief
/// profile. Immutable once built.
#[derive(Debug, Clone)]
pub struct GameTree {
    pub nodes: Vec<Node>,
    pub root: NodeId,
    /// Participating roles (no `world`).
    pub roles: Vec<Role>,
    pub info_sets: BTreeMap<InfoSetKey, Vec<NodeId>>,
    /// Action values available at each decision variable, in domain order.
    pub actions: BTreeMap<VarName, Vec<Value>>,
}

impl GameTree {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn terminals(&self) -> impl Iterator<Item = (NodeId, &Bindings, &BTreeMap<Role, f64>)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n {
            Node::Terminal { bindings, utility } => Some((i, bindings, utility)),
            _ => None,
        })
    }

    pub fn terminal_count(&self) -> usize {
        self.terminals().count()
    }

    pub fn chance_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Chance { .. }))
            .count()
    }

    pub fn decision_info_set_count(&self) -> usize {
        self.info_sets.len()
    }

    /// Information sets belonging to one role, in key order.
    pub fn info_sets_of(&self, role: &Role) -> Vec<&InfoSetKey> {
        self.info_sets
            .keys()
            .filter(|k| &k.role == role)
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn shift_utilities(&mut self, role: &Role, delta: f64) {
        for n in &mut self.nodes {
            if let Node::Terminal { utility, .. } = n {
                if let Some(u) = utility.get_mut(role) {
                    *u += delta;
                }
            }
        }
    }
}

/// Per-role policies: a distribution over actions at every information set.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PolicyProfile {
    pub policies: BTreeMap<Role, BTreeMap<InfoSetKey, Dist<Value>>>,
}

impl PolicyProfile {
    pub fn new() -> Self {
        PolicyProfile {
            policies: BTreeMap::new(),
        }
    }

    pub fn get(&self, role: &Role, key: &InfoSetKey) -> Option<&Dist<Value>> {
        self.policies.get(role).and_then(|m| m.get(key))
    }

    pub fn insert(&mut self, key: InfoSetKey, dist: Dist<Value>) {
        self.policies
            .entry(key.role.clone())
            .or_default()
            .insert(key, dist);
    }

    /// The profile with one role's policies removed: what that role's
    /// opponents look like from its point of view.
    pub fn without(&self, role: &Role) -> PolicyProfile {
        PolicyProfile {
            policies: self
                .policies
                .iter()
                .filter(|(r, _)| *r != role)
                .map(|(r, m)| (r.clone(), m.clone()))
                .collect(),
        }
    }
}

impl Default for PolicyProfile {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("policy has no entry for information set `{0}`")]
    MissingInfoSet(String),
    #[error("role `{0}` is not part of this game")]
    UnknownRole(Role),
}

#[derive(Debug, Error, PartialEq)]
pub enum BuildError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("cannot evaluate `{expr}` at {at}: {source}")]
    Eval {
        expr: String,
        at: String,
        source: EvalError,
    },
    #[error("guard `{expr}` at {at} evaluated to non-boolean `{value}`")]
    GuardNotBoolean {
        expr: String,
        at: String,
        value: String,
    },
}

/// Builds the game tree by unrolling the desugared statements in order.
pub fn build_game(checked: &CheckedProtocol, beliefs: &BeliefProfile) -> Result<GameTree, BuildError> {
    let ids = StmtIds::new(&checked.desugared);
    let mut builder = Builder {
        checked,
        beliefs,
        ids,
        nodes: Vec::new(),
        info_sets: BTreeMap::new(),
        actions: BTreeMap::new(),
    };
    let env = Env::initial(checked);
    let stack = vec![BlockPos {
        stmts: &checked.desugared.body,
        idx: 0,
    }];
    let root = builder.unroll(stack, env)?;
    Ok(GameTree {
        nodes: builder.nodes,
        root,
        roles: checked.roles.clone(),
        info_sets: builder.info_sets,
        actions: builder.actions,
    })
}

/// Pre-order statement ids, addressed by pointer identity.
struct StmtIds(HashMap<*const Stmt, StmtId>);

impl StmtIds {
    fn new(p: &Protocol) -> Self {
        let mut flat = Vec::new();
        preorder(&p.body, &mut flat);
        StmtIds(
            flat.iter()
                .enumerate()
                .map(|(i, s)| (*s as *const Stmt, i))
                .collect(),
        )
    }

    fn id(&self, s: &Stmt) -> StmtId {
        *self.0.get(&(s as *const Stmt)).expect("statement id")
    }
}

#[derive(Clone)]
struct Env {
    bindings: Bindings,
    knowledge: BTreeMap<Role, BTreeSet<VarName>>,
    money: BTreeMap<Role, f64>,
    /// `values` declarations executed on this path (indices into the
    /// declared-terms list).
    active_terms: Vec<usize>,
}

impl Env {
    fn initial(checked: &CheckedProtocol) -> Self {
        let mut bindings = Bindings::new();
        let mut knowledge: BTreeMap<Role, BTreeSet<VarName>> = BTreeMap::new();
        for r in &checked.roles {
            knowledge.insert(r.clone(), BTreeSet::new());
        }
        for param in &checked.desugared.params {
            bindings.insert(param.var.clone(), Value::Sym(param.var.name().to_string()));
            knowledge
                .entry(param.owner.clone())
                .or_default()
                .insert(param.var.clone());
        }
        Env {
            bindings,
            knowledge,
            money: BTreeMap::new(),
            active_terms: Vec::new(),
        }
    }

    fn learn(&mut self, role: &Role, var: &VarName) {
        self.knowledge
            .entry(role.clone())
            .or_default()
            .insert(var.clone());
    }

    fn knows(&self, role: &Role, var: &VarName) -> bool {
        self.knowledge
            .get(role)
            .map(|s| s.contains(var))
            .unwrap_or(false)
    }
}

#[derive(Clone, Copy)]
struct BlockPos<'a> {
    stmts: &'a [Stmt],
    idx: usize,
}

struct Builder<'a> {
    checked: &'a CheckedProtocol,
    beliefs: &'a BeliefProfile,
    ids: StmtIds,
    nodes: Vec<Node>,
    info_sets: BTreeMap<InfoSetKey, Vec<NodeId>>,
    actions: BTreeMap<VarName, Vec<Value>>,
}

impl<'a> Builder<'a> {
    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    fn eval_here(&self, e: &Expr, env: &Env, span: &SourceSpan) -> Result<Value, BuildError> {
        eval_expr(e, &env.bindings).map_err(|source| BuildError::Eval {
            expr: render_expr(e),
            at: span.to_string(),
            source,
        })
    }

    fn info_key(&self, stmt_id: StmtId, env: &Env) -> InfoSetKey {
        let info = &self.checked.choice_info[&stmt_id];
        let obs = info
            .known
            .iter()
            .map(|v| (v.clone(), env.bindings[v].clone()))
            .collect();
        InfoSetKey {
            role: info.role.clone(),
            var: info.var.clone(),
            obs,
        }
    }

    fn domain_values(&self, domain: &str) -> Vec<Value> {
        self.checked
            .domain(domain)
            .expect("checked domain")
            .values
            .iter()
            .map(Value::from_literal)
            .collect()
    }

    fn unroll(
        &mut self,
        mut stack: Vec<BlockPos<'a>>,
        mut env: Env,
    ) -> Result<NodeId, BuildError> {
        // advance through non-branching statements
        loop {
            let (stmts, idx) = match stack.last() {
                Some(top) => (top.stmts, top.idx),
                None => return self.terminal(env),
            };
            if idx >= stmts.len() {
                stack.pop();
                continue;
            }
            let stmt = &stmts[idx];
            stack.last_mut().unwrap().idx += 1;
            let stmt_id = self.ids.id(stmt);

            match stmt {
                Stmt::Send {
                    payload,
                    from,
                    to,
                    money,
                    span,
                } => {
                    if let Some(v) = payload.as_var() {
                        env.learn(to, v);
                    }
                    if *money {
                        let amount = self.eval_here(payload, &env, span)?;
                        let m = amount.magnitude().ok_or_else(|| BuildError::Eval {
                            expr: render_expr(payload),
                            at: span.to_string(),
                            source: EvalError::NotNumeric(amount.text()),
                        })? as f64;
                        *env.money.entry(from.clone()).or_insert(0.0) -= m;
                        *env.money.entry(to.clone()).or_insert(0.0) += m;
                    }
                }
                Stmt::Choose {
                    var,
                    chooser,
                    domain,
                    ..
                } => {
                    let values = self.domain_values(domain);
                    self.actions.entry(var.clone()).or_insert_with(|| values.clone());
                    let key = self.info_key(stmt_id, &env);
                    return self.decision(stack, env, key, chooser, var, &values, None);
                }
                Stmt::NatureChoose { var, domain, .. } => {
                    let values = self.domain_values(domain);
                    let prior = self
                        .beliefs
                        .priors
                        .get(var)
                        .ok_or_else(|| ProfileError::MissingPrior(var.clone()))?
                        .clone();
                    let mut children = Vec::new();
                    let node_id = self.push(Node::Chance {
                        var: var.clone(),
                        dist: prior.clone(),
                        children: Vec::new(),
                    });
                    let root = var.root();
                    for v in &values {
                        let mut env2 = env.clone();
                        env2.bindings.insert(var.clone(), v.clone());
                        for r in self.checked.roles.clone() {
                            if env2.knows(&r, &root) {
                                env2.learn(&r, var);
                            }
                        }
                        let child = self.unroll(stack.clone(), env2)?;
                        children.push((v.clone(), child));
                    }
                    if let Node::Chance { children: c, .. } = &mut self.nodes[node_id] {
                        *c = children;
                    }
                    return Ok(node_id);
                }
                Stmt::Values { role, term, .. } => {
                    let rendered = render_expr(term);
                    let idx = declared_terms(&self.checked.desugared)
                        .iter()
                        .position(|(r, t)| r == role && *t == rendered)
                        .expect("declared term");
                    env.active_terms.push(idx);
                }
                Stmt::Local {
                    var,
                    owner,
                    expr,
                    span,
                } => {
                    let v = self.eval_here(expr, &env, span)?;
                    env.bindings.insert(var.clone(), v);
                    env.learn(owner, var);
                }
                Stmt::If {
                    guard,
                    guard_var,
                    then_branch,
                    else_branch,
                    span,
                    ..
                } => match guard {
                    Guard::Choice {
                        var,
                        chooser,
                        domain,
                    } => {
                        let values = self.domain_values(domain);
                        self.actions.entry(var.clone()).or_insert_with(|| values.clone());
                        let key = self.info_key(stmt_id, &env);
                        return self.decision(
                            stack,
                            env,
                            key,
                            chooser,
                            var,
                            &values,
                            Some((then_branch, else_branch)),
                        );
                    }
                    Guard::Expr(e) => {
                        let v = self.eval_here(e, &env, span)?;
                        let b = v.as_bool().ok_or_else(|| BuildError::GuardNotBoolean {
                            expr: render_expr(e),
                            at: span.to_string(),
                            value: v.text(),
                        })?;
                        env.bindings.insert(guard_var.clone(), v);
                        for r in self.checked.roles.clone() {
                            env.learn(&r, guard_var);
                        }
                        let branch: &'a [Stmt] = if b { then_branch } else { else_branch };
                        stack.push(BlockPos {
                            stmts: branch,
                            idx: 0,
                        });
                    }
                },
                Stmt::Exchange { .. } => unreachable!("checked protocols are desugared"),
            }
        }
    }

    /// Emits a decision node. For guard choices the branch taken depends on
    /// the chosen boolean; everyone learns the guard either way.
    #[allow(clippy::too_many_arguments)]
    fn decision(
        &mut self,
        stack: Vec<BlockPos<'a>>,
        env: Env,
        key: InfoSetKey,
        chooser: &Role,
        var: &VarName,
        values: &[Value],
        branches: Option<(&'a [Stmt], &'a [Stmt])>,
    ) -> Result<NodeId, BuildError> {
        let node_id = self.push(Node::Decision {
            role: chooser.clone(),
            var: var.clone(),
            key: key.clone(),
            children: Vec::new(),
        });
        self.info_sets.entry(key).or_default().push(node_id);
        let mut children = Vec::new();
        for v in values {
            let mut env2 = env.clone();
            env2.bindings.insert(var.clone(), v.clone());
            match branches {
                None => env2.learn(chooser, var),
                Some(_) => {
                    // broadcast guard: every role learns the decision
                    for r in self.checked.roles.clone() {
                        env2.learn(&r, var);
                    }
                }
            }
            let mut stack2 = stack.clone();
            if let Some((then_branch, else_branch)) = branches {
                let b = v.as_bool().expect("boolean guard domain");
                stack2.push(BlockPos {
                    stmts: if b { then_branch } else { else_branch },
                    idx: 0,
                });
            }
            let child = self.unroll(stack2, env2)?;
            children.push((v.clone(), child));
        }
        if let Node::Decision { children: c, .. } = &mut self.nodes[node_id] {
            *c = children;
        }
        Ok(node_id)
    }

    fn terminal(&mut self, env: Env) -> Result<NodeId, BuildError> {
        let utility = terminal_utilities(self.checked, self.beliefs, &env.bindings, &env.knowledge, &env.money, &env.active_terms)?;
        Ok(self.push(Node::Terminal {
            bindings: env.bindings,
            utility,
        }))
    }
}

/// Utility vector at a terminal: money delta plus each active value term
/// that fires. A term fires when the valuing role knows every referenced
/// variable (or its root) and the term evaluates over the final bindings.
/// The simulator reuses this function so realized utilities match the game
/// exactly.
pub fn terminal_utilities(
    checked: &CheckedProtocol,
    beliefs: &BeliefProfile,
    bindings: &Bindings,
    knowledge: &BTreeMap<Role, BTreeSet<VarName>>,
    money: &BTreeMap<Role, f64>,
    active_terms: &[usize],
) -> Result<BTreeMap<Role, f64>, BuildError> {
    let declared = declared_terms(&checked.desugared);
    let mut utility: BTreeMap<Role, f64> = checked
        .roles
        .iter()
        .map(|r| (r.clone(), money.get(r).copied().unwrap_or(0.0)))
        .collect();
    for idx in active_terms {
        let (role, term_text) = &declared[*idx];
        let term_expr = find_term_expr(&checked.desugared, role, term_text)
            .expect("active term is declared");
        let knows = |v: &VarName| {
            knowledge
                .get(role)
                .map(|s| s.contains(v) || s.contains(&v.root()))
                .unwrap_or(false)
        };
        if !term_expr.vars().iter().all(|v| knows(v)) {
            continue;
        }
        let value = match eval_expr(&term_expr, bindings) {
            Ok(v) => v,
            Err(EvalError::Unbound(_)) => continue, // variable never materialized on this path
            Err(e) => {
                return Err(BuildError::Eval {
                    expr: term_text.clone(),
                    at: "terminal".to_string(),
                    source: e,
                })
            }
        };
        let f = beliefs
            .utility_terms
            .get(role)
            .and_then(|m| m.get(term_text))
            .ok_or_else(|| ProfileError::MissingTerm {
                role: role.clone(),
                term: term_text.clone(),
            })?;
        let contribution = match f {
            TermFn::Table(table) => {
                *table
                    .get(&value)
                    .ok_or_else(|| ProfileError::TermValueMissing {
                        role: role.clone(),
                        term: term_text.clone(),
                        value: value.text(),
                    })?
            }
            TermFn::Weight(w) => {
                let m = value.magnitude().ok_or_else(|| ProfileError::TermNotNumeric {
                    role: role.clone(),
                    term: term_text.clone(),
                    value: value.text(),
                })?;
                w * m as f64
            }
        };
        *utility.entry(role.clone()).or_insert(0.0) += contribution;
    }
    Ok(utility)
}

fn find_term_expr(p: &Protocol, role: &Role, term_text: &str) -> Option<Expr> {
    let mut flat = Vec::new();
    preorder(&p.body, &mut flat);
    for s in flat {
        if let Stmt::Values { role: r, term, .. } = s {
            if r == role && render_expr(term) == term_text {
                return Some(term.clone());
            }
        }
    }
    None
}

/// Expected utility of one role under a complete policy profile: the sum
/// over terminals of path probability times the role's utility.
pub fn expected_utility(
    g: &GameTree,
    role: &Role,
    pp: &PolicyProfile,
) -> Result<f64, PolicyError> {
    if !g.roles.contains(role) {
        return Err(PolicyError::UnknownRole(role.clone()));
    }
    node_value(g, g.root, role, pp)
}

fn node_value(g: &GameTree, id: NodeId, role: &Role, pp: &PolicyProfile) -> Result<f64, PolicyError> {
    match g.node(id) {
        Node::Terminal { utility, .. } => Ok(utility.get(role).copied().unwrap_or(0.0)),
        Node::Chance { dist, children, .. } => {
            let mut acc = 0.0;
            for (v, child) in children {
                let p = dist.prob(v);
                if p > 0.0 {
                    acc += p * node_value(g, *child, role, pp)?;
                }
            }
            Ok(acc)
        }
        Node::Decision {
            role: decider,
            key,
            children,
            ..
        } => {
            let dist = pp
                .get(decider, key)
                .ok_or_else(|| PolicyError::MissingInfoSet(key.to_string()))?;
            let mut acc = 0.0;
            for (v, child) in children {
                let p = dist.prob(v);
                if p > 0.0 {
                    acc += p * node_value(g, *child, role, pp)?;
                }
            }
            Ok(acc)
        }
    }
}

/// Path-probability measure over terminals.
pub fn outcome_distribution(g: &GameTree, pp: &PolicyProfile) -> Result<Dist<NodeId>, PolicyError> {
    let mut weights: BTreeMap<NodeId, f64> = BTreeMap::new();
    collect_outcomes(g, g.root, 1.0, pp, &mut weights)?;
    Dist::new(weights).map_err(|e| PolicyError::MissingInfoSet(format!("outcome weights: {e}")))
}

fn collect_outcomes(
    g: &GameTree,
    id: NodeId,
    p: f64,
    pp: &PolicyProfile,
    out: &mut BTreeMap<NodeId, f64>,
) -> Result<(), PolicyError> {
    match g.node(id) {
        Node::Terminal { .. } => {
            *out.entry(id).or_insert(0.0) += p;
            Ok(())
        }
        Node::Chance { dist, children, .. } => {
            for (v, child) in children {
                collect_outcomes(g, *child, p * dist.prob(v), pp, out)?;
            }
            Ok(())
        }
        Node::Decision {
            role,
            key,
            children,
            ..
        } => {
            let dist = pp
                .get(role, key)
                .ok_or_else(|| PolicyError::MissingInfoSet(key.to_string()))?;
            for (v, child) in children {
                collect_outcomes(g, *child, p * dist.prob(v), pp, out)?;
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::check_well_formed;
    use crate::parser::parse_protocol;

    pub(crate) fn lemons() -> (CheckedProtocol, BeliefProfile) {
        let p = parse_protocol(crate::bundled::BOOKSELLER).unwrap();
        let c = check_well_formed(&p).unwrap();
        let b = BeliefProfile::from_json(crate::bundled::LEMONS_BELIEFS, &c).unwrap();
        (c, b)
    }

    /// Uniform policy profile over all information sets of the game.
    pub(crate) fn uniform_profile(g: &GameTree) -> PolicyProfile {
        let mut pp = PolicyProfile::new();
        for key in g.info_sets.keys() {
            let actions = g.actions[&key.var].clone();
            pp.insert(key.clone(), Dist::uniform(actions).unwrap());
        }
        pp
    }

    fn tweak_policy(pp: &mut PolicyProfile, role: &str, var: &str, value: Value, p: f64) {
        let role = Role::new(role);
        let keys: Vec<InfoSetKey> = pp.policies[&role]
            .keys()
            .filter(|k| k.var.name() == var)
            .cloned()
            .collect();
        for key in keys {
            let actions: Vec<Value> = pp.policies[&role][&key].iter().map(|(v, _)| v.clone()).collect();
            let mut weights = BTreeMap::new();
            let rest = (1.0 - p) / (actions.len() - 1) as f64;
            for a in actions {
                let w = if a == value { p } else { rest };
                weights.insert(a, w);
            }
            pp.insert(key, Dist::new(weights).unwrap());
        }
    }

    #[test]
    fn lemons_tree_shape() {
        let (c, b) = lemons();
        let g = build_game(&c, &b).unwrap();
        assert_eq!(g.terminal_count(), 8);
        assert_eq!(g.chance_count(), 1);
        assert_eq!(g.decision_info_set_count(), 4);
        // seller decides knowing quality: 2 info sets; buyer knowing price: 2
        let seller_sets = g.info_sets_of(&Role::new("seller"));
        let buyer_sets = g.info_sets_of(&Role::new("buyer"));
        assert_eq!(seller_sets.len(), 2);
        assert_eq!(buyer_sets.len(), 2);
        for k in seller_sets {
            assert!(k.obs.iter().any(|(v, _)| v.name() == "book.quality"));
        }
        for k in buyer_sets {
            assert!(k.obs.iter().any(|(v, _)| v.name() == "price"));
            assert!(!k.obs.iter().any(|(v, _)| v.name() == "book.quality"));
        }
    }

    #[test]
    fn accept_terminal_utilities() {
        let (c, b) = lemons();
        let g = build_game(&c, &b).unwrap();
        let high = Value::Label {
            name: "high".into(),
            magnitude: None,
        };
        let mut seen = false;
        for (_, bindings, utility) in g.terminals() {
            let q = &bindings[&VarName::new("book.quality")];
            let p = bindings[&VarName::new("price")].magnitude().unwrap();
            let accept = bindings[&VarName::new("accept")].as_bool().unwrap();
            let buyer = utility[&Role::new("buyer")];
            let seller = utility[&Role::new("seller")];
            if accept {
                let v = if *q == high { 3.0 } else { 0.0 };
                assert!((buyer - (v - p as f64)).abs() < 1e-12);
                assert!((seller - p as f64).abs() < 1e-12);
                if *q == high && p == 2 {
                    assert!((buyer - 1.0).abs() < 1e-12);
                    assert!((seller - 2.0).abs() < 1e-12);
                    seen = true;
                }
            } else {
                assert_eq!(buyer, 0.0);
                assert_eq!(seller, 0.0);
            }
        }
        assert!(seen);
    }

    #[test]
    fn no_choice_protocol_has_single_zero_terminal() {
        let p = parse_protocol("param x : int @ a\nprotocol t {\n  send(x, b)\n}\n").unwrap();
        let c = check_well_formed(&p).unwrap();
        let b = BeliefProfile::from_json(r#"{"noise": 0.1}"#, &c).unwrap();
        let g = build_game(&c, &b).unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.terminal_count(), 1);
        for (_, _, u) in g.terminals() {
            assert!(u.values().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn buyer_eu_under_uniform_seller_always_accept() {
        let (c, b) = lemons();
        let g = build_game(&c, &b).unwrap();
        let mut pp = uniform_profile(&g);
        tweak_policy(&mut pp, "buyer", "accept", Value::Bool(true), 1.0);
        let eu = expected_utility(&g, &Role::new("buyer"), &pp).unwrap();
        assert!((eu - 0.3).abs() < 1e-12, "got {eu}");
    }

    #[test]
    fn seller_eu_zero_when_never_accepted() {
        let (c, b) = lemons();
        let g = build_game(&c, &b).unwrap();
        let mut pp = uniform_profile(&g);
        tweak_policy(&mut pp, "buyer", "accept", Value::Bool(false), 1.0);
        let eu = expected_utility(&g, &Role::new("seller"), &pp).unwrap();
        assert_eq!(eu, 0.0);
    }

    #[test]
    fn outcome_distribution_uniform() {
        let (c, b) = lemons();
        let g = build_game(&c, &b).unwrap();
        let pp = uniform_profile(&g);
        let dist = outcome_distribution(&g, &pp).unwrap();
        dist.assert_normalized();
        assert_eq!(dist.len(), 8);
        for (id, p) in dist.iter() {
            let q = match g.node(*id) {
                Node::Terminal { bindings, .. } => bindings[&VarName::new("book.quality")].clone(),
                _ => unreachable!(),
            };
            let expected = if q.text() == "high" { 0.15 } else { 0.10 };
            assert!((p - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn changing_priors_keeps_utilities() {
        let (c, b) = lemons();
        let g1 = build_game(&c, &b).unwrap();
        let mut b2 = b.clone();
        let qvar = VarName::new("book.quality");
        let mut w = BTreeMap::new();
        w.insert(
            Value::Label { name: "low".into(), magnitude: None },
            0.9,
        );
        w.insert(
            Value::Label { name: "high".into(), magnitude: None },
            0.1,
        );
        b2.priors.insert(qvar, Dist::new(w).unwrap());
        let g2 = build_game(&c, &b2).unwrap();
        let u1: Vec<_> = g1.terminals().map(|(_, _, u)| u.clone()).collect();
        let u2: Vec<_> = g2.terminals().map(|(_, _, u)| u.clone()).collect();
        assert_eq!(u1, u2);
    }

    #[test]
    fn expected_utility_is_linear_in_a_single_info_set() {
        let (c, b) = lemons();
        let g = build_game(&c, &b).unwrap();
        let role = Role::new("buyer");
        let base = uniform_profile(&g);
        let key = g.info_sets_of(&role)[0].clone();

        let make = |p_true: f64| {
            let mut pp = base.clone();
            let mut w = BTreeMap::new();
            w.insert(Value::Bool(false), 1.0 - p_true);
            w.insert(Value::Bool(true), p_true);
            pp.insert(key.clone(), Dist::new(w).unwrap());
            pp
        };
        let e0 = expected_utility(&g, &role, &make(0.0)).unwrap();
        let e1 = expected_utility(&g, &role, &make(1.0)).unwrap();
        let eh = expected_utility(&g, &role, &make(0.5)).unwrap();
        assert!((eh - 0.5 * (e0 + e1)).abs() < 1e-12);
    }

    #[test]
    fn info_set_keys_match_checker_signatures() {
        let (c, b) = lemons();
        let g = build_game(&c, &b).unwrap();
        for (key, nodes) in &g.info_sets {
            // every node in the set shows identical bindings on the key vars
            for id in nodes {
                match g.node(*id) {
                    Node::Decision { key: k, .. } => assert_eq!(k, key),
                    _ => panic!("info set member is not a decision"),
                }
            }
        }
        // distinct seller info sets differ exactly in quality
        let seller_sets = g.info_sets_of(&Role::new("seller"));
        assert_ne!(seller_sets[0].obs, seller_sets[1].obs);
    }

    #[test]
    fn missing_prior_is_a_profile_error() {
        let p = parse_protocol(crate::bundled::BOOKSELLER).unwrap();
        let c = check_well_formed(&p).unwrap();
        let err = BeliefProfile::from_json(
            r#"{"noise": 0.1, "utility_terms": {"buyer": {"book.quality": {"weight": 1.0}}}}"#,
            &c,
        )
        .unwrap_err();
        assert!(matches!(err, ProfileError::MissingPrior(_)));
    }

    #[test]
    fn missing_term_is_a_profile_error() {
        let p = parse_protocol(crate::bundled::BOOKSELLER).unwrap();
        let c = check_well_formed(&p).unwrap();
        let err = BeliefProfile::from_json(
            r#"{"noise": 0.1, "priors": {"book.quality": {"low": 0.4, "high": 0.6}}}"#,
            &c,
        )
        .unwrap_err();
        assert!(matches!(err, ProfileError::MissingTerm { .. }));
    }

    #[test]
    fn zero_noise_is_rejected() {
        let p = parse_protocol(crate::bundled::BOOKSELLER).unwrap();
        let c = check_well_formed(&p).unwrap();
        let err = BeliefProfile::from_json(r#"{"noise": 0.0}"#, &c).unwrap_err();
        assert_eq!(err, ProfileError::NonPositiveNoise(0.0));
        let (_, b) = lemons();
        assert!(b.with_overrides(None, Some(0.0)).is_err());
    }
}
