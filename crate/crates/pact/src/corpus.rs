//! Seeded generation of random well-formed protocols with matching belief
//! profiles.
//!
//! Generated protocols are well-formed by construction: senders are always
//! the introducing role of the variable they send, conditionals broadcast,
//! choice domains are declared and finite, exchange payments are numeric,
//! and names follow the same synthesis conventions as the parser so that
//! rendering and reparsing reproduces the AST exactly.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ast::{
    BinOp, Domain, Expr, Guard, Literal, NamePool, Param, Protocol, Role, SourceSpan, Stmt, Value,
    VarName, BOOL_DOMAIN,
};
use crate::dist::Dist;
use crate::game::{BeliefProfile, Level0Spec, TermFn};

#[derive(Debug, Clone)]
pub struct GenConfig {
    /// Participating roles (2 or 3).
    pub max_roles: usize,
    /// Total branching points: choices, nature draws, guard choices.
    pub max_choice_points: usize,
    pub max_stmts_per_block: usize,
    pub max_branch_depth: usize,
    pub with_exchange: bool,
    pub with_values: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_roles: 3,
            max_choice_points: 4,
            max_stmts_per_block: 4,
            max_branch_depth: 2,
            with_exchange: true,
            with_values: true,
        }
    }
}

/// A generated protocol together with a belief profile that completes it.
#[derive(Debug, Clone)]
pub struct GeneratedCase {
    pub protocol: Protocol,
    pub beliefs: BeliefProfile,
}

struct Gen {
    rng: ChaCha8Rng,
    cfg: GenConfig,
    roles: Vec<Role>,
    domains: Vec<Domain>,
    params: Vec<Param>,
    pool: NamePool,
    /// var -> introducing role (senders and owners resolve here)
    intro: BTreeMap<VarName, Role>,
    /// per-role known variables along the generation path
    knowledge: BTreeMap<Role, BTreeSet<VarName>>,
    /// vars with numeric values (int domains or magnituded labels)
    numeric: BTreeSet<VarName>,
    /// domain-valued vars (choices and draws), with the domain name
    domain_of: BTreeMap<VarName, String>,
    nature: Vec<VarName>,
    values_decls: Vec<(Role, VarName)>,
    choice_points: usize,
    var_counter: usize,
}

impl Gen {
    fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.rng.gen_range(0..items.len())]
    }

    fn fresh_var(&mut self, prefix: &str) -> VarName {
        let name = format!("{prefix}{}", self.var_counter);
        self.var_counter += 1;
        self.pool.claim(&name);
        VarName::new(name)
    }

    fn learn(&mut self, role: &Role, var: &VarName) {
        self.knowledge
            .entry(role.clone())
            .or_default()
            .insert(var.clone());
    }

    fn known_plain(&self, role: &Role) -> Vec<VarName> {
        self.knowledge
            .get(role)
            .map(|s| s.iter().filter(|v| !v.is_attribute()).cloned().collect())
            .unwrap_or_default()
    }

    fn known_numeric(&self, role: &Role) -> Vec<VarName> {
        self.knowledge
            .get(role)
            .map(|s| {
                s.iter()
                    .filter(|v| self.numeric.contains(*v))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default()
    }

    fn domain_is_numeric(d: &Domain) -> bool {
        d.values.iter().all(|l| match l {
            Literal::Int(_) => true,
            Literal::Label { magnitude, .. } => magnitude.is_some(),
            Literal::Bool(_) => false,
        })
    }

    fn gen_domains(&mut self) {
        let n = self.rng.gen_range(1..=2);
        for i in 0..n {
            let name = format!("D{i}");
            self.pool.claim(&name);
            let size = self.rng.gen_range(2..=3);
            let values = if self.rng.gen_bool(0.5) {
                (1..=size as i64).map(Literal::Int).collect()
            } else {
                (0..size)
                    .map(|j| {
                        let label = format!("d{i}x{j}");
                        self.pool.claim(&label);
                        Literal::Label {
                            name: label,
                            magnitude: Some((j as i64) * 2 + 1),
                        }
                    })
                    .collect()
            };
            self.domains.push(Domain {
                name,
                values,
                span: SourceSpan::default(),
            });
        }
    }

    fn gen_params(&mut self) {
        let n = self.rng.gen_range(1..=2);
        for i in 0..n {
            let name = format!("p{i}");
            self.pool.claim(&name);
            let var = VarName::new(&name);
            let owner = self.pick(&self.roles.clone()).clone();
            self.intro.insert(var.clone(), owner.clone());
            self.learn(&owner, &var);
            self.params.push(Param {
                var,
                ty: "token".to_string(),
                owner,
                span: SourceSpan::default(),
            });
        }
    }

    fn gen_block(&mut self, depth: usize) -> Vec<Stmt> {
        let n = self.rng.gen_range(1..=self.cfg.max_stmts_per_block);
        let mut out = Vec::new();
        for i in 0..n {
            // the very first statement of the protocol is always a choice so
            // every generated game has at least one decision
            let force_choice = depth == 0 && i == 0 && out.is_empty();
            if let Some(s) = self.gen_stmt(depth, force_choice) {
                out.push(s);
            }
        }
        out
    }

    fn gen_stmt(&mut self, depth: usize, force_choice: bool) -> Option<Stmt> {
        let kind = if force_choice {
            0
        } else {
            self.rng.gen_range(0..7)
        };
        match kind {
            0 => self.gen_choose(),
            1 => self.gen_nature(),
            2 => self.gen_send(),
            3 => self.gen_local(),
            4 if self.cfg.with_values => self.gen_values(),
            5 if depth < self.cfg.max_branch_depth => self.gen_if(depth),
            6 if self.cfg.with_exchange => self.gen_exchange(),
            _ => self.gen_send(),
        }
    }

    fn gen_choose(&mut self) -> Option<Stmt> {
        if self.choice_points >= self.cfg.max_choice_points {
            return None;
        }
        self.choice_points += 1;
        let chooser = self.pick(&self.roles.clone()).clone();
        let domain = self.pick(&self.domains.clone()).clone();
        let var = self.fresh_var("c");
        self.intro.insert(var.clone(), chooser.clone());
        self.learn(&chooser, &var);
        if Self::domain_is_numeric(&domain) {
            self.numeric.insert(var.clone());
        }
        self.domain_of.insert(var.clone(), domain.name.clone());
        Some(Stmt::Choose {
            var,
            chooser,
            domain: domain.name,
            span: SourceSpan::default(),
        })
    }

    fn gen_nature(&mut self) -> Option<Stmt> {
        if self.choice_points >= self.cfg.max_choice_points || self.params.is_empty() {
            return None;
        }
        self.choice_points += 1;
        let root = self.pick(&self.params.clone()).var.clone();
        let attr = self.fresh_var("q");
        let var = VarName::new(format!("{root}.{attr}"));
        self.pool.claim(var.name());
        let domain = self.pick(&self.domains.clone()).clone();
        self.intro.insert(var.clone(), Role::world());
        // holders of the root observe the draw
        for role in self.roles.clone() {
            if self
                .knowledge
                .get(&role)
                .map(|s| s.contains(&root))
                .unwrap_or(false)
            {
                self.learn(&role, &var);
            }
        }
        if Self::domain_is_numeric(&domain) {
            self.numeric.insert(var.clone());
        }
        self.domain_of.insert(var.clone(), domain.name.clone());
        self.nature.push(var.clone());
        Some(Stmt::NatureChoose {
            var,
            domain: domain.name,
            span: SourceSpan::default(),
        })
    }

    fn gen_send(&mut self) -> Option<Stmt> {
        // the sender must be the introducing role (matching parser
        // inference) and must still know the variable on every path here
        let candidates: Vec<(VarName, Role)> = self
            .intro
            .iter()
            .filter(|(v, r)| {
                !v.is_attribute()
                    && !r.is_world()
                    && self
                        .knowledge
                        .get(r)
                        .map(|s| s.contains(*v))
                        .unwrap_or(false)
            })
            .map(|(v, r)| (v.clone(), r.clone()))
            .collect();
        if candidates.is_empty() || self.roles.len() < 2 {
            return None;
        }
        let (var, from) = self.pick(&candidates).clone();
        let others: Vec<Role> = self.roles.iter().filter(|r| **r != from).cloned().collect();
        let to = self.pick(&others).clone();
        self.learn(&to, &var);
        Some(Stmt::Send {
            payload: Expr::Var(var, SourceSpan::default()),
            from,
            to,
            money: false,
            span: SourceSpan::default(),
        })
    }

    fn gen_local(&mut self) -> Option<Stmt> {
        // first operand introduced by the owner, matching parser inference
        let candidates: Vec<(VarName, Role)> = self
            .intro
            .iter()
            .filter(|(v, r)| {
                self.numeric.contains(v)
                    && !r.is_world()
                    && self
                        .knowledge
                        .get(r)
                        .map(|s| s.contains(*v))
                        .unwrap_or(false)
            })
            .map(|(v, r)| (v.clone(), r.clone()))
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let (first, owner) = self.pick(&candidates).clone();
        let lhs = Expr::Var(first, SourceSpan::default());
        let op = *self.pick(&[BinOp::Add, BinOp::Sub, BinOp::Mul]);
        let rhs = {
            let more = self.known_numeric(&owner);
            if !more.is_empty() && self.rng.gen_bool(0.4) {
                Expr::Var(self.pick(&more).clone(), SourceSpan::default())
            } else {
                Expr::int(self.rng.gen_range(1..=3))
            }
        };
        let var = self.fresh_var("l");
        self.intro.insert(var.clone(), owner.clone());
        self.learn(&owner, &var);
        self.numeric.insert(var.clone());
        Some(Stmt::Local {
            var,
            owner,
            expr: Expr::Binary(op, Box::new(lhs), Box::new(rhs), SourceSpan::default()),
            span: SourceSpan::default(),
        })
    }

    fn gen_values(&mut self) -> Option<Stmt> {
        let role = self.pick(&self.roles.clone()).clone();
        // terms over domain-valued vars the role knows, so tables apply and
        // the term is never dead
        let known: Vec<VarName> = self
            .knowledge
            .get(&role)?
            .iter()
            .filter(|v| self.domain_of.contains_key(*v))
            .cloned()
            .collect();
        if known.is_empty() {
            return None;
        }
        let var = self.pick(&known).clone();
        if self.values_decls.iter().any(|(r, v)| *r == role && *v == var) {
            return None;
        }
        self.values_decls.push((role.clone(), var.clone()));
        Some(Stmt::Values {
            role,
            term: Expr::Var(var, SourceSpan::default()),
            span: SourceSpan::default(),
        })
    }

    fn gen_if(&mut self, depth: usize) -> Option<Stmt> {
        let use_choice_guard =
            self.choice_points < self.cfg.max_choice_points && self.rng.gen_bool(0.7);
        let (guard, broadcaster, guard_var) = if use_choice_guard {
            self.choice_points += 1;
            let chooser = self.pick(&self.roles.clone()).clone();
            let var = VarName::new(self.pool.fresh("accept"));
            self.intro.insert(var.clone(), chooser.clone());
            self.domain_of.insert(var.clone(), BOOL_DOMAIN.to_string());
            (
                Guard::Choice {
                    var: var.clone(),
                    chooser: chooser.clone(),
                    domain: BOOL_DOMAIN.to_string(),
                },
                chooser,
                var,
            )
        } else {
            let candidates: Vec<(VarName, Role)> = self
                .intro
                .iter()
                .filter(|(v, r)| {
                    self.numeric.contains(v)
                        && !r.is_world()
                        && self
                            .knowledge
                            .get(r)
                            .map(|s| s.contains(*v))
                            .unwrap_or(false)
                })
                .map(|(v, r)| (v.clone(), r.clone()))
                .collect();
            if candidates.is_empty() {
                return None;
            }
            let (var, broadcaster) = self.pick(&candidates).clone();
            let threshold = self.rng.gen_range(1..=4);
            let op = *self.pick(&[BinOp::Lt, BinOp::Le, BinOp::Ge]);
            let guard_var = VarName::new(self.pool.fresh("guard"));
            self.intro.insert(guard_var.clone(), broadcaster.clone());
            (
                Guard::Expr(Expr::Binary(
                    op,
                    Box::new(Expr::Var(var, SourceSpan::default())),
                    Box::new(Expr::int(threshold)),
                    SourceSpan::default(),
                )),
                broadcaster,
                guard_var,
            )
        };
        for role in self.roles.clone() {
            self.learn(&role, &guard_var);
        }
        // mirror the checker: branch exits join by intersection
        let snapshot = self.knowledge.clone();
        let then_branch = self.gen_block(depth + 1);
        let then_know = std::mem::replace(&mut self.knowledge, snapshot.clone());
        let else_branch = if self.rng.gen_bool(0.5) {
            self.gen_block(depth + 1)
        } else {
            Vec::new()
        };
        let else_know = std::mem::take(&mut self.knowledge);
        let mut joined: BTreeMap<Role, BTreeSet<VarName>> = BTreeMap::new();
        for role in self.roles.clone() {
            let a = then_know.get(&role).cloned().unwrap_or_default();
            let b = else_know.get(&role).cloned().unwrap_or_default();
            joined.insert(role, a.intersection(&b).cloned().collect());
        }
        self.knowledge = joined;
        Some(Stmt::If {
            broadcast: true,
            guard,
            broadcaster,
            guard_var,
            then_branch,
            else_branch,
            span: SourceSpan::default(),
        })
    }

    fn gen_exchange(&mut self) -> Option<Stmt> {
        if self.roles.len() < 2 {
            return None;
        }
        let payer = self.pick(&self.roles.clone()).clone();
        let others: Vec<Role> = self
            .roles
            .iter()
            .filter(|r| **r != payer)
            .cloned()
            .collect();
        let payee = self.pick(&others).clone();
        let items = self.known_plain(&payee);
        if items.is_empty() {
            return None;
        }
        let item = self.pick(&items).clone();
        let payments = self.known_numeric(&payer);
        let payment = if payments.is_empty() || self.rng.gen_bool(0.3) {
            Expr::int(self.rng.gen_range(0..=3))
        } else {
            Expr::Var(self.pick(&payments).clone(), SourceSpan::default())
        };
        // desugared sends transfer knowledge
        self.learn(&payer, &item);
        if let Expr::Var(v, _) = &payment {
            self.learn(&payee, v);
        }
        Some(Stmt::Exchange {
            payer,
            payee,
            item: Expr::Var(item, SourceSpan::default()),
            payment,
            span: SourceSpan::default(),
        })
    }

    fn beliefs(&mut self) -> BeliefProfile {
        let mut priors = BTreeMap::new();
        for var in &self.nature {
            let domain = self
                .domains
                .iter()
                .find(|d| d.name == self.domain_of[var])
                .expect("nature domain");
            let mut weights = BTreeMap::new();
            for l in &domain.values {
                weights.insert(Value::from_literal(l), self.rng.gen_range(1..=5) as f64);
            }
            priors.insert(var.clone(), Dist::normalized(weights).expect("weights"));
        }
        let mut utility_terms: BTreeMap<Role, BTreeMap<String, TermFn>> = BTreeMap::new();
        for (role, var) in &self.values_decls {
            let domain = self
                .domains
                .iter()
                .find(|d| d.name == self.domain_of[var])
                .cloned()
                .unwrap_or_else(Domain::builtin_bool);
            let table: BTreeMap<Value, f64> = domain
                .values
                .iter()
                .map(|l| {
                    (
                        Value::from_literal(l),
                        self.rng.gen_range(-3..=5) as f64,
                    )
                })
                .collect();
            utility_terms
                .entry(role.clone())
                .or_default()
                .insert(var.name().to_string(), TermFn::Table(table));
        }
        BeliefProfile {
            priors,
            utility_terms,
            level: self.rng.gen_range(1..=3),
            noise: 0.2 + self.rng.gen_range(0..=8) as f64 * 0.1,
            level0: self
                .roles
                .iter()
                .map(|r| (r.clone(), Level0Spec::Uniform))
                .collect(),
        }
    }
}

/// Generates one deterministic case from a seed.
pub fn generate(seed: u64, cfg: &GenConfig) -> GeneratedCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_roles = rng.gen_range(2..=cfg.max_roles.max(2));
    let all = ["alice", "bob", "carol"];
    let roles: Vec<Role> = all.iter().take(n_roles).map(|r| Role::new(*r)).collect();
    let mut pool = NamePool::new();
    for r in &roles {
        pool.claim(r.name());
    }
    pool.claim(Role::WORLD);
    pool.claim(BOOL_DOMAIN);
    let mut g = Gen {
        rng,
        cfg: cfg.clone(),
        roles,
        domains: Vec::new(),
        params: Vec::new(),
        pool,
        intro: BTreeMap::new(),
        knowledge: BTreeMap::new(),
        numeric: BTreeSet::new(),
        domain_of: BTreeMap::new(),
        nature: Vec::new(),
        values_decls: Vec::new(),
        choice_points: 0,
        var_counter: 0,
    };
    g.gen_domains();
    g.gen_params();
    let body = g.gen_block(0);
    let beliefs = g.beliefs();
    let protocol = Protocol {
        name: format!("generated{seed}"),
        params: g.params.clone(),
        domains: g.domains.clone(),
        body,
    };
    GeneratedCase { protocol, beliefs }
}
