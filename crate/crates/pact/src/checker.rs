//! Well-formedness checking and role-knowledge analysis.
//!
//! The checker walks the desugared protocol with a forward dataflow over
//! per-role sets of known variables. A role knows: its parameters, values it
//! chose or computed, messages it received, nature draws on variables it
//! holds, and every broadcast guard. Branch joins intersect (must-know);
//! a separate union pass (may-know) backs the dead-term warning.
//!
//! Rule codes:
//! - `K001` a role uses or sends a variable it does not know
//! - `B002` conditional guard is not broadcast
//! - `D003` unknown domain in a choice or nature draw
//! - `R004` a role sends to itself
//! - `W005` `world` appears outside a nature draw
//! - `V006` a variable is introduced more than once
//! - `U007` reference to a variable no statement introduces
//! - `T008` guard is not boolean-domained
//! - `N009` (warning) a `values` term over variables the role never learns
//! - `S010` send payload is not a plain variable

use std::collections::{BTreeMap, BTreeSet};

use crate::ast::{
    desugar_protocol, roles_of, Domain, Expr, Guard, Literal, Protocol, Role, Stmt, VarName,
    BOOL_DOMAIN,
};
use crate::parser::{has_errors, Diagnostic};

/// Identifier of a statement in the desugared body (pre-order position).
pub type StmtId = usize;

/// Per-statement, per-role sets of known variables.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeMap {
    pub entry: Vec<BTreeMap<Role, BTreeSet<VarName>>>,
    pub exit: Vec<BTreeMap<Role, BTreeSet<VarName>>>,
    /// Must-know at protocol end (intersection over paths).
    pub at_end: BTreeMap<Role, BTreeSet<VarName>>,
    /// May-know at protocol end (union over paths).
    pub may_know_at_end: BTreeMap<Role, BTreeSet<VarName>>,
}

impl KnowledgeMap {
    pub fn knows(&self, id: StmtId, role: &Role, var: &VarName) -> bool {
        self.entry
            .get(id)
            .and_then(|m| m.get(role))
            .map(|s| s.contains(var))
            .unwrap_or(false)
    }
}

/// How a variable gets its values.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub enum VarType {
    /// Drawn or chosen from a declared finite domain.
    Domain(String),
    /// Opaque protocol parameter of the named type.
    Opaque(String),
    /// Computed by a local or an expression guard.
    Derived,
}

/// A choice point: who decides, over which domain, knowing what.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ChoiceInfo {
    pub role: Role,
    pub var: VarName,
    pub domain: String,
    /// The deciding role's known variables at the choice, in introduction
    /// order. This is the information signature that keys information sets.
    pub known: Vec<VarName>,
}

/// A protocol that passed every checker rule, with its analysis artifacts.
#[derive(Debug, Clone)]
pub struct CheckedProtocol {
    /// The protocol as written (may contain `exchange`).
    pub source: Protocol,
    /// Exchange-free form; statement ids index its pre-order walk.
    pub desugared: Protocol,
    pub knowledge: KnowledgeMap,
    /// Information signatures for every choice statement and choice guard.
    pub choice_info: BTreeMap<StmtId, ChoiceInfo>,
    /// Participating roles, sorted, excluding `world`.
    pub roles: Vec<Role>,
    /// Whether any nature draw occurs.
    pub has_nature: bool,
    /// Global variable introduction order: params first, then body order.
    pub intro_order: Vec<VarName>,
    pub var_types: BTreeMap<VarName, VarType>,
}

impl CheckedProtocol {
    pub fn domain(&self, name: &str) -> Option<Domain> {
        self.desugared.domain(name)
    }

    /// Restricts a set of variables to introduction order.
    pub fn in_intro_order<'a>(&'a self, vars: &'a BTreeSet<VarName>) -> Vec<VarName> {
        self.intro_order
            .iter()
            .filter(|v| vars.contains(*v))
            .cloned()
            .collect()
    }
}

/// Pre-order walk of a statement list, visiting each statement with its id.
pub fn preorder<'a>(stmts: &'a [Stmt], out: &mut Vec<&'a Stmt>) {
    for s in stmts {
        out.push(s);
        if let Stmt::If {
            then_branch,
            else_branch,
            ..
        } = s
        {
            preorder(then_branch, out);
            preorder(else_branch, out);
        }
    }
}

type Knowledge = BTreeMap<Role, BTreeSet<VarName>>;

struct Analysis<'a> {
    protocol: &'a Protocol,
    roles: Vec<Role>,
    diags: Vec<Diagnostic>,
    knowledge: KnowledgeMap,
    choice_info: BTreeMap<StmtId, ChoiceInfo>,
    intro_order: Vec<VarName>,
    introduced: BTreeSet<VarName>,
    var_types: BTreeMap<VarName, VarType>,
    next_id: StmtId,
}

/// Runs the full rule set. Returns the checked protocol or the list of
/// diagnostics (any error fails the check; warnings alone do not).
pub fn check_well_formed(p: &Protocol) -> Result<CheckedProtocol, Vec<Diagnostic>> {
    let (checked, diags) = analyze(p);
    if has_errors(&diags) {
        return Err(diags);
    }
    checked.ok_or(diags)
}

/// As [`check_well_formed`] but always returns the diagnostics, so callers
/// can print warnings for protocols that pass.
pub fn analyze(p: &Protocol) -> (Option<CheckedProtocol>, Vec<Diagnostic>) {
    let desugared = match desugar_protocol(p) {
        Ok(d) => d,
        Err(e) => {
            let span = first_exchange_span(&p.body);
            return (
                None,
                vec![Diagnostic::error("M011", e.to_string(), span)],
            );
        }
    };

    let mut roles: Vec<Role> = roles_of(&desugared)
        .into_iter()
        .filter(|r| !r.is_world())
        .collect();
    roles.sort();
    let has_nature = roles_of(&desugared).contains(&Role::world());

    let mut a = Analysis {
        protocol: &desugared,
        roles: roles.clone(),
        diags: Vec::new(),
        knowledge: KnowledgeMap::default(),
        choice_info: BTreeMap::new(),
        intro_order: Vec::new(),
        introduced: BTreeSet::new(),
        var_types: BTreeMap::new(),
        next_id: 0,
    };

    // initial knowledge: parameters at their owners
    let mut state: Knowledge = BTreeMap::new();
    for r in &roles {
        state.insert(r.clone(), BTreeSet::new());
    }
    for param in &desugared.params {
        if param.owner.is_world() {
            a.diags.push(Diagnostic::error(
                "W005",
                format!("`world` cannot hold parameter `{}`", param.var),
                param.span.clone(),
            ));
            continue;
        }
        a.introduce(&param.var, VarType::Opaque(param.ty.clone()), &param.span);
        state
            .entry(param.owner.clone())
            .or_default()
            .insert(param.var.clone());
    }

    let count = {
        let mut flat = Vec::new();
        preorder(&desugared.body, &mut flat);
        flat.len()
    };
    a.knowledge.entry = vec![BTreeMap::new(); count];
    a.knowledge.exit = vec![BTreeMap::new(); count];

    let must = a.flow(&desugared.body, state.clone(), JoinMode::Intersect);
    a.knowledge.at_end = must;

    // second pass for may-know (union at joins); ids advance identically
    a.next_id = 0;
    let may = a.flow_silent(&desugared.body, state, JoinMode::Union);
    a.knowledge.may_know_at_end = may;

    a.check_values_terms(&desugared.body);

    let diags = std::mem::take(&mut a.diags);
    let checked = CheckedProtocol {
        source: p.clone(),
        desugared: desugared.clone(),
        knowledge: a.knowledge,
        choice_info: a.choice_info,
        roles,
        has_nature,
        intro_order: a.intro_order,
        var_types: a.var_types,
    };
    (Some(checked), diags)
}

#[derive(Clone, Copy, PartialEq)]
enum JoinMode {
    Intersect,
    Union,
}

fn join(a: &Knowledge, b: &Knowledge, mode: JoinMode) -> Knowledge {
    let mut out = Knowledge::new();
    let keys: BTreeSet<&Role> = a.keys().chain(b.keys()).collect();
    for k in keys {
        let empty = BTreeSet::new();
        let sa = a.get(k).unwrap_or(&empty);
        let sb = b.get(k).unwrap_or(&empty);
        let merged: BTreeSet<VarName> = match mode {
            JoinMode::Intersect => sa.intersection(sb).cloned().collect(),
            JoinMode::Union => sa.union(sb).cloned().collect(),
        };
        out.insert((*k).clone(), merged);
    }
    out
}

impl<'a> Analysis<'a> {
    fn introduce(&mut self, var: &VarName, ty: VarType, span: &crate::ast::SourceSpan) {
        if !self.introduced.insert(var.clone()) {
            self.diags.push(Diagnostic::error(
                "V006",
                format!("variable `{var}` is introduced more than once"),
                span.clone(),
            ));
            return;
        }
        self.intro_order.push(var.clone());
        self.var_types.insert(var.clone(), ty);
    }

    fn check_role(&mut self, r: &Role, span: &crate::ast::SourceSpan, context: &str) {
        if r.is_world() {
            self.diags.push(Diagnostic::error(
                "W005",
                format!("`world` may not {context}"),
                span.clone(),
            ));
        }
    }

    fn check_expr_knowledge(
        &mut self,
        e: &Expr,
        role: &Role,
        state: &Knowledge,
        context: &str,
    ) {
        for v in e.vars() {
            let known = state.get(role).map(|s| s.contains(v)).unwrap_or(false);
            if known {
                continue;
            }
            if self.introduced.contains(v) {
                self.diags.push(Diagnostic::error(
                    "K001",
                    format!("role `{role}` does not know `{v}` {context}"),
                    e.span().clone(),
                ));
            } else {
                self.diags.push(Diagnostic::error(
                    "U007",
                    format!("unknown variable `{v}` {context}"),
                    e.span().clone(),
                ));
            }
        }
    }

    fn check_domain(&mut self, name: &str, span: &crate::ast::SourceSpan) -> Option<Domain> {
        match self.protocol.domain(name) {
            Some(d) => Some(d),
            None => {
                self.diags.push(Diagnostic::error(
                    "D003",
                    format!("unknown domain `{name}`"),
                    span.clone(),
                ));
                None
            }
        }
    }

    /// Forward dataflow with rule checks; returns the exit knowledge.
    fn flow(&mut self, stmts: &[Stmt], mut state: Knowledge, mode: JoinMode) -> Knowledge {
        for s in stmts {
            let id = self.next_id;
            self.next_id += 1;
            if mode == JoinMode::Intersect {
                self.knowledge.entry[id] = state.clone();
            }
            state = self.step(s, id, state, mode, true);
            if mode == JoinMode::Intersect {
                self.knowledge.exit[id] = state.clone();
            }
        }
        state
    }

    /// Same walk without emitting diagnostics (used for the may-know pass).
    fn flow_silent(&mut self, stmts: &[Stmt], mut state: Knowledge, mode: JoinMode) -> Knowledge {
        for s in stmts {
            let id = self.next_id;
            self.next_id += 1;
            state = self.step(s, id, state, mode, false);
        }
        state
    }

    fn step(
        &mut self,
        s: &Stmt,
        id: StmtId,
        mut state: Knowledge,
        mode: JoinMode,
        check: bool,
    ) -> Knowledge {
        match s {
            Stmt::Send {
                payload,
                from,
                to,
                span,
                ..
            } => {
                if check {
                    self.check_role(from, span, "send");
                    self.check_role(to, span, "receive");
                    if from == to {
                        self.diags.push(Diagnostic::error(
                            "R004",
                            format!("role `{from}` sends to itself"),
                            span.clone(),
                        ));
                    }
                    self.check_expr_knowledge(payload, from, &state, "when sending it");
                    if payload.as_var().is_none() {
                        self.diags.push(Diagnostic::error(
                            "S010",
                            "send payload must be a plain variable".to_string(),
                            span.clone(),
                        ));
                    }
                }
                if let Some(v) = payload.as_var() {
                    state.entry(to.clone()).or_default().insert(v.clone());
                }
                state
            }
            Stmt::Choose {
                var,
                chooser,
                domain,
                span,
            } => {
                if check {
                    self.check_role(chooser, span, "make strategic choices");
                    self.check_domain(domain, span);
                    self.introduce(var, VarType::Domain(domain.clone()), span);
                    let known = state
                        .get(chooser)
                        .map(|s| self.order(s))
                        .unwrap_or_default();
                    self.choice_info.insert(
                        id,
                        ChoiceInfo {
                            role: chooser.clone(),
                            var: var.clone(),
                            domain: domain.clone(),
                            known,
                        },
                    );
                }
                state.entry(chooser.clone()).or_default().insert(var.clone());
                state
            }
            Stmt::NatureChoose { var, domain, span } => {
                if check {
                    self.check_domain(domain, span);
                    let root = var.root();
                    if var.is_attribute() && !self.introduced.contains(&root) {
                        self.diags.push(Diagnostic::error(
                            "U007",
                            format!("unknown variable `{root}` under nature draw `{var}`"),
                            span.clone(),
                        ));
                    }
                    self.introduce(var, VarType::Domain(domain.clone()), span);
                }
                // every holder of the root observes the draw
                let root = var.root();
                for r in self.roles.clone() {
                    let holds_root = state.get(&r).map(|s| s.contains(&root)).unwrap_or(false);
                    if holds_root {
                        state.entry(r).or_default().insert(var.clone());
                    }
                }
                state
            }
            Stmt::Values { role, span, .. } => {
                if check {
                    self.check_role(role, span, "hold utility");
                }
                state
            }
            Stmt::Local {
                var,
                owner,
                expr,
                span,
            } => {
                if check {
                    self.check_role(owner, span, "compute locals");
                    self.check_expr_knowledge(expr, owner, &state, "in this computation");
                    self.introduce(var, VarType::Derived, span);
                }
                state.entry(owner.clone()).or_default().insert(var.clone());
                state
            }
            Stmt::If {
                broadcast,
                guard,
                broadcaster,
                guard_var,
                then_branch,
                else_branch,
                span,
            } => {
                if check {
                    self.check_role(broadcaster, span, "broadcast");
                    if !broadcast {
                        self.diags.push(Diagnostic::error(
                            "B002",
                            "conditional guard is not broadcast; wrap it in `broadcast(...)`"
                                .to_string(),
                            span.clone(),
                        ));
                    }
                    match guard {
                        Guard::Choice {
                            var,
                            chooser,
                            domain,
                        } => {
                            self.check_role(chooser, span, "make strategic choices");
                            if let Some(d) = self.check_domain(domain, span) {
                                let boolean = d
                                    .values
                                    .iter()
                                    .all(|v| matches!(v, Literal::Bool(_)));
                                if !boolean {
                                    self.diags.push(Diagnostic::error(
                                        "T008",
                                        format!(
                                            "guard choice domain `{domain}` is not boolean-domained"
                                        ),
                                        span.clone(),
                                    ));
                                }
                            }
                            self.introduce(var, VarType::Domain(domain.clone()), span);
                            let known = state
                                .get(chooser)
                                .map(|s| self.order(s))
                                .unwrap_or_default();
                            self.choice_info.insert(
                                id,
                                ChoiceInfo {
                                    role: chooser.clone(),
                                    var: var.clone(),
                                    domain: domain.clone(),
                                    known,
                                },
                            );
                        }
                        Guard::Expr(e) => {
                            self.check_expr_knowledge(e, broadcaster, &state, "in this guard");
                            if let Some(false) = expr_is_boolean(e, &self.var_types) {
                                self.diags.push(Diagnostic::error(
                                    "T008",
                                    "guard expression is not boolean".to_string(),
                                    span.clone(),
                                ));
                            }
                            self.introduce(guard_var, VarType::Derived, span);
                        }
                    }
                }
                // the guard value is announced to everyone
                for r in self.roles.clone() {
                    state.entry(r).or_default().insert(guard_var.clone());
                }
                let then_exit = if check {
                    self.flow(then_branch, state.clone(), mode)
                } else {
                    self.flow_silent(then_branch, state.clone(), mode)
                };
                let else_exit = if check {
                    self.flow(else_branch, state.clone(), mode)
                } else {
                    self.flow_silent(else_branch, state.clone(), mode)
                };
                join(&then_exit, &else_exit, mode)
            }
            Stmt::Exchange { span, .. } => {
                if check {
                    self.diags.push(Diagnostic::error(
                        "M011",
                        "internal: exchange survived desugaring".to_string(),
                        span.clone(),
                    ));
                }
                state
            }
        }
    }

    fn order(&self, vars: &BTreeSet<VarName>) -> Vec<VarName> {
        self.intro_order
            .iter()
            .filter(|v| vars.contains(*v))
            .cloned()
            .collect()
    }

    /// Dead `values` terms: warn when the role can never learn a referenced
    /// variable or its root on any path, so the term can never contribute.
    fn check_values_terms(&mut self, stmts: &[Stmt]) {
        let may = self.knowledge.may_know_at_end.clone();
        let mut walk: Vec<&Stmt> = Vec::new();
        preorder(stmts, &mut walk);
        for s in walk {
            if let Stmt::Values { role, term, span } = s {
                if role.is_world() {
                    continue; // already reported as W005
                }
                for v in term.vars() {
                    if !self.introduced.contains(v) {
                        self.diags.push(Diagnostic::error(
                            "U007",
                            format!("unknown variable `{v}` in values term"),
                            span.clone(),
                        ));
                        continue;
                    }
                    let reach = may
                        .get(role)
                        .map(|s| s.contains(v) || s.contains(&v.root()))
                        .unwrap_or(false);
                    if !reach {
                        self.diags.push(Diagnostic::warning(
                            "N009",
                            format!(
                                "role `{role}` never learns `{v}` (or its root) on any path; \
                                 this values term can never contribute"
                            ),
                            span.clone(),
                        ));
                    }
                }
            }
        }
    }
}

/// Boolean-ness of an expression where decidable: `Some(true)` definitely
/// boolean, `Some(false)` definitely not, `None` unknown.
fn expr_is_boolean(e: &Expr, types: &BTreeMap<VarName, VarType>) -> Option<bool> {
    match e {
        Expr::Binary(op, ..) if op.is_comparison() => Some(true),
        Expr::Binary(..) | Expr::Neg(..) => Some(false),
        Expr::Lit(Literal::Bool(_), _) => Some(true),
        Expr::Lit(..) => Some(false),
        Expr::Var(v, _) => match types.get(v) {
            Some(VarType::Domain(d)) if d == BOOL_DOMAIN => Some(true),
            Some(VarType::Domain(_)) => None, // user domain could be boolean-valued
            Some(VarType::Opaque(_)) => Some(false),
            Some(VarType::Derived) | None => None,
        },
    }
}

fn first_exchange_span(stmts: &[Stmt]) -> crate::ast::SourceSpan {
    let mut flat = Vec::new();
    preorder(stmts, &mut flat);
    for s in flat {
        if let Stmt::Exchange { span, .. } = s {
            return span.clone();
        }
    }
    crate::ast::SourceSpan::default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_protocol;

    fn bookseller() -> Protocol {
        parse_protocol(crate::bundled::BOOKSELLER).unwrap()
    }

    #[test]
    fn bookseller_checks_clean() {
        let (checked, diags) = analyze(&bookseller());
        assert!(diags.is_empty(), "unexpected diagnostics: {diags:?}");
        let c = checked.unwrap();
        assert_eq!(
            c.roles.iter().map(|r| r.name()).collect::<Vec<_>>(),
            vec!["buyer", "seller"]
        );
        assert!(c.has_nature);
    }

    #[test]
    fn seller_knows_quality_buyer_does_not() {
        let c = check_well_formed(&bookseller()).unwrap();
        // choice signatures: seller's price choice and buyer's accept choice
        let mut infos: Vec<&ChoiceInfo> = c.choice_info.values().collect();
        infos.sort_by_key(|i| i.var.name().to_string());
        assert_eq!(infos.len(), 2);
        let accept = infos[0];
        let price = infos[1];
        assert_eq!(price.var.name(), "price");
        assert_eq!(price.role.name(), "seller");
        let known: Vec<&str> = price.known.iter().map(|v| v.name()).collect();
        assert_eq!(known, vec!["title", "book", "book.quality"]);
        assert_eq!(accept.var.name(), "accept");
        assert_eq!(accept.role.name(), "buyer");
        let known: Vec<&str> = accept.known.iter().map(|v| v.name()).collect();
        assert_eq!(known, vec!["title", "price"]);
    }

    #[test]
    fn single_local_is_known_only_to_owner() {
        let p = parse_protocol(
            "param seedv : int @ r\nprotocol t {\n  x = seedv + 1\n}\n",
        )
        .unwrap();
        let c = check_well_formed(&p).unwrap();
        let r = Role::new("r");
        assert!(c.knowledge.at_end[&r].contains(&VarName::new("x")));
        assert_eq!(c.knowledge.at_end.len(), 1);
    }

    #[test]
    fn knowledge_violation_is_k001() {
        // owner of y is `a` (first var rule), but the expression also reads
        // b's local that a never received
        let src = "param pa : int @ a\nparam pb : int @ b\nprotocol t {\n  y = pa + pb\n}\n";
        let p = parse_protocol(src).unwrap();
        let errs = check_well_formed(&p).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].code, "K001");
    }

    #[test]
    fn unbroadcast_guard_is_b002() {
        let src = "param pa : int @ a\nprotocol t {\n  if pa < 10 { }\n}\n";
        let p = parse_protocol(src).unwrap();
        let errs = check_well_formed(&p).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].code, "B002");
    }

    #[test]
    fn unknown_domain_is_d003() {
        let src = "protocol t {\n  x = a.choose(Missing)\n}\n";
        let p = parse_protocol(src).unwrap();
        let errs = check_well_formed(&p).unwrap_err();
        assert!(errs.iter().any(|d| d.code == "D003"));
    }

    #[test]
    fn self_send_is_r004() {
        let src = "param pa : int @ a\nprotocol t {\n  send(pa, a)\n}\n";
        let p = parse_protocol(src).unwrap();
        let errs = check_well_formed(&p).unwrap_err();
        assert_eq!(errs[0].code, "R004");
    }

    #[test]
    fn world_misuse_is_w005() {
        let src = "param pa : int @ a\nprotocol t {\n  send(pa, world)\n}\n";
        let p = parse_protocol(src).unwrap();
        let errs = check_well_formed(&p).unwrap_err();
        assert!(errs.iter().any(|d| d.code == "W005"));
    }

    #[test]
    fn duplicate_introduction_is_v006() {
        let src = "protocol t {\n  x = a.choose(bool)\n  x = b.choose(bool)\n}\n";
        let p = parse_protocol(src).unwrap();
        let errs = check_well_formed(&p).unwrap_err();
        assert!(errs.iter().any(|d| d.code == "V006"));
    }

    #[test]
    fn dead_values_term_is_a_warning() {
        // `a` never learns q or its root (no send), so the term is dead
        let src = "param pb : int @ b\ndomain Q = { low, high }\nprotocol t {\n  pb.q <- world.choose(Q)\n  a.values(pb.q)\n  x = a.choose(bool)\n}\n";
        let p = parse_protocol(src).unwrap();
        let (checked, diags) = analyze(&p);
        assert!(checked.is_some());
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, "N009");
        assert_eq!(diags[0].severity, crate::parser::Severity::Warning);
        // warnings do not fail the check
        assert!(check_well_formed(&p).is_ok());
    }

    #[test]
    fn branch_join_intersects_knowledge() {
        let src = "param pa : int @ a\nparam pb : int @ b\nprotocol t {\n  if broadcast(a.choose(bool)) {\n    send(pa, b)\n  }\n  send(pb, a)\n}\n";
        let p = parse_protocol(src).unwrap();
        let c = check_well_formed(&p).unwrap();
        let b = Role::new("b");
        // pa is only known to b on the then path, so not at protocol end
        assert!(!c.knowledge.at_end[&b].contains(&VarName::new("pa")));
        assert!(c.knowledge.may_know_at_end[&b].contains(&VarName::new("pa")));
    }

    #[test]
    fn exchange_transfers_knowledge() {
        let c = check_well_formed(&bookseller()).unwrap();
        let buyer = Role::new("buyer");
        let seller = Role::new("seller");
        // on the accept path the buyer ends up holding the book and the
        // seller has learned the payment amount
        assert!(c.knowledge.may_know_at_end[&buyer].contains(&VarName::new("book")));
        assert!(c.knowledge.may_know_at_end[&seller].contains(&VarName::new("price")));
        // but not on every path: rejection leaves the book with the seller
        assert!(!c.knowledge.at_end[&buyer].contains(&VarName::new("book")));
    }

    #[test]
    fn single_edit_mutants_yield_exactly_one_diagnostic() {
        // each mutant replaces one statement of the bundled protocol and
        // must trip exactly one rule
        let mutants: Vec<(&str, &str, &str)> = vec![
            (
                "if broadcast(buyer.choose(bool)) {",
                "if price < 10 {",
                "B002",
            ),
            (
                "price = seller.choose(Prices)",
                "price = seller.choose(Missing)",
                "D003",
            ),
            ("send(title, seller)", "send(title, buyer)", "R004"),
            (
                "buyer.values(book.quality)",
                "world.values(book.quality)",
                "W005",
            ),
            // the buyer guards on the seller-held book it has not received
            (
                "if broadcast(buyer.choose(bool)) {",
                "if broadcast(title == book) {",
                "K001",
            ),
        ];
        for (original, replacement, expected_code) in mutants {
            let src = crate::bundled::BOOKSELLER.replace(original, replacement);
            assert_ne!(src, crate::bundled::BOOKSELLER, "edit must apply");
            let p = parse_protocol(&src).unwrap();
            let errs = check_well_formed(&p).unwrap_err();
            assert_eq!(
                errs.len(),
                1,
                "mutant `{replacement}` produced {errs:?}"
            );
            assert_eq!(errs[0].code, expected_code, "mutant `{replacement}`");
        }
    }

    #[test]
    fn knowledge_is_monotone_along_paths() {
        let c = check_well_formed(&bookseller()).unwrap();
        for (entry, exit) in c.knowledge.entry.iter().zip(c.knowledge.exit.iter()) {
            for (role, known) in entry {
                if let Some(after) = exit.get(role) {
                    assert!(known.is_subset(after), "knowledge shrank for {role}");
                }
            }
        }
    }
}
