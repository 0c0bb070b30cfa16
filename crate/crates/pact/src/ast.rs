//! Abstract syntax for Pact protocols.
//!
//! A protocol is a global (choreographic) program over a set of roles. Three
//! statement forms carry the strategic content: explicit agent choices over
//! declared finite domains, `values` declarations naming what a role's
//! utility depends on, and nature draws performed by the reserved `world`
//! role. Everything else is ordinary choreography: sends, broadcast-guarded
//! branching, local computation and the composite `exchange`.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// Source position attached to AST nodes for diagnostics.
///
/// Spans are metadata, not structure: two spans always compare equal so that
/// derived `PartialEq` on AST nodes means structural equality "up to spans".
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct SourceSpan {
    pub file: String,
    pub line: u32,
    pub column: u32,
    pub length: u32,
}

impl SourceSpan {
    pub fn new(file: &str, line: u32, column: u32, length: u32) -> Self {
        SourceSpan {
            file: file.to_string(),
            line,
            column,
            length,
        }
    }
}

impl PartialEq for SourceSpan {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for SourceSpan {}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

/// A protocol participant. The name `world` is reserved for nature.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct Role(pub String);

impl Role {
    pub const WORLD: &'static str = "world";

    pub fn new(name: impl Into<String>) -> Self {
        Role(name.into())
    }

    pub fn world() -> Self {
        Role(Self::WORLD.to_string())
    }

    pub fn is_world(&self) -> bool {
        self.0 == Self::WORLD
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Name of a located variable. Attribute variables use dotted form
/// (`book.quality`); the prefix before the first dot is the root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct VarName(pub String);

impl VarName {
    pub fn new(name: impl Into<String>) -> Self {
        VarName(name.into())
    }

    /// Root variable: `book.quality` -> `book`; plain names are their own root.
    pub fn root(&self) -> VarName {
        match self.0.split_once('.') {
            Some((head, _)) => VarName(head.to_string()),
            None => self.clone(),
        }
    }

    pub fn is_attribute(&self) -> bool {
        self.0.contains('.')
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VarName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A literal domain element. Labels may carry a numeric magnitude so that
/// arithmetic and comparisons can be evaluated over labeled domains.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum Literal {
    Int(i64),
    Bool(bool),
    Label { name: String, magnitude: Option<i64> },
}

impl Literal {
    pub fn text(&self) -> String {
        match self {
            Literal::Int(n) => n.to_string(),
            Literal::Bool(b) => b.to_string(),
            Literal::Label { name, .. } => name.clone(),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// A declared finite domain of literals.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Domain {
    pub name: String,
    pub values: Vec<Literal>,
    pub span: SourceSpan,
}

impl Domain {
    pub fn new(name: impl Into<String>, values: Vec<Literal>) -> Self {
        Domain {
            name: name.into(),
            values,
            span: SourceSpan::default(),
        }
    }

    /// The built-in boolean domain, always in scope.
    pub fn builtin_bool() -> Self {
        Domain::new(BOOL_DOMAIN, vec![Literal::Bool(false), Literal::Bool(true)])
    }
}

/// Name of the built-in boolean domain.
pub const BOOL_DOMAIN: &str = "bool";

/// Runtime value of a located variable.
///
/// `Sym` stands for an opaque protocol parameter (a string title, a good):
/// it flows through sends unchanged and never participates in arithmetic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Label { name: String, magnitude: Option<i64> },
    Sym(String),
}

impl Value {
    pub fn from_literal(lit: &Literal) -> Self {
        match lit {
            Literal::Int(n) => Value::Int(*n),
            Literal::Bool(b) => Value::Bool(*b),
            Literal::Label { name, magnitude } => Value::Label {
                name: name.clone(),
                magnitude: *magnitude,
            },
        }
    }

    pub fn text(&self) -> String {
        match self {
            Value::Int(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Label { name, .. } => name.clone(),
            Value::Sym(s) => format!("#{s}"),
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Numeric magnitude, when one exists.
    pub fn magnitude(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            Value::Bool(b) => Some(i64::from(*b)),
            Value::Label { magnitude, .. } => *magnitude,
            Value::Sym(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl BinOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
        }
    }

    pub fn is_comparison(&self) -> bool {
        matches!(
            self,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge
        )
    }
}

/// Expressions: comparisons and arithmetic over variables and literals.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum Expr {
    Var(VarName, SourceSpan),
    Lit(Literal, SourceSpan),
    Neg(Box<Expr>, SourceSpan),
    Binary(BinOp, Box<Expr>, Box<Expr>, SourceSpan),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(VarName::new(name), SourceSpan::default())
    }

    pub fn int(n: i64) -> Expr {
        Expr::Lit(Literal::Int(n), SourceSpan::default())
    }

    pub fn span(&self) -> &SourceSpan {
        match self {
            Expr::Var(_, s) | Expr::Lit(_, s) | Expr::Neg(_, s) | Expr::Binary(_, _, _, s) => s,
        }
    }

    /// Variables referenced anywhere in the expression, left to right.
    pub fn vars(&self) -> Vec<&VarName> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a VarName>) {
        match self {
            Expr::Var(v, _) => out.push(v),
            Expr::Lit(..) => {}
            Expr::Neg(e, _) => e.collect_vars(out),
            Expr::Binary(_, l, r, _) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    /// The plain variable this expression is, if it is exactly one.
    pub fn as_var(&self) -> Option<&VarName> {
        match self {
            Expr::Var(v, _) => Some(v),
            _ => None,
        }
    }
}

/// Guard of a broadcast conditional: either an inline agent choice or an
/// ordinary expression the broadcaster can evaluate.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum Guard {
    Choice {
        var: VarName,
        chooser: Role,
        domain: String,
    },
    Expr(Expr),
}

/// A protocol statement.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum Stmt {
    /// Transmission of a value from one role to another. `money` marks the
    /// payment leg of a desugared exchange: the amount is debited from the
    /// sender and credited to the receiver at the terminal.
    Send {
        payload: Expr,
        from: Role,
        to: Role,
        money: bool,
        span: SourceSpan,
    },
    /// An explicit strategic choice by a role over a declared finite domain.
    Choose {
        var: VarName,
        chooser: Role,
        domain: String,
        span: SourceSpan,
    },
    /// An exogenous draw by `world`; analysts attach priors to it.
    NatureChoose {
        var: VarName,
        domain: String,
        span: SourceSpan,
    },
    /// Declares that a role's utility depends on the given term.
    Values {
        role: Role,
        term: Expr,
        span: SourceSpan,
    },
    /// Conditional. When `broadcast` is set, the guard value is announced to
    /// every role before branching; the checker rejects conditionals that
    /// are not broadcast.
    If {
        broadcast: bool,
        guard: Guard,
        /// Role that evaluates or chooses the guard and announces it.
        broadcaster: Role,
        /// Variable under which every role learns the guard value.
        guard_var: VarName,
        then_branch: Vec<Stmt>,
        else_branch: Vec<Stmt>,
        span: SourceSpan,
    },
    /// Local computation at one role.
    Local {
        var: VarName,
        owner: Role,
        expr: Expr,
        span: SourceSpan,
    },
    /// Composite good-for-payment swap; desugars to two sends plus a money
    /// transfer, atomic in the game model.
    Exchange {
        /// Paying side: receives the item, pays the amount.
        payer: Role,
        /// Paid side: surrenders the item, collects the amount.
        payee: Role,
        item: Expr,
        payment: Expr,
        span: SourceSpan,
    },
}

impl Stmt {
    pub fn span(&self) -> &SourceSpan {
        match self {
            Stmt::Send { span, .. }
            | Stmt::Choose { span, .. }
            | Stmt::NatureChoose { span, .. }
            | Stmt::Values { span, .. }
            | Stmt::If { span, .. }
            | Stmt::Local { span, .. }
            | Stmt::Exchange { span, .. } => span,
        }
    }
}

/// A protocol parameter: a value located at one role before execution starts.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Param {
    pub var: VarName,
    pub ty: String,
    pub owner: Role,
    pub span: SourceSpan,
}

/// A parsed protocol: declarations plus a statement body.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Protocol {
    pub name: String,
    pub params: Vec<Param>,
    pub domains: Vec<Domain>,
    pub body: Vec<Stmt>,
}

impl Protocol {
    pub fn empty(name: impl Into<String>) -> Self {
        Protocol {
            name: name.into(),
            params: Vec::new(),
            domains: Vec::new(),
            body: Vec::new(),
        }
    }

    /// Looks up a domain, falling back to the built-in `bool`.
    pub fn domain(&self, name: &str) -> Option<Domain> {
        if let Some(d) = self.domains.iter().find(|d| d.name == name) {
            return Some(d.clone());
        }
        if name == BOOL_DOMAIN {
            return Some(Domain::builtin_bool());
        }
        None
    }

    /// Label literal declared in any domain, for resolving bare names in
    /// expressions.
    pub fn label(&self, name: &str) -> Option<Literal> {
        for d in &self.domains {
            for v in &d.values {
                if let Literal::Label { name: n, .. } = v {
                    if n == name {
                        return Some(v.clone());
                    }
                }
            }
        }
        None
    }
}

/// Every role mentioned in params or body. `world` is included exactly when
/// a nature draw occurs.
pub fn roles_of(p: &Protocol) -> BTreeSet<Role> {
    let mut roles = BTreeSet::new();
    for param in &p.params {
        roles.insert(param.owner.clone());
    }
    let mut has_nature = false;
    collect_roles(&p.body, &mut roles, &mut has_nature);
    roles.remove(&Role::world());
    if has_nature {
        roles.insert(Role::world());
    }
    roles
}

fn collect_roles(stmts: &[Stmt], roles: &mut BTreeSet<Role>, has_nature: &mut bool) {
    for s in stmts {
        match s {
            Stmt::Send { from, to, .. } => {
                roles.insert(from.clone());
                roles.insert(to.clone());
            }
            Stmt::Choose { chooser, .. } => {
                roles.insert(chooser.clone());
            }
            Stmt::NatureChoose { .. } => *has_nature = true,
            Stmt::Values { role, .. } => {
                roles.insert(role.clone());
            }
            Stmt::If {
                guard,
                broadcaster,
                then_branch,
                else_branch,
                ..
            } => {
                roles.insert(broadcaster.clone());
                if let Guard::Choice { chooser, .. } = guard {
                    roles.insert(chooser.clone());
                }
                collect_roles(then_branch, roles, has_nature);
                collect_roles(else_branch, roles, has_nature);
            }
            Stmt::Local { owner, .. } => {
                roles.insert(owner.clone());
            }
            Stmt::Exchange { payer, payee, .. } => {
                roles.insert(payer.clone());
                roles.insert(payee.clone());
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DesugarError {
    #[error("exchange payment is not numeric: {0}")]
    NonNumericPayment(String),
    #[error("statement is not an exchange")]
    NotAnExchange,
}

/// Allocates names that do not collide with anything already used.
#[derive(Debug, Default, Clone)]
pub struct NamePool {
    used: BTreeSet<String>,
}

impl NamePool {
    pub fn new() -> Self {
        NamePool::default()
    }

    /// Seeds the pool with every name appearing in the protocol.
    pub fn for_protocol(p: &Protocol) -> Self {
        let mut pool = NamePool::new();
        for param in &p.params {
            pool.used.insert(param.var.0.clone());
        }
        for d in &p.domains {
            pool.used.insert(d.name.clone());
            for v in &d.values {
                if let Literal::Label { name, .. } = v {
                    pool.used.insert(name.clone());
                }
            }
        }
        fn walk(stmts: &[Stmt], pool: &mut NamePool) {
            for s in stmts {
                match s {
                    Stmt::Choose { var, .. }
                    | Stmt::NatureChoose { var, .. }
                    | Stmt::Local { var, .. } => {
                        pool.used.insert(var.0.clone());
                    }
                    Stmt::If {
                        guard_var,
                        then_branch,
                        else_branch,
                        ..
                    } => {
                        pool.used.insert(guard_var.0.clone());
                        walk(then_branch, pool);
                        walk(else_branch, pool);
                    }
                    _ => {}
                }
            }
        }
        walk(&p.body, &mut pool);
        pool
    }

    pub fn claim(&mut self, name: &str) {
        self.used.insert(name.to_string());
    }

    /// First unused name in `base`, `base2`, `base3`, ...
    pub fn fresh(&mut self, base: &str) -> String {
        if self.used.insert(base.to_string()) {
            return base.to_string();
        }
        let mut i = 2usize;
        loop {
            let candidate = format!("{base}{i}");
            if self.used.insert(candidate.clone()) {
                return candidate;
            }
            i += 1;
        }
    }
}

/// Syntactic numericness used to validate exchange payments: comparisons,
/// boolean literals and unmagnituded labels are rejected; variables are
/// accepted here and checked against their domains by the checker.
fn expr_is_syntactically_numeric(e: &Expr) -> bool {
    match e {
        Expr::Var(..) => true,
        Expr::Lit(Literal::Int(_), _) => true,
        Expr::Lit(Literal::Bool(_), _) => false,
        Expr::Lit(Literal::Label { magnitude, .. }, _) => magnitude.is_some(),
        Expr::Neg(e, _) => expr_is_syntactically_numeric(e),
        Expr::Binary(op, l, r, _) => {
            !op.is_comparison()
                && expr_is_syntactically_numeric(l)
                && expr_is_syntactically_numeric(r)
        }
    }
}

/// Expands an `exchange(payer, payee, item, payment)` into primitive
/// statements: the item travels payee -> payer, then the payment travels
/// payer -> payee as a money-marked send whose amount is debited/credited at
/// the terminal. Compound item/payment expressions are first bound to fresh
/// locals at the sending side so that every transmission carries a plain
/// variable. No terminal exists between the two legs: the game model treats
/// the exchange as atomic.
pub fn desugar_exchange(s: &Stmt, pool: &mut NamePool) -> Result<Vec<Stmt>, DesugarError> {
    let (payer, payee, item, payment, span) = match s {
        Stmt::Exchange {
            payer,
            payee,
            item,
            payment,
            span,
        } => (payer, payee, item, payment, span),
        _ => return Err(DesugarError::NotAnExchange),
    };
    if !expr_is_syntactically_numeric(payment) {
        return Err(DesugarError::NonNumericPayment(
            crate::parser::render_expr(payment),
        ));
    }
    let mut out = Vec::new();
    let item_var = match item.as_var() {
        Some(_) => item.clone(),
        None => {
            let name = pool.fresh("item");
            out.push(Stmt::Local {
                var: VarName::new(&name),
                owner: payee.clone(),
                expr: item.clone(),
                span: span.clone(),
            });
            Expr::Var(VarName::new(name), span.clone())
        }
    };
    let payment_var = match payment.as_var() {
        Some(_) => payment.clone(),
        None => {
            let name = pool.fresh("payment");
            out.push(Stmt::Local {
                var: VarName::new(&name),
                owner: payer.clone(),
                expr: payment.clone(),
                span: span.clone(),
            });
            Expr::Var(VarName::new(name), span.clone())
        }
    };
    out.push(Stmt::Send {
        payload: item_var,
        from: payee.clone(),
        to: payer.clone(),
        money: false,
        span: span.clone(),
    });
    out.push(Stmt::Send {
        payload: payment_var,
        from: payer.clone(),
        to: payee.clone(),
        money: true,
        span: span.clone(),
    });
    Ok(out)
}

/// Rewrites every exchange in the body to its primitive form. The result
/// contains no `Exchange` statements, so the pass is idempotent.
pub fn desugar_protocol(p: &Protocol) -> Result<Protocol, DesugarError> {
    let mut pool = NamePool::for_protocol(p);
    let body = desugar_stmts(&p.body, &mut pool)?;
    Ok(Protocol {
        name: p.name.clone(),
        params: p.params.clone(),
        domains: p.domains.clone(),
        body,
    })
}

fn desugar_stmts(stmts: &[Stmt], pool: &mut NamePool) -> Result<Vec<Stmt>, DesugarError> {
    let mut out = Vec::new();
    for s in stmts {
        match s {
            Stmt::Exchange { .. } => out.extend(desugar_exchange(s, pool)?),
            Stmt::If {
                broadcast,
                guard,
                broadcaster,
                guard_var,
                then_branch,
                else_branch,
                span,
            } => out.push(Stmt::If {
                broadcast: *broadcast,
                guard: guard.clone(),
                broadcaster: broadcaster.clone(),
                guard_var: guard_var.clone(),
                then_branch: desugar_stmts(then_branch, pool)?,
                else_branch: desugar_stmts(else_branch, pool)?,
                span: span.clone(),
            }),
            other => out.push(other.clone()),
        }
    }
    Ok(out)
}

/// True when no `Exchange` remains anywhere in the statement tree.
pub fn is_desugared(stmts: &[Stmt]) -> bool {
    stmts.iter().all(|s| match s {
        Stmt::Exchange { .. } => false,
        Stmt::If {
            then_branch,
            else_branch,
            ..
        } => is_desugared(then_branch) && is_desugared(else_branch),
        _ => true,
    })
}
