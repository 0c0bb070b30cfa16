//! Parser and pretty-printer for the `.pact` surface syntax.
//!
//! ```text
//! file      ::= decl* proto
//! decl      ::= "param" IDENT ":" IDENT "@" IDENT
//!             | "domain" IDENT "=" "{" literal ("," literal)* "}"
//! proto     ::= "protocol" IDENT "{" stmt* "}"
//! stmt      ::= "send" "(" IDENT "," IDENT ")"
//!             | IDENT "=" IDENT "." "choose" "(" IDENT ")"
//!             | IDENT "." IDENT "<-" "world" "." "choose" "(" IDENT ")"
//!             | IDENT "." "values" "(" expr ")"
//!             | "if" "broadcast" "(" rvalue ")" "{" stmt* "}" ("else" "{" stmt* "}")?
//!             | "exchange" "(" IDENT "," IDENT "," expr "," expr ")"
//!             | IDENT "=" expr
//! rvalue    ::= IDENT "." "choose" "(" IDENT ")" | expr
//! expr      ::= comparison/arithmetic over IDENT, IDENT "." IDENT, literals
//! literal   ::= INT | "true" | "false" | IDENT ("=" INT)?
//! ```
//!
//! Statements are newline-terminated; comments `(* ... *)` nest. A plain
//! `if expr { ... }` (without `broadcast`) is accepted syntactically so the
//! checker can report the unbroadcast guard with a proper span.
//!
//! Since a send names only the payload and the destination, the parser
//! resolves the sending role from the variable's introduction site; the
//! computing role of a local and the broadcaster of an expression guard
//! are resolved the same way from the first introduced variable they
//! mention. Inline guard choices get a synthesized decision variable,
//! `accept` by convention.

mod lexer;
mod render;

pub use render::{render_expr, render_protocol};

use std::collections::BTreeMap;
use std::fmt;

use crate::ast::{
    Domain, Expr, Guard, Literal, NamePool, Param, Protocol, Role, SourceSpan, Stmt, VarName,
};
use lexer::{lex, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Error => f.write_str("error"),
            Severity::Warning => f.write_str("warning"),
        }
    }
}

/// A located problem report. Errors prevent downstream phases.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub message: String,
    pub span: SourceSpan,
}

impl Diagnostic {
    pub fn error(code: &str, message: impl Into<String>, span: SourceSpan) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code: code.to_string(),
            message: message.into(),
            span,
        }
    }

    pub fn warning(code: &str, message: impl Into<String>, span: SourceSpan) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            code: code.to_string(),
            message: message.into(),
            span,
        }
    }

    /// Line-oriented rendering: `FILE:LINE:COL: CODE: message`.
    pub fn line(&self) -> String {
        format!(
            "{}:{}:{}: {}: {}",
            self.span.file, self.span.line, self.span.column, self.code, self.message
        )
    }
}

/// True when any diagnostic in the list is an error.
pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Parses `.pact` text. On success the protocol round-trips through
/// [`render_protocol`] to a structurally identical AST.
pub fn parse_protocol(text: &str) -> Result<Protocol, Vec<Diagnostic>> {
    parse_protocol_named(text, "<input>")
}

/// As [`parse_protocol`], with an explicit file name for spans.
pub fn parse_protocol_named(text: &str, file: &str) -> Result<Protocol, Vec<Diagnostic>> {
    let (tokens, mut diags) = lex(text, file);
    let mut parser = Parser::new(tokens);
    let proto = parser.parse_file();
    diags.extend(parser.diags);
    if has_errors(&diags) {
        Err(diags)
    } else {
        match proto {
            Some(p) => Ok(p),
            None => {
                diags.push(Diagnostic::error(
                    "P003",
                    "expected a protocol declaration",
                    SourceSpan::new(file, 1, 1, 1),
                ));
                Err(diags)
            }
        }
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    diags: Vec<Diagnostic>,
    /// Variable -> introducing role, used to resolve senders and owners.
    intro: BTreeMap<String, Role>,
    labels: BTreeMap<String, Literal>,
    pool: NamePool,
}

impl Parser {
    fn new(tokens: Vec<Token>) -> Self {
        Parser {
            tokens,
            pos: 0,
            diags: Vec::new(),
            intro: BTreeMap::new(),
            labels: BTreeMap::new(),
            pool: NamePool::new(),
        }
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn peek_at(&self, k: usize) -> &Token {
        &self.tokens[(self.pos + k).min(self.tokens.len() - 1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos.min(self.tokens.len() - 1)].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn at(&self, kind: TokenKind) -> bool {
        self.peek().kind == kind
    }

    fn at_ident(&self, text: &str) -> bool {
        self.peek().kind == TokenKind::Ident && self.peek().text == text
    }

    fn eat(&mut self, kind: TokenKind) -> bool {
        if self.at(kind) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<Token, ()> {
        if self.at(kind) {
            Ok(self.bump())
        } else {
            let t = self.peek().clone();
            self.error_at(
                &t,
                "P003",
                format!("expected {what}, found `{}`", describe(&t)),
            );
            Err(())
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<Token, ()> {
        self.expect(TokenKind::Ident, what)
    }

    fn error_at(&mut self, t: &Token, code: &str, message: String) {
        self.diags
            .push(Diagnostic::error(code, message, t.span.clone()));
    }

    fn skip_newlines(&mut self) {
        while self.eat(TokenKind::Newline) {}
    }

    /// Error recovery: drop tokens to the end of the line (or a brace).
    fn recover_to_line_end(&mut self) {
        loop {
            match self.peek().kind {
                TokenKind::Newline => {
                    self.bump();
                    return;
                }
                TokenKind::RBrace | TokenKind::Eof => return,
                _ => {
                    self.bump();
                }
            }
        }
    }

    fn parse_file(&mut self) -> Option<Protocol> {
        let mut params = Vec::new();
        let mut domains: Vec<Domain> = Vec::new();
        self.skip_newlines();
        loop {
            if self.at_ident("param") {
                if let Ok(p) = self.parse_param() {
                    self.pool.claim(&p.var.0);
                    self.intro
                        .entry(p.var.0.clone())
                        .or_insert_with(|| p.owner.clone());
                    params.push(p);
                } else {
                    self.recover_to_line_end();
                }
                self.skip_newlines();
            } else if self.at_ident("domain") {
                if let Ok(d) = self.parse_domain() {
                    self.pool.claim(&d.name);
                    for v in &d.values {
                        if let Literal::Label { name, .. } = v {
                            self.pool.claim(name);
                            self.labels.insert(name.clone(), v.clone());
                        }
                    }
                    domains.push(d);
                } else {
                    self.recover_to_line_end();
                }
                self.skip_newlines();
            } else {
                break;
            }
        }
        if !self.at_ident("protocol") {
            let t = self.peek().clone();
            if t.kind != TokenKind::Eof {
                self.error_at(&t, "P003", format!("expected `protocol`, found `{}`", describe(&t)));
            }
            return None;
        }
        self.bump(); // protocol
        let name = self.expect_ident("protocol name").ok()?;
        self.expect(TokenKind::LBrace, "`{`").ok()?;
        let body = self.parse_block();
        self.skip_newlines();
        if !self.at(TokenKind::Eof) {
            let t = self.peek().clone();
            self.error_at(&t, "P003", format!("unexpected `{}` after protocol", describe(&t)));
        }
        Some(Protocol {
            name: name.text,
            params,
            domains,
            body,
        })
    }

    fn parse_param(&mut self) -> Result<Param, ()> {
        let kw = self.bump(); // param
        let var = self.expect_ident("parameter name")?;
        self.expect(TokenKind::Colon, "`:`")?;
        let ty = self.expect_ident("parameter type")?;
        self.expect(TokenKind::At, "`@`")?;
        let owner = self.expect_ident("owning role")?;
        self.expect(TokenKind::Newline, "end of line")?;
        Ok(Param {
            var: VarName::new(var.text),
            ty: ty.text,
            owner: Role::new(owner.text),
            span: kw.span,
        })
    }

    fn parse_domain(&mut self) -> Result<Domain, ()> {
        let kw = self.bump(); // domain
        let name = self.expect_ident("domain name")?;
        self.expect(TokenKind::Assign, "`=`")?;
        self.expect(TokenKind::LBrace, "`{`")?;
        let mut values = vec![self.parse_literal()?];
        while self.eat(TokenKind::Comma) {
            values.push(self.parse_literal()?);
        }
        self.expect(TokenKind::RBrace, "`}`")?;
        self.expect(TokenKind::Newline, "end of line")?;
        Ok(Domain {
            name: name.text,
            values,
            span: kw.span,
        })
    }

    fn parse_literal(&mut self) -> Result<Literal, ()> {
        if self.at(TokenKind::Minus) && self.peek_at(1).kind == TokenKind::Int {
            self.bump();
            let t = self.bump();
            let n: i64 = t.text.parse().map_err(|_| {
                self.error_at(&t, "P004", "integer literal out of range".into());
            })?;
            return Ok(Literal::Int(-n));
        }
        match self.peek().kind {
            TokenKind::Int => {
                let t = self.bump();
                let n: i64 = t.text.parse().map_err(|_| {
                    self.error_at(&t, "P004", "integer literal out of range".into());
                })?;
                Ok(Literal::Int(n))
            }
            TokenKind::Ident if self.peek().text == "true" => {
                self.bump();
                Ok(Literal::Bool(true))
            }
            TokenKind::Ident if self.peek().text == "false" => {
                self.bump();
                Ok(Literal::Bool(false))
            }
            TokenKind::Ident => {
                let t = self.bump();
                let magnitude = if self.at(TokenKind::Assign) {
                    self.bump();
                    let neg = self.eat(TokenKind::Minus);
                    let m = self.expect(TokenKind::Int, "magnitude")?;
                    let n: i64 = m.text.parse().map_err(|_| {
                        self.error_at(&m, "P004", "magnitude out of range".into());
                    })?;
                    Some(if neg { -n } else { n })
                } else {
                    None
                };
                Ok(Literal::Label {
                    name: t.text,
                    magnitude,
                })
            }
            _ => {
                let t = self.peek().clone();
                self.error_at(&t, "P003", format!("expected a literal, found `{}`", describe(&t)));
                Err(())
            }
        }
    }

    fn parse_block(&mut self) -> Vec<Stmt> {
        let mut stmts = Vec::new();
        loop {
            self.skip_newlines();
            if self.at(TokenKind::RBrace) {
                self.bump();
                return stmts;
            }
            if self.at(TokenKind::Eof) {
                let t = self.peek().clone();
                self.error_at(&t, "P003", "unexpected end of input, expected `}`".into());
                return stmts;
            }
            match self.parse_stmt() {
                Ok(s) => stmts.push(s),
                Err(()) => self.recover_to_line_end(),
            }
        }
    }

    fn end_stmt(&mut self) -> Result<(), ()> {
        if self.at(TokenKind::Newline) {
            self.bump();
            Ok(())
        } else if self.at(TokenKind::RBrace) || self.at(TokenKind::Eof) {
            Ok(())
        } else {
            let t = self.peek().clone();
            self.error_at(&t, "P003", format!("expected end of line, found `{}`", describe(&t)));
            Err(())
        }
    }

    fn parse_stmt(&mut self) -> Result<Stmt, ()> {
        if self.at_ident("send") {
            return self.parse_send();
        }
        if self.at_ident("if") {
            return self.parse_if();
        }
        if self.at_ident("exchange") {
            return self.parse_exchange();
        }
        if self.at(TokenKind::Ident) {
            // IDENT "." IDENT "<-"  -> nature draw
            // IDENT "." values "("  -> values declaration
            // IDENT "="             -> choice or local
            if self.peek_at(1).kind == TokenKind::Dot {
                if self.peek_at(2).text == "values" && self.peek_at(3).kind == TokenKind::LParen {
                    return self.parse_values();
                }
                if self.peek_at(2).kind == TokenKind::Ident
                    && self.peek_at(3).kind == TokenKind::LeftArrow
                {
                    return self.parse_nature();
                }
            }
            if self.peek_at(1).kind == TokenKind::Assign {
                return self.parse_assign();
            }
        }
        let t = self.peek().clone();
        self.error_at(&t, "P003", format!("expected a statement, found `{}`", describe(&t)));
        Err(())
    }

    fn parse_send(&mut self) -> Result<Stmt, ()> {
        let kw = self.bump(); // send
        self.expect(TokenKind::LParen, "`(`")?;
        let var = self.expect_ident("variable to send")?;
        self.expect(TokenKind::Comma, "`,`")?;
        let to = self.expect_ident("destination role")?;
        self.expect(TokenKind::RParen, "`)`")?;
        self.end_stmt()?;
        let from = match self.intro.get(&var.text) {
            Some(r) => r.clone(),
            None => {
                self.error_at(
                    &var,
                    "P005",
                    format!("unknown variable `{}`: cannot resolve the sending role", var.text),
                );
                return Err(());
            }
        };
        Ok(Stmt::Send {
            payload: Expr::Var(VarName::new(var.text), var.span),
            from,
            to: Role::new(to.text),
            money: false,
            span: kw.span,
        })
    }

    fn parse_values(&mut self) -> Result<Stmt, ()> {
        let role = self.bump(); // role ident
        self.bump(); // dot
        self.bump(); // values
        self.expect(TokenKind::LParen, "`(`")?;
        let term = self.parse_expr()?;
        self.expect(TokenKind::RParen, "`)`")?;
        self.end_stmt()?;
        Ok(Stmt::Values {
            role: Role::new(role.text),
            term,
            span: role.span,
        })
    }

    fn parse_nature(&mut self) -> Result<Stmt, ()> {
        let base = self.bump(); // root ident
        self.bump(); // dot
        let attr = self.bump(); // attribute ident
        self.bump(); // <-
        let world = self.expect_ident("`world`")?;
        if world.text != Role::WORLD {
            self.error_at(
                &world,
                "P003",
                format!("expected `world`, found `{}`", world.text),
            );
            return Err(());
        }
        self.expect(TokenKind::Dot, "`.`")?;
        let choose = self.expect_ident("`choose`")?;
        if choose.text != "choose" {
            self.error_at(&choose, "P003", "expected `choose`".into());
            return Err(());
        }
        self.expect(TokenKind::LParen, "`(`")?;
        let domain = self.expect_ident("domain name")?;
        self.expect(TokenKind::RParen, "`)`")?;
        self.end_stmt()?;
        let var = VarName::new(format!("{}.{}", base.text, attr.text));
        self.pool.claim(&var.0);
        self.intro.entry(var.0.clone()).or_insert_with(Role::world);
        Ok(Stmt::NatureChoose {
            var,
            domain: domain.text,
            span: base.span,
        })
    }

    fn parse_assign(&mut self) -> Result<Stmt, ()> {
        let target = self.bump(); // ident
        self.bump(); // =
        // choice form: IDENT "." "choose" "("
        if self.peek().kind == TokenKind::Ident
            && self.peek_at(1).kind == TokenKind::Dot
            && self.peek_at(2).text == "choose"
            && self.peek_at(3).kind == TokenKind::LParen
        {
            let chooser = self.bump();
            self.bump(); // dot
            self.bump(); // choose
            self.bump(); // (
            let domain = self.expect_ident("domain name")?;
            self.expect(TokenKind::RParen, "`)`")?;
            self.end_stmt()?;
            let var = VarName::new(target.text);
            self.pool.claim(&var.0);
            self.intro
                .entry(var.0.clone())
                .or_insert_with(|| Role::new(&chooser.text));
            return Ok(Stmt::Choose {
                var,
                chooser: Role::new(chooser.text),
                domain: domain.text,
                span: target.span,
            });
        }
        let expr = self.parse_expr()?;
        self.end_stmt()?;
        let owner = match self.infer_owner(&expr) {
            Some(r) => r,
            None => {
                self.error_at(
                    &target,
                    "P006",
                    format!(
                        "cannot infer the computing role of `{}`: the expression names no known variable",
                        target.text
                    ),
                );
                return Err(());
            }
        };
        let var = VarName::new(target.text);
        self.pool.claim(&var.0);
        self.intro.entry(var.0.clone()).or_insert_with(|| owner.clone());
        Ok(Stmt::Local {
            var,
            owner,
            expr,
            span: target.span,
        })
    }

    /// The role introducing the first known variable of the expression.
    fn infer_owner(&self, e: &Expr) -> Option<Role> {
        e.vars()
            .into_iter()
            .find_map(|v| self.intro.get(&v.0).cloned())
    }

    fn parse_if(&mut self) -> Result<Stmt, ()> {
        let kw = self.bump(); // if
        let broadcast = if self.at_ident("broadcast") && self.peek_at(1).kind == TokenKind::LParen {
            self.bump();
            self.bump();
            true
        } else {
            false
        };
        // rvalue: inline choice or expression
        let guard;
        let broadcaster;
        let guard_var;
        if self.peek().kind == TokenKind::Ident
            && self.peek_at(1).kind == TokenKind::Dot
            && self.peek_at(2).text == "choose"
            && self.peek_at(3).kind == TokenKind::LParen
        {
            let chooser = self.bump();
            self.bump(); // dot
            self.bump(); // choose
            self.bump(); // (
            let domain = self.expect_ident("domain name")?;
            self.expect(TokenKind::RParen, "`)`")?;
            let var = VarName::new(self.pool.fresh("accept"));
            self.intro
                .entry(var.0.clone())
                .or_insert_with(|| Role::new(&chooser.text));
            broadcaster = Role::new(chooser.text.clone());
            guard_var = var.clone();
            guard = Guard::Choice {
                var,
                chooser: Role::new(chooser.text),
                domain: domain.text,
            };
        } else {
            let expr = self.parse_expr()?;
            broadcaster = match self.infer_owner(&expr) {
                Some(r) => r,
                None => {
                    self.error_at(
                        &kw,
                        "P006",
                        "cannot infer the broadcaster: the guard names no known variable".into(),
                    );
                    return Err(());
                }
            };
            guard_var = VarName::new(self.pool.fresh("guard"));
            self.intro
                .entry(guard_var.0.clone())
                .or_insert_with(|| broadcaster.clone());
            guard = Guard::Expr(expr);
        }
        if broadcast {
            self.expect(TokenKind::RParen, "`)`")?;
        }
        self.expect(TokenKind::LBrace, "`{`")?;
        let then_branch = self.parse_block();
        // optional else, possibly after a newline
        let mut look = self.pos;
        while self.tokens[look].kind == TokenKind::Newline {
            look += 1;
        }
        let else_branch = if self.tokens[look].kind == TokenKind::Ident
            && self.tokens[look].text == "else"
        {
            self.pos = look + 1;
            self.expect(TokenKind::LBrace, "`{`")?;
            self.parse_block()
        } else {
            Vec::new()
        };
        self.end_stmt()?;
        Ok(Stmt::If {
            broadcast,
            guard,
            broadcaster,
            guard_var,
            then_branch,
            else_branch,
            span: kw.span,
        })
    }

    fn parse_exchange(&mut self) -> Result<Stmt, ()> {
        let kw = self.bump(); // exchange
        self.expect(TokenKind::LParen, "`(`")?;
        let payer = self.expect_ident("paying role")?;
        self.expect(TokenKind::Comma, "`,`")?;
        let payee = self.expect_ident("paid role")?;
        self.expect(TokenKind::Comma, "`,`")?;
        let item = self.parse_expr()?;
        self.expect(TokenKind::Comma, "`,`")?;
        let payment = self.parse_expr()?;
        self.expect(TokenKind::RParen, "`)`")?;
        self.end_stmt()?;
        Ok(Stmt::Exchange {
            payer: Role::new(payer.text),
            payee: Role::new(payee.text),
            item,
            payment,
            span: kw.span,
        })
    }

    fn parse_expr(&mut self) -> Result<Expr, ()> {
        let lhs = self.parse_additive()?;
        let op = match self.peek().kind {
            TokenKind::EqEq => Some(crate::ast::BinOp::Eq),
            TokenKind::Ne => Some(crate::ast::BinOp::Ne),
            TokenKind::Lt => Some(crate::ast::BinOp::Lt),
            TokenKind::Le => Some(crate::ast::BinOp::Le),
            TokenKind::Gt => Some(crate::ast::BinOp::Gt),
            TokenKind::Ge => Some(crate::ast::BinOp::Ge),
            _ => None,
        };
        if let Some(op) = op {
            let t = self.bump();
            let rhs = self.parse_additive()?;
            return Ok(Expr::Binary(op, Box::new(lhs), Box::new(rhs), t.span));
        }
        Ok(lhs)
    }

    fn parse_additive(&mut self) -> Result<Expr, ()> {
        let mut lhs = self.parse_multiplicative()?;
        loop {
            let op = match self.peek().kind {
                TokenKind::Plus => crate::ast::BinOp::Add,
                TokenKind::Minus => crate::ast::BinOp::Sub,
                _ => return Ok(lhs),
            };
            let t = self.bump();
            let rhs = self.parse_multiplicative()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs), t.span);
        }
    }

    fn parse_multiplicative(&mut self) -> Result<Expr, ()> {
        let mut lhs = self.parse_unary()?;
        while self.at(TokenKind::Star) {
            let t = self.bump();
            let rhs = self.parse_unary()?;
            lhs = Expr::Binary(crate::ast::BinOp::Mul, Box::new(lhs), Box::new(rhs), t.span);
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr, ()> {
        if self.at(TokenKind::Minus) {
            let t = self.bump();
            let inner = self.parse_unary()?;
            return Ok(Expr::Neg(Box::new(inner), t.span));
        }
        self.parse_atom()
    }

    fn parse_atom(&mut self) -> Result<Expr, ()> {
        match self.peek().kind {
            TokenKind::Int => {
                let t = self.bump();
                let n: i64 = t.text.parse().map_err(|_| {
                    self.error_at(&t, "P004", "integer literal out of range".into());
                })?;
                Ok(Expr::Lit(Literal::Int(n), t.span))
            }
            TokenKind::LParen => {
                self.bump();
                let e = self.parse_expr()?;
                self.expect(TokenKind::RParen, "`)`")?;
                Ok(e)
            }
            TokenKind::Ident => {
                let t = self.bump();
                if t.text == "true" {
                    return Ok(Expr::Lit(Literal::Bool(true), t.span));
                }
                if t.text == "false" {
                    return Ok(Expr::Lit(Literal::Bool(false), t.span));
                }
                if self.at(TokenKind::Dot) && self.peek_at(1).kind == TokenKind::Ident {
                    self.bump();
                    let attr = self.bump();
                    let name = format!("{}.{}", t.text, attr.text);
                    return Ok(Expr::Var(VarName::new(name), t.span));
                }
                // bare name: a variable if introduced, else a declared label
                if self.intro.contains_key(&t.text) {
                    return Ok(Expr::Var(VarName::new(t.text), t.span));
                }
                if let Some(lit) = self.labels.get(&t.text) {
                    return Ok(Expr::Lit(lit.clone(), t.span));
                }
                Ok(Expr::Var(VarName::new(t.text), t.span))
            }
            _ => {
                let t = self.peek().clone();
                self.error_at(&t, "P003", format!("expected an expression, found `{}`", describe(&t)));
                Err(())
            }
        }
    }
}

fn describe(t: &Token) -> String {
    match t.kind {
        TokenKind::Newline => "end of line".to_string(),
        TokenKind::Eof => "end of input".to_string(),
        _ => t.text.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::BOOL_DOMAIN;
    use crate::bundled::BOOKSELLER;

    #[test]
    fn bookseller_parses_to_expected_shape() {
        let p = parse_protocol(BOOKSELLER).unwrap();
        assert_eq!(p.name, "bookseller");
        assert_eq!(p.params.len(), 2);
        assert_eq!(p.domains.len(), 2);
        assert_eq!(p.body.len(), 6);
        assert!(matches!(&p.body[0], Stmt::NatureChoose { var, domain, .. }
            if var.name() == "book.quality" && domain == "Quality"));
        assert!(matches!(&p.body[1], Stmt::Values { role, .. } if role.name() == "buyer"));
        assert!(matches!(&p.body[2], Stmt::Send { from, to, .. }
            if from.name() == "buyer" && to.name() == "seller"));
        assert!(matches!(&p.body[3], Stmt::Choose { var, chooser, domain, .. }
            if var.name() == "price" && chooser.name() == "seller" && domain == "Prices"));
        assert!(matches!(&p.body[4], Stmt::Send { from, to, .. }
            if from.name() == "seller" && to.name() == "buyer"));
        match &p.body[5] {
            Stmt::If {
                broadcast,
                guard,
                broadcaster,
                guard_var,
                then_branch,
                else_branch,
                ..
            } => {
                assert!(broadcast);
                assert_eq!(broadcaster.name(), "buyer");
                assert_eq!(guard_var.name(), "accept");
                match guard {
                    Guard::Choice { var, chooser, domain } => {
                        assert_eq!(var.name(), "accept");
                        assert_eq!(chooser.name(), "buyer");
                        assert_eq!(domain, BOOL_DOMAIN);
                    }
                    other => panic!("expected choice guard, got {other:?}"),
                }
                assert_eq!(then_branch.len(), 1);
                assert!(matches!(&then_branch[0], Stmt::Exchange { .. }));
                assert!(else_branch.is_empty());
            }
            other => panic!("expected if, got {other:?}"),
        }
    }

    #[test]
    fn empty_protocol() {
        let p = parse_protocol("protocol empty { }").unwrap();
        assert_eq!(p.name, "empty");
        assert!(p.body.is_empty());
    }

    #[test]
    fn missing_comma_is_one_diagnostic() {
        let src = "param title : string @ buyer\nprotocol t {\n  send(title seller)\n}\n";
        let errs = parse_protocol(src).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].span.line, 3);
        assert!(errs[0].message.contains("expected `,`"));
    }

    #[test]
    fn unbroadcast_if_parses_for_the_checker() {
        let src = "protocol t {\n  price = seller.choose(bool)\n  if price { }\n}\n";
        let p = parse_protocol(src).unwrap();
        assert!(matches!(&p.body[1], Stmt::If { broadcast: false, .. }));
    }

    #[test]
    fn error_recovery_is_bounded() {
        // three independent bad statements
        let src = "protocol t {\n  send(\n  ??\n  exchange(a\n}\n";
        let errs = parse_protocol(src).unwrap_err();
        assert!(!errs.is_empty());
        assert!(errs.len() <= 5, "got {} diagnostics: {errs:?}", errs.len());
    }

    #[test]
    fn guard_choice_names_do_not_collide() {
        let src = "protocol t {\n  accept = a.choose(bool)\n  if broadcast(b.choose(bool)) { }\n}\n";
        let p = parse_protocol(src).unwrap();
        match &p.body[1] {
            Stmt::If { guard_var, .. } => assert_eq!(guard_var.name(), "accept2"),
            other => panic!("expected if, got {other:?}"),
        }
    }

    #[test]
    fn labels_resolve_in_expressions() {
        let src = "domain Q = { low = 1, high = 2 }\nprotocol t {\n  q = a.choose(Q)\n  if broadcast(q == high) { }\n}\n";
        let p = parse_protocol(src).unwrap();
        match &p.body[1] {
            Stmt::If { guard: Guard::Expr(e), .. } => {
                let rendered = render_expr(e);
                assert_eq!(rendered, "q == high");
                match e {
                    Expr::Binary(_, _, rhs, _) => {
                        assert!(matches!(&**rhs, Expr::Lit(Literal::Label { magnitude: Some(2), .. }, _)));
                    }
                    other => panic!("unexpected guard {other:?}"),
                }
            }
            other => panic!("expected expr guard, got {other:?}"),
        }
    }
}
