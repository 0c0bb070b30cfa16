//! Canonical pretty-printer. `parse(render(p))` is structurally identical to
//! `p` (spans aside) for every parseable protocol.

use crate::ast::{BinOp, Domain, Expr, Guard, Literal, Param, Protocol, Stmt};

/// Renders a protocol to canonical `.pact` text.
pub fn render_protocol(p: &Protocol) -> String {
    let mut out = String::new();
    for param in &p.params {
        out.push_str(&render_param(param));
        out.push('\n');
    }
    for d in &p.domains {
        out.push_str(&render_domain(d));
        out.push('\n');
    }
    if !p.params.is_empty() || !p.domains.is_empty() {
        out.push('\n');
    }
    out.push_str(&format!("protocol {} {{\n", p.name));
    for s in &p.body {
        render_stmt(s, 1, &mut out);
    }
    out.push_str("}\n");
    out
}

fn render_param(p: &Param) -> String {
    format!("param {} : {} @ {}", p.var, p.ty, p.owner)
}

fn render_domain(d: &Domain) -> String {
    let values: Vec<String> = d
        .values
        .iter()
        .map(|v| match v {
            Literal::Label {
                name,
                magnitude: Some(m),
            } => format!("{name} = {m}"),
            other => other.text(),
        })
        .collect();
    format!("domain {} = {{ {} }}", d.name, values.join(", "))
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn render_stmt(s: &Stmt, depth: usize, out: &mut String) {
    indent(depth, out);
    match s {
        Stmt::Send { payload, to, .. } => {
            out.push_str(&format!("send({}, {})\n", render_expr(payload), to));
        }
        Stmt::Choose {
            var,
            chooser,
            domain,
            ..
        } => {
            out.push_str(&format!("{var} = {chooser}.choose({domain})\n"));
        }
        Stmt::NatureChoose { var, domain, .. } => {
            out.push_str(&format!("{var} <- world.choose({domain})\n"));
        }
        Stmt::Values { role, term, .. } => {
            out.push_str(&format!("{role}.values({})\n", render_expr(term)));
        }
        Stmt::If {
            broadcast,
            guard,
            then_branch,
            else_branch,
            ..
        } => {
            let guard_text = match guard {
                Guard::Choice {
                    chooser, domain, ..
                } => format!("{chooser}.choose({domain})"),
                Guard::Expr(e) => render_expr(e),
            };
            if *broadcast {
                out.push_str(&format!("if broadcast({guard_text}) {{\n"));
            } else {
                out.push_str(&format!("if {guard_text} {{\n"));
            }
            for s in then_branch {
                render_stmt(s, depth + 1, out);
            }
            if else_branch.is_empty() {
                indent(depth, out);
                out.push_str("}\n");
            } else {
                indent(depth, out);
                out.push_str("} else {\n");
                for s in else_branch {
                    render_stmt(s, depth + 1, out);
                }
                indent(depth, out);
                out.push_str("}\n");
            }
        }
        Stmt::Local { var, expr, .. } => {
            out.push_str(&format!("{var} = {}\n", render_expr(expr)));
        }
        Stmt::Exchange {
            payer,
            payee,
            item,
            payment,
            ..
        } => {
            out.push_str(&format!(
                "exchange({}, {}, {}, {})\n",
                payer,
                payee,
                render_expr(item),
                render_expr(payment)
            ));
        }
    }
}

// expression precedence levels, higher binds tighter
fn level(e: &Expr) -> u8 {
    match e {
        Expr::Binary(op, ..) if op.is_comparison() => 1,
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 2,
        Expr::Binary(BinOp::Mul, ..) => 3,
        Expr::Neg(..) => 4,
        Expr::Var(..) | Expr::Lit(..) => 5,
        Expr::Binary(..) => 2,
    }
}

/// Renders an expression with minimal parentheses.
pub fn render_expr(e: &Expr) -> String {
    match e {
        Expr::Var(v, _) => v.to_string(),
        Expr::Lit(l, _) => l.text(),
        Expr::Neg(inner, _) => {
            let body = render_expr(inner);
            if level(inner) < 4 {
                format!("-({body})")
            } else {
                format!("-{body}")
            }
        }
        Expr::Binary(op, l, r, _) => {
            let my = level(e);
            // arithmetic is left-associative: same-level right children need
            // parens; comparisons are non-associative: both sides do
            let lp = if op.is_comparison() {
                level(l) <= my
            } else {
                level(l) < my
            };
            let rp = level(r) <= my;
            let lhs = if lp {
                format!("({})", render_expr(l))
            } else {
                render_expr(l)
            };
            let rhs = if rp {
                format!("({})", render_expr(r))
            } else {
                render_expr(r)
            };
            format!("{lhs} {} {rhs}", op.symbol())
        }
    }
}
