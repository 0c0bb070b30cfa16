//! Expression evaluation over variable bindings.
//!
//! Arithmetic works on numeric magnitudes (integers, booleans as 0/1, and
//! labels that declare a magnitude). Equality compares labels and opaque
//! parameter tokens by name; ordered comparisons require magnitudes on both
//! sides.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ast::{BinOp, Expr, Value, VarName};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("variable `{0}` is not bound")]
    Unbound(VarName),
    #[error("value `{0}` has no numeric magnitude")]
    NotNumeric(String),
    #[error("values `{0}` and `{1}` cannot be ordered")]
    NotComparable(String, String),
}

pub type Bindings = BTreeMap<VarName, Value>;

pub fn eval_expr(e: &Expr, env: &Bindings) -> Result<Value, EvalError> {
    match e {
        Expr::Var(v, _) => env.get(v).cloned().ok_or_else(|| EvalError::Unbound(v.clone())),
        Expr::Lit(l, _) => Ok(Value::from_literal(l)),
        Expr::Neg(inner, _) => {
            let v = eval_expr(inner, env)?;
            let m = v.magnitude().ok_or_else(|| EvalError::NotNumeric(v.text()))?;
            Ok(Value::Int(-m))
        }
        Expr::Binary(op, l, r, _) => {
            let lv = eval_expr(l, env)?;
            let rv = eval_expr(r, env)?;
            apply(*op, &lv, &rv)
        }
    }
}

fn apply(op: BinOp, l: &Value, r: &Value) -> Result<Value, EvalError> {
    match op {
        BinOp::Add | BinOp::Sub | BinOp::Mul => {
            let a = l.magnitude().ok_or_else(|| EvalError::NotNumeric(l.text()))?;
            let b = r.magnitude().ok_or_else(|| EvalError::NotNumeric(r.text()))?;
            Ok(Value::Int(match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                _ => a * b,
            }))
        }
        BinOp::Eq => Ok(Value::Bool(values_equal(l, r))),
        BinOp::Ne => Ok(Value::Bool(!values_equal(l, r))),
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
            let (a, b) = match (l.magnitude(), r.magnitude()) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(EvalError::NotComparable(l.text(), r.text())),
            };
            Ok(Value::Bool(match op {
                BinOp::Lt => a < b,
                BinOp::Le => a <= b,
                BinOp::Gt => a > b,
                _ => a >= b,
            }))
        }
    }
}

fn values_equal(l: &Value, r: &Value) -> bool {
    match (l, r) {
        (Value::Label { name: a, .. }, Value::Label { name: b, .. }) => a == b,
        (Value::Sym(a), Value::Sym(b)) => a == b,
        _ => match (l.magnitude(), r.magnitude()) {
            (Some(a), Some(b)) => a == b,
            _ => l == r,
        },
    }
}
