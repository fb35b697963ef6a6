//! Recognizes tilt weights of the form `exp(c0) * v^k * exp(s*v)` so that a
//! tilted catalog law can be replaced by its catalog equivalent.

use crate::dist::Distribution;
use crate::expr::{BinOp, Expr, Func};

/// `c0 + k*ln(v) + s*v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LogLinear {
    pub c0: f64,
    pub k: f64,
    pub s: f64,
}

impl LogLinear {
    fn constant(c0: f64) -> Self {
        LogLinear { c0, k: 0.0, s: 0.0 }
    }

    fn add(self, o: Self) -> Self {
        LogLinear {
            c0: self.c0 + o.c0,
            k: self.k + o.k,
            s: self.s + o.s,
        }
    }

    fn scale(self, f: f64) -> Self {
        LogLinear {
            c0: self.c0 * f,
            k: self.k * f,
            s: self.s * f,
        }
    }
}

fn constant_value(e: &Expr) -> Option<f64> {
    if e.has_var() {
        return None;
    }
    e.eval(0.0).ok().filter(|v| v.is_finite())
}

/// Decomposes `e` itself as `c0 + k ln v + s v`.
pub(crate) fn linear_form(e: &Expr) -> Option<LogLinear> {
    if let Some(v) = constant_value(e) {
        return Some(LogLinear::constant(v));
    }
    match e {
        Expr::Var(_) => Some(LogLinear { c0: 0.0, k: 0.0, s: 1.0 }),
        Expr::Neg(inner) => linear_form(inner).map(|f| f.scale(-1.0)),
        Expr::Call(Func::Ln, inner) => log_form(inner),
        Expr::Bin(BinOp::Add, l, r) => Some(linear_form(l)?.add(linear_form(r)?)),
        Expr::Bin(BinOp::Sub, l, r) => Some(linear_form(l)?.add(linear_form(r)?.scale(-1.0))),
        Expr::Bin(BinOp::Mul, l, r) => match (constant_value(l), constant_value(r)) {
            (Some(c), None) => linear_form(r).map(|f| f.scale(c)),
            (None, Some(c)) => linear_form(l).map(|f| f.scale(c)),
            _ => None,
        },
        Expr::Bin(BinOp::Div, l, r) => {
            let c = constant_value(r)?;
            linear_form(l).map(|f| f.scale(1.0 / c))
        }
        _ => None,
    }
}

/// Decomposes `ln(e)` as `c0 + k ln v + s v`.
pub(crate) fn log_form(e: &Expr) -> Option<LogLinear> {
    if let Some(v) = constant_value(e) {
        return (v > 0.0).then(|| LogLinear::constant(v.ln()));
    }
    match e {
        Expr::Var(_) => Some(LogLinear { c0: 0.0, k: 1.0, s: 0.0 }),
        Expr::Call(Func::Exp, inner) => linear_form(inner),
        Expr::Call(Func::Sqrt, inner) => log_form(inner).map(|f| f.scale(0.5)),
        Expr::Bin(BinOp::Mul, l, r) => Some(log_form(l)?.add(log_form(r)?)),
        Expr::Bin(BinOp::Div, l, r) => Some(log_form(l)?.add(log_form(r)?.scale(-1.0))),
        Expr::Bin(BinOp::Pow, b, p) => {
            let p = constant_value(p)?;
            log_form(b).map(|f| f.scale(p))
        }
        _ => None,
    }
}

/// Catalog law with density `exp(form(v)) * base_density(v)`, when the table
/// of closure rules has one. The caller still verifies the candidate
/// pointwise.
pub(crate) fn close(base: &Distribution, form: LogLinear) -> Option<Distribution> {
    let LogLinear { k, s, .. } = form;
    match *base {
        Distribution::Degenerate { .. } => Some(base.clone()),
        Distribution::Exponential { rate } => gamma_like(rate - s, 1.0 + k),
        Distribution::Gamma { rate, shape } => gamma_like(rate - s, shape + k),
        Distribution::Beta { a, b } if s == 0.0 => beta_like(a + k, b),
        Distribution::Uniform { lo, hi } if lo == 0.0 && hi == 1.0 && s == 0.0 => beta_like(1.0 + k, 1.0),
        _ => None,
    }
}

fn gamma_like(rate: f64, shape: f64) -> Option<Distribution> {
    if shape == 1.0 {
        Distribution::exponential(rate).ok()
    } else {
        Distribution::gamma(rate, shape).ok()
    }
}

fn beta_like(a: f64, b: f64) -> Option<Distribution> {
    if a == 1.0 && b == 1.0 {
        Distribution::uniform(0.0, 1.0).ok()
    } else {
        Distribution::beta(a, b).ok()
    }
}
