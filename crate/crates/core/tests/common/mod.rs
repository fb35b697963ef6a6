//! Oracles and fixtures shared by the integration tests. The oracles here are
//! deliberately simple (composite Simpson, factorials) and do not call into
//! the library's own quadrature.

#![allow(dead_code)]

use cmpp_core::dist::Distribution;
use cmpp_core::expr::{RealFn, Variable};
use cmpp_core::model::{BaseModel, DerivedModel, MeasureChange};

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Gamma density, rate first, integer shape.
pub fn gamma_pdf(rate: f64, shape: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    rate.powi(shape as i32) * x.powi(shape as i32 - 1) * (-rate * x).exp() / factorial(shape - 1)
}

pub fn theta(src: &str) -> RealFn {
    RealFn::parse(src, Variable::Theta).unwrap()
}

pub fn claim_fn(src: &str) -> RealFn {
    RealFn::parse(src, Variable::X).unwrap()
}

pub fn change(alpha: &str, gamma: &str, xi: &str) -> MeasureChange {
    MeasureChange::new(theta(alpha), claim_fn(gamma), theta(xi)).unwrap()
}

/// Claims `Exp(1/5)`, mixing `Ga(2, 2)`.
pub fn ex62_base() -> BaseModel {
    BaseModel::standard(
        Distribution::exponential(0.2).unwrap(),
        Distribution::gamma(2.0, 2.0).unwrap(),
    )
    .unwrap()
}

pub fn ex62_change() -> MeasureChange {
    change("ln(theta)", "ln(x/5)", "(27/8)*theta^2*exp(-theta)")
}

pub fn ex62() -> DerivedModel {
    DerivedModel::build(&ex62_base(), &ex62_change(), 2).unwrap()
}

/// Claims `Ga(c+1, 2)`, mixing `Be(2, 1)`.
pub fn ex63_base(c: f64) -> BaseModel {
    BaseModel::standard(
        Distribution::gamma(c + 1.0, 2.0).unwrap(),
        Distribution::beta(2.0, 1.0).unwrap(),
    )
    .unwrap()
}

pub fn ex63_change(c: f64) -> MeasureChange {
    MeasureChange::new(
        theta("ln(c+theta) + 2*ln((c+1)/(c+1+theta))").bind("c", c),
        claim_fn("c*x - 2*ln(c+1)").bind("c", c),
        theta("1/(2*theta)"),
    )
    .unwrap()
}

pub fn ex63(c: f64) -> DerivedModel {
    DerivedModel::build(&ex63_base(c), &ex63_change(c), 2).unwrap()
}

/// `|a − b| ≤ tol · max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
