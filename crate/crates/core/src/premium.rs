//! Premium densities, the premium schedule, the two premium-loading
//! conditions, and preset measure changes (Esscher and expected value).
//!
//! The premium density of a measure is the expected aggregate claim per unit
//! time: `p(P) = E_P[h(Θ)] E_P[X_1]` and `p(Q) = E_Q[g(Θ)] E_Q[X_1]`. Given
//! `Θ = θ` the densities are `p(P_θ) = h(θ) E_P[X_1]` and
//! `p(Q_θ) = g(θ) E_Q[X_1]`.

use thiserror::Error;

use crate::dist::DistError;
use crate::expr::{BinOp, Expr, ExprError, RealFn, Variable};
use crate::model::{BaseModel, DerivedModel, LawForm, MeasureChange, ModelError};
use crate::quad::{QuadError, Quadrature};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PremiumError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("expression error: {0}")]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("need 0 <= t <= T, got t = {t}, T = {horizon}")]
    BadInterval { t: f64, horizon: f64 },
    #[error("c = {c} violates c + 3 > (c + 2)^2 ln((c + 2)/(c + 1))")]
    AssumptionViolated { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Both derived laws are catalog laws.
    ClosedForm,
    /// At least one derived law is a tilted law handled by quadrature.
    Quadrature,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ClosedForm => "closed-form",
            Method::Quadrature => "quadrature",
        }
    }
}

/// `lower < upper < ∞`, with the margin `upper − lower`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loading {
    pub lower: f64,
    pub upper: f64,
    pub margin: f64,
    pub holds: bool,
}

impl Loading {
    fn new(lower: f64, upper: f64) -> Self {
        Loading {
            lower,
            upper,
            margin: upper - lower,
            holds: lower < upper && upper.is_finite(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PremiumQuote {
    /// `p(P) = E_P[h(Θ)] E_P[X_1]`.
    pub p_base: f64,
    /// `p(Q) = E_Q[g(Θ)] E_Q[X_1]`, from the derived laws.
    pub p_derived: f64,
    /// `E_P[ξ(Θ) g(Θ)] E_P[X_1 e^{γ(X_1)}]`: the same number computed on the
    /// base side only.
    pub p_derived_check: f64,
    /// `θ ↦ p(P_θ)`.
    pub per_theta_base: RealFn,
    /// `θ ↦ p(Q_θ)`.
    pub per_theta_derived: RealFn,
    /// `p(P) < p(Q) < ∞`. The expected aggregates are linear in `t`, so the
    /// comparison at `t = 1` decides it for every `t > 0`.
    pub cond13: Loading,
    pub method: Method,
}

/// Rounds to 15 significant digits so that `10.000000000000002` prints as `10`.
fn snap(v: f64) -> f64 {
    format!("{v:.14e}").parse().unwrap_or(v)
}

fn scaled(k: f64, f: &RealFn) -> RealFn {
    f.map_expr(|e| Expr::bin(BinOp::Mul, Expr::Num(snap(k)), e)).simplified()
}

/// Premium densities of the base model and, if given, the derived model.
/// Without a derived model the identity change is assumed.
pub fn premium_density(base: &BaseModel, derived: Option<&DerivedModel>) -> Result<PremiumQuote, PremiumError> {
    let rate = base.rate();
    let mean_rate = base.mixing().expect(|th| rate.eval(th))?;
    let p_base = mean_rate * base.claim_mean();
    let per_theta_base = scaled(base.claim_mean(), rate);
    let Some(d) = derived else {
        return Ok(PremiumQuote {
            p_base,
            p_derived: p_base,
            p_derived_check: p_base,
            per_theta_base: per_theta_base.clone(),
            per_theta_derived: per_theta_base,
            cond13: Loading::new(p_base, p_base),
            method: Method::ClosedForm,
        });
    };
    let g = d.g();
    let mean_g = d.q_mixing().expect(|th| g.eval(th))?;
    let p_derived = mean_g * d.q_claim_mean();
    let report = d.report();
    let p_derived_check = match (report.mixing_gates[0].value(), report.claim_gates[0].value()) {
        (Some(a), Some(b)) => a * b,
        _ => f64::INFINITY,
    };
    let method = if d.claim_form() == LawForm::Catalog && d.mixing_form() == LawForm::Catalog {
        Method::ClosedForm
    } else {
        Method::Quadrature
    };
    Ok(PremiumQuote {
        p_base,
        p_derived,
        p_derived_check,
        per_theta_base,
        per_theta_derived: scaled(d.q_claim_mean(), g),
        cond13: Loading::new(p_base, p_derived),
        method,
    })
}

/// Premium still to be collected over `(t, T]`: `(T − t) p(Q)`.
pub fn premium_schedule(quote: &PremiumQuote, t: f64, horizon: f64) -> Result<f64, PremiumError> {
    if !(0.0 <= t && t <= horizon) {
        return Err(PremiumError::BadInterval { t, horizon });
    }
    Ok((horizon - t) * quote.p_derived)
}

pub fn check_condition_13(quote: &PremiumQuote) -> Loading {
    quote.cond13
}

/// `p(P_θ) < p(Q_θ) < ∞` at one `θ`.
pub fn check_condition_14(theta: f64, derived: &DerivedModel) -> Result<Loading, PremiumError> {
    let base = derived.base();
    let p_theta = base.rate_at(theta)? * base.claim_mean();
    let q_theta = derived.g_at(theta)? * derived.q_claim_mean();
    Ok(Loading::new(p_theta, q_theta))
}

/// Esscher change: `γ(x) = c x − ln E_P[e^{c X_1}]`, `α = 0`, and `ξ`
/// (default 1). The normalizer enters as the bound parameter `k`.
pub fn esscher_change(c: f64, base: &BaseModel, xi: Option<RealFn>) -> Result<MeasureChange, PremiumError> {
    let k = base.claim().mgf(c)?.ln();
    let gamma = RealFn::parse("c*x - k", Variable::X)?.bind("c", c).bind("k", k);
    let alpha = RealFn::constant(0.0, Variable::Theta);
    let xi = xi.unwrap_or_else(|| RealFn::constant(1.0, Variable::Theta));
    Ok(MeasureChange::new(alpha, gamma, xi)?)
}

/// Expected-value change: `α = c`, `γ = 0`, and `ξ` (default 1), so that
/// `g = e^c h`.
pub fn expected_value_change(c: f64, xi: Option<RealFn>) -> Result<MeasureChange, PremiumError> {
    let alpha = RealFn::parse("c", Variable::Theta)?.bind("c", c);
    let gamma = RealFn::constant(0.0, Variable::X);
    let xi = xi.unwrap_or_else(|| RealFn::constant(1.0, Variable::Theta));
    Ok(MeasureChange::new(alpha, gamma, xi)?)
}

/// `J(c) = (c + 3)/(c + 2) + (c + 2) ln((c + 1)/(c + 2))`, which equals
/// `∫_0^1 θ(c + θ)/(c + 1 + θ)^2 dθ`. Requires `c > 0` and
/// `c + 3 > (c + 2)^2 ln((c + 2)/(c + 1))`.
pub fn j_integral(c: f64) -> Result<f64, PremiumError> {
    let holds = c > 0.0 && c + 3.0 > (c + 2.0).powi(2) * ((c + 2.0) / (c + 1.0)).ln();
    if !holds {
        return Err(PremiumError::AssumptionViolated { c });
    }
    Ok((c + 3.0) / (c + 2.0) + (c + 2.0) * ((c + 1.0) / (c + 2.0)).ln())
}

/// `J(c)` by direct quadrature of its integrand.
pub fn j_integral_quadrature(c: f64) -> Result<f64, PremiumError> {
    let r = Quadrature::default().integrate(|th| th * (c + th) / (c + 1.0 + th).powi(2), 0.0, 1.0)?;
    Ok(r.value)
}
