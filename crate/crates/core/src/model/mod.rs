//! Base models, measure changes, admissibility checks and the derived
//! Q-side model.
//!
//! Under the base measure `P` the mixing value `Θ` is drawn from the mixing
//! law, events arrive at rate `h(Θ)`, and claims are i.i.d. from the claim
//! law. A measure change `(α, γ, ξ)` tilts the claim law by `e^{γ(x)}`, the
//! mixing law by `ξ(θ)`, and moves the arrival rate to `g(θ) = h(θ) e^{α(θ)}`.

mod closure;

use std::cell::Cell;
use std::fmt;

use thiserror::Error;

use crate::dist::{DistError, Distribution, TiltWeight};
use crate::expr::{BinOp, Expr, ExprError, Func, RealFn, Variable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("expression error: {0}")]
    Expr(#[from] ExprError),
    #[error("`{role}` must be a function of `{expected}`")]
    WrongVariable { role: &'static str, expected: &'static str },
    #[error("{0}")]
    Support(String),
    #[error("rate h({theta}) = {value} is not positive")]
    RateNotPositive { theta: f64, value: f64 },
    #[error("claim law has no finite mean")]
    InfiniteClaimMean,
    #[error("measure change is not validated: {0}")]
    NotValidated(String),
}

fn weight_error(e: DistError) -> ModelError {
    match e {
        DistError::Weight(inner) => ModelError::Expr(inner),
        other => ModelError::Dist(other),
    }
}

#[derive(Debug, Clone)]
pub struct BaseModel {
    claim: Distribution,
    mixing: Distribution,
    rate: RealFn,
    claim_mean: f64,
}

impl BaseModel {
    pub fn new(claim: Distribution, mixing: Distribution, rate: RealFn) -> Result<Self, ModelError> {
        if rate.variable() != Variable::Theta {
            return Err(ModelError::WrongVariable { role: "h", expected: "theta" });
        }
        for (role, law) in [("claim", &claim), ("mixing", &mixing)] {
            let s = law.support();
            if s.lo < 0.0 {
                return Err(ModelError::Support(format!(
                    "{role} law {law} puts mass on negative values"
                )));
            }
        }
        for theta in mixing.support_grid(64) {
            let value = rate.eval(theta)?;
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::RateNotPositive { theta, value });
            }
        }
        let claim_mean = claim.mean().map_err(|_| ModelError::InfiniteClaimMean)?;
        if !claim_mean.is_finite() {
            return Err(ModelError::InfiniteClaimMean);
        }
        Ok(BaseModel {
            claim,
            mixing,
            rate,
            claim_mean,
        })
    }

    /// Base model with `h(θ) = θ`.
    pub fn standard(claim: Distribution, mixing: Distribution) -> Result<Self, ModelError> {
        BaseModel::new(claim, mixing, RealFn::identity(Variable::Theta))
    }

    pub fn claim(&self) -> &Distribution {
        &self.claim
    }

    pub fn mixing(&self) -> &Distribution {
        &self.mixing
    }

    pub fn rate(&self) -> &RealFn {
        &self.rate
    }

    /// `E_P[X_1]`.
    pub fn claim_mean(&self) -> f64 {
        self.claim_mean
    }

    pub fn rate_at(&self, theta: f64) -> Result<f64, ExprError> {
        self.rate.eval(theta)
    }

    pub fn has_identity_rate(&self) -> bool {
        matches!(self.rate.resolved(), Expr::Var(Variable::Theta))
    }

    /// `P(N_t = n) = ∫ e^{-t h(θ)} (t h(θ))^n / n! dP_Θ(θ)`.
    pub fn mixed_count_pmf(&self, t: f64, n: u64) -> Result<f64, ModelError> {
        mixed_poisson_pmf(&self.mixing, &self.rate, t, n)
    }
}

/// Mixed Poisson probability with intensity `t * rate(Θ)`, `Θ ~ mixing`.
pub fn mixed_poisson_pmf(mixing: &Distribution, rate: &RealFn, t: f64, n: u64) -> Result<f64, ModelError> {
    let nf = n as f64;
    let ln_fact = statrs::function::gamma::ln_gamma(nf + 1.0);
    mixing
        .expect_raw(
            |theta, ld| {
                let lam = t * rate.eval(theta)?;
                if lam == 0.0 {
                    return Ok(if n == 0 { ld.exp() } else { 0.0 });
                }
                Ok((nf * lam.ln() - lam - ln_fact + ld).exp())
            },
            "mixed Poisson pmf",
        )
        .map_err(weight_error)
}

/// The triple `(α, γ, ξ)`: `β(x, θ) = α(θ) + γ(x)` and the mixing density `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureChange {
    alpha: RealFn,
    gamma: RealFn,
    xi: RealFn,
}

impl MeasureChange {
    pub fn new(alpha: RealFn, gamma: RealFn, xi: RealFn) -> Result<Self, ModelError> {
        let roles = [
            ("alpha", &alpha, Variable::Theta),
            ("gamma", &gamma, Variable::X),
            ("xi", &xi, Variable::Theta),
        ];
        for (role, f, var) in roles {
            if f.variable() != var {
                return Err(ModelError::WrongVariable { role, expected: var.name() });
            }
            if let Some(name) = f.param_names().into_iter().find(|p| !f.params().contains_key(p)) {
                return Err(ModelError::Expr(ExprError::UnboundParameter(name)));
            }
        }
        Ok(MeasureChange { alpha, gamma, xi })
    }

    /// `α = 0`, `γ = 0`, `ξ = 1`.
    pub fn identity() -> Self {
        MeasureChange {
            alpha: RealFn::constant(0.0, Variable::Theta),
            gamma: RealFn::constant(0.0, Variable::X),
            xi: RealFn::constant(1.0, Variable::Theta),
        }
    }

    pub fn alpha(&self) -> &RealFn {
        &self.alpha
    }

    pub fn gamma(&self) -> &RealFn {
        &self.gamma
    }

    pub fn xi(&self) -> &RealFn {
        &self.xi
    }

    pub fn is_identity(&self) -> bool {
        let is = |f: &RealFn, v: f64| matches!(f.simplified().resolved(), Expr::Num(n) if *n == v);
        is(&self.alpha, 0.0) && is(&self.gamma, 0.0) && is(&self.xi, 1.0)
    }
}

impl fmt::Display for MeasureChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "alpha={}; gamma={}; xi={}",
            self.alpha.resolved(),
            self.gamma.resolved(),
            self.xi.resolved()
        )
    }
}

/// `g(θ) = θ e^{α(θ)}`, simplified symbolically.
pub fn derive_g(change: &MeasureChange) -> RealFn {
    derive_g_with_rate(change, &RealFn::identity(Variable::Theta))
}

/// `g(θ) = h(θ) e^{α(θ)}` for a general base rate `h`.
pub fn derive_g_with_rate(change: &MeasureChange, rate: &RealFn) -> RealFn {
    rate.combine(BinOp::Mul, &change.alpha.compose(Func::Exp)).simplified()
}

/// Outcome of one integrability gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Finite(f64),
    Divergent,
}

impl Gate {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Gate::Finite(v) => Some(v),
            Gate::Divergent => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Gate::Finite(_))
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gate::Finite(v) => write!(f, "{v}"),
            Gate::Divergent => f.write_str("divergent"),
        }
    }
}

fn gate(r: Result<f64, DistError>) -> Result<Gate, ModelError> {
    match r {
        Ok(v) if v.is_finite() => Ok(Gate::Finite(v)),
        Ok(_) | Err(DistError::DivergentMoment(_)) | Err(DistError::Quadrature(_)) => Ok(Gate::Divergent),
        Err(e) => Err(weight_error(e)),
    }
}

/// Tolerance on the two normalizations.
pub const NORM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    /// `E_P[e^{γ(X_1)}]`.
    pub gamma_norm: Gate,
    /// `E_P[ξ(Θ)]`.
    pub xi_norm: Gate,
    /// `ξ > 0` on the checked grid and at every quadrature node visited.
    pub xi_positive: bool,
    pub level_requested: u8,
    /// Highest `ℓ ∈ {1, 2}` whose gates are finite, 0 if none.
    pub level_achieved: u8,
    /// `E_P[X_1^ℓ e^{γ(X_1)}]` for `ℓ = 1, 2`.
    pub claim_gates: [Gate; 2],
    /// `E_P[ξ(Θ) g(Θ)^ℓ]` for `ℓ = 1, 2`.
    pub mixing_gates: [Gate; 2],
    pub verdict: bool,
    pub issues: Vec<String>,
    fingerprint: String,
}

fn fingerprint(base: &BaseModel, change: &MeasureChange) -> String {
    format!(
        "{} | {} | h={} | {}",
        base.claim,
        base.mixing,
        base.rate.resolved(),
        change
    )
}

/// Checks that `(α, γ, ξ)` defines an admissible change at level `ℓ`:
/// both normalizations equal 1 within [`NORM_TOL`], `ξ` is positive, and the
/// moment gates up to `ℓ` are finite. Divergent integrals are reported as
/// failing gates.
pub fn validate_change(base: &BaseModel, change: &MeasureChange, level: u8) -> Result<AdmissibilityReport, ModelError> {
    let level = level.clamp(1, 2);
    let claim = &base.claim;
    let mixing = &base.mixing;
    let gamma = &change.gamma;
    let xi = &change.xi;
    let g = derive_g_with_rate(change, &base.rate);
    let mut issues = Vec::new();

    let gamma_norm = gate(claim.expect_raw(|x, ld| Ok((gamma.eval(x)? + ld).exp()), "E[e^gamma(X)]"))?;

    let min_xi = Cell::new(f64::INFINITY);
    let xi_norm = gate(mixing.expect_raw(
        |theta, ld| {
            let w = xi.eval(theta)?;
            let d = ld.exp();
            // nodes far in the tail where the density underflows carry no mass
            if d > 0.0 {
                min_xi.set(min_xi.get().min(w));
            }
            Ok(w * d)
        },
        "E[xi(Theta)]",
    ))?;
    for theta in mixing.support_grid(256) {
        min_xi.set(min_xi.get().min(xi.eval(theta)?));
    }
    let xi_positive = min_xi.get() > 0.0;
    if !xi_positive {
        issues.push(format!("xi is not positive on the mixing support (min {})", min_xi.get()));
    }

    let mut claim_gates = [Gate::Divergent; 2];
    let mut mixing_gates = [Gate::Divergent; 2];
    for l in 1..=2u8 {
        let lf = l as f64;
        claim_gates[l as usize - 1] = gate(claim.expect_raw(
            |x, ld| {
                if x <= 0.0 {
                    return Ok(0.0);
                }
                Ok((lf * x.ln() + gamma.eval(x)? + ld).exp())
            },
            "E[X^l e^gamma(X)]",
        ))?;
        mixing_gates[l as usize - 1] = gate(mixing.expect_raw(
            |theta, ld| {
                let gv = g.eval(theta)?;
                Ok(xi.eval(theta)? * (lf * gv.ln() + ld).exp())
            },
            "E[xi(Theta) g(Theta)^l]",
        ))?;
    }

    let norm_ok = |gate: Gate, name: &str, issues: &mut Vec<String>| match gate {
        Gate::Finite(v) if (v - 1.0).abs() <= NORM_TOL => true,
        Gate::Finite(v) => {
            issues.push(format!("{name} = {v}, expected 1"));
            false
        }
        Gate::Divergent => {
            issues.push(format!("{name} diverges"));
            false
        }
    };
    let gamma_ok = norm_ok(gamma_norm, "E_P[e^gamma(X_1)]", &mut issues);
    let xi_ok = norm_ok(xi_norm, "E_P[xi(Theta)]", &mut issues);

    let mut level_achieved = 0;
    for l in 1..=2u8 {
        let i = l as usize - 1;
        if claim_gates[i].is_finite() && mixing_gates[i].is_finite() {
            level_achieved = l;
        } else {
            if l <= level {
                if !claim_gates[i].is_finite() {
                    issues.push(format!("E_P[X_1^{l} e^gamma(X_1)] diverges"));
                }
                if !mixing_gates[i].is_finite() {
                    issues.push(format!("E_P[xi(Theta) g(Theta)^{l}] diverges"));
                }
            }
            break;
        }
    }

    let verdict = gamma_ok && xi_ok && xi_positive && level_achieved >= level;
    Ok(AdmissibilityReport {
        gamma_norm,
        xi_norm,
        xi_positive,
        level_requested: level,
        level_achieved,
        claim_gates,
        mixing_gates,
        verdict,
        issues,
        fingerprint: fingerprint(base, change),
    })
}

/// How a derived law was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawForm {
    Catalog,
    Tilted,
}

/// The Q-side model: arrival rate `g`, tilted claim and mixing laws.
#[derive(Debug, Clone)]
pub struct DerivedModel {
    base: BaseModel,
    change: MeasureChange,
    report: AdmissibilityReport,
    g: RealFn,
    q_claim: Distribution,
    q_mixing: Distribution,
    claim_form: LawForm,
    mixing_form: LawForm,
    claim_loading: f64,
    q_claim_mean: f64,
}

/// Tilts `base` by `weight`, preferring a catalog form when a closure rule
/// applies and the candidate matches the tilted density pointwise.
fn tilt(base: &Distribution, weight: TiltWeight, form: Option<closure::LogLinear>) -> Result<(Distribution, LawForm), ModelError> {
    if let Some(candidate) = form.and_then(|f| closure::close(base, f)) {
        let grid = base.support_grid(20);
        let matches = grid.iter().all(|&v| {
            let lw = match weight.log_value(v) {
                Ok(lw) => lw,
                Err(_) => return false,
            };
            let want = (lw + base.log_density(v)).exp();
            let got = candidate.density(v);
            (got - want).abs() <= 1e-9 * want.abs().max(1e-300) || (got - want).abs() < 1e-300
        });
        if matches {
            return Ok((candidate, LawForm::Catalog));
        }
    }
    let t = Distribution::tilted(base.clone(), weight)?;
    let form = if t.is_catalog() { LawForm::Catalog } else { LawForm::Tilted };
    Ok((t, form))
}

/// Builds the Q-side model from a passing admissibility report for exactly
/// this `(base, change)` pair.
pub fn derive_q_model(base: &BaseModel, change: &MeasureChange, report: &AdmissibilityReport) -> Result<DerivedModel, ModelError> {
    if report.fingerprint != fingerprint(base, change) {
        return Err(ModelError::NotValidated("report belongs to a different model".into()));
    }
    if !report.verdict {
        return Err(ModelError::NotValidated(report.issues.join("; ")));
    }
    let g = derive_g_with_rate(change, &base.rate);
    let claim_form = closure::linear_form(change.gamma.resolved());
    let (q_claim, claim_kind) = tilt(&base.claim, TiltWeight::Exponential(change.gamma.clone()), claim_form)?;
    let mixing_form = closure::log_form(change.xi.resolved());
    let (q_mixing, mixing_kind) = tilt(&base.mixing, TiltWeight::Direct(change.xi.clone()), mixing_form)?;
    let claim_loading = report.claim_gates[0]
        .value()
        .ok_or_else(|| ModelError::NotValidated("claim gate diverges".into()))?;
    let q_claim_mean = q_claim.mean()?;
    Ok(DerivedModel {
        base: base.clone(),
        change: change.clone(),
        report: report.clone(),
        g,
        q_claim,
        q_mixing,
        claim_form: claim_kind,
        mixing_form: mixing_kind,
        claim_loading,
        q_claim_mean,
    })
}

impl DerivedModel {
    /// Validates at `level` and derives in one step.
    pub fn build(base: &BaseModel, change: &MeasureChange, level: u8) -> Result<Self, ModelError> {
        let report = validate_change(base, change, level)?;
        derive_q_model(base, change, &report)
    }

    pub fn base(&self) -> &BaseModel {
        &self.base
    }

    pub fn change(&self) -> &MeasureChange {
        &self.change
    }

    pub fn report(&self) -> &AdmissibilityReport {
        &self.report
    }

    pub fn g(&self) -> &RealFn {
        &self.g
    }

    pub fn q_claim(&self) -> &Distribution {
        &self.q_claim
    }

    pub fn q_mixing(&self) -> &Distribution {
        &self.q_mixing
    }

    pub fn claim_form(&self) -> LawForm {
        self.claim_form
    }

    pub fn mixing_form(&self) -> LawForm {
        self.mixing_form
    }

    /// `E_P[X_1 e^{γ(X_1)}]`, computed once at validation.
    pub fn claim_loading(&self) -> f64 {
        self.claim_loading
    }

    /// `E_Q[X_1]` from the derived claim law.
    pub fn q_claim_mean(&self) -> f64 {
        self.q_claim_mean
    }

    pub fn g_at(&self, theta: f64) -> Result<f64, ExprError> {
        self.g.eval(theta)
    }

    /// `Q(N_t = n)`, mixing over the derived law with rate `g`.
    pub fn mixed_count_pmf(&self, t: f64, n: u64) -> Result<f64, ModelError> {
        mixed_poisson_pmf(&self.q_mixing, &self.g, t, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta(src: &str) -> RealFn {
        RealFn::parse(src, Variable::Theta).unwrap()
    }

    fn x(src: &str) -> RealFn {
        RealFn::parse(src, Variable::X).unwrap()
    }

    fn ex62_base() -> BaseModel {
        BaseModel::standard(
            Distribution::exponential(0.2).unwrap(),
            Distribution::gamma(2.0, 2.0).unwrap(),
        )
        .unwrap()
    }

    fn ex62_change() -> MeasureChange {
        MeasureChange::new(theta("ln(theta)"), x("ln(x/5)"), theta("(27/8)*theta^2*exp(-theta)")).unwrap()
    }

    #[test]
    fn derive_g_shapes() {
        assert_eq!(derive_g(&MeasureChange::identity()).to_string(), "theta");
        assert_eq!(derive_g(&ex62_change()).to_string(), "theta^2");
        let c = MeasureChange::new(theta("c").bind("c", 0.5), x("0"), theta("1")).unwrap();
        let g = derive_g(&c);
        assert!((g.eval(2.0).unwrap() - 2.0 * 0.5f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn identity_change_admissible() {
        let base = ex62_base();
        let r = validate_change(&base, &MeasureChange::identity(), 2).unwrap();
        assert!(r.verdict, "{:?}", r.issues);
        assert_eq!(r.level_achieved, 2);
        assert!((r.gamma_norm.value().unwrap() - 1.0).abs() < 1e-12);
        let d = derive_q_model(&base, &MeasureChange::identity(), &r).unwrap();
        assert_eq!(d.q_claim(), base.claim());
        assert_eq!(d.q_mixing(), base.mixing());
    }

    #[test]
    fn example_change_derives_catalog_laws() {
        let base = ex62_base();
        let change = ex62_change();
        let d = DerivedModel::build(&base, &change, 2).unwrap();
        assert_eq!(d.q_mixing(), &Distribution::gamma(3.0, 4.0).unwrap());
        assert_eq!(d.q_claim(), &Distribution::gamma(0.2, 2.0).unwrap());
        assert_eq!(d.mixing_form(), LawForm::Catalog);
        assert!((d.q_claim_mean() - 10.0).abs() < 1e-12);
        assert!((d.claim_loading() - 10.0).abs() < 1e-8);
    }

    #[test]
    fn divergent_gamma_fails_validation() {
        let base = ex62_base();
        let change = MeasureChange::new(theta("0"), x("x"), theta("1")).unwrap();
        let r = validate_change(&base, &change, 1).unwrap();
        assert!(!r.verdict);
        assert_eq!(r.gamma_norm, Gate::Divergent);
        assert!(matches!(
            derive_q_model(&base, &change, &r),
            Err(ModelError::NotValidated(_))
        ));
    }

    #[test]
    fn report_is_bound_to_its_model() {
        let base = ex62_base();
        let r = validate_change(&base, &MeasureChange::identity(), 1).unwrap();
        assert!(matches!(
            derive_q_model(&base, &ex62_change(), &r),
            Err(ModelError::NotValidated(_))
        ));
    }

    #[test]
    fn unmatched_weight_falls_back_to_tilted() {
        // ξ(θ) = (θ + 1)/2 on Ga(rate 2, shape 2): E[Θ] = 1
        let base = ex62_base();
        let change = MeasureChange::new(theta("0"), x("0"), theta("(theta+1)/2")).unwrap();
        let d = DerivedModel::build(&base, &change, 2).unwrap();
        assert_eq!(d.mixing_form(), LawForm::Tilted);
        for v in [0.1, 0.5, 1.0, 3.0] {
            let want = (v + 1.0) / 2.0 * base.mixing().density(v);
            assert!((d.q_mixing().density(v) - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn role_mismatch_rejected() {
        let err = MeasureChange::new(x("x"), x("0"), theta("1")).unwrap_err();
        assert!(matches!(err, ModelError::WrongVariable { role: "alpha", .. }));
        let unbound = MeasureChange::new(theta("c"), x("0"), theta("1")).unwrap_err();
        assert!(matches!(unbound, ModelError::Expr(ExprError::UnboundParameter(_))));
    }

    #[test]
    fn mixed_pmf_sums_to_one() {
        let base = ex62_base();
        let total: f64 = (0..200).map(|n| base.mixed_count_pmf(1.0, n).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        // Ga(rate 2, shape 2) mixing at t = 1 is negative binomial: P(N=0) = (2/3)^2
        assert!((base.mixed_count_pmf(1.0, 0).unwrap() - 4.0 / 9.0).abs() < 1e-12);
    }
}
