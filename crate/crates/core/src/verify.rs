//! Monte Carlo checks of the change-of-measure identities.
//!
//! Every check is an integral identity over simulated paths: reweighting
//! (`E_Q[f] = E_P[f M_t]`), martingale increments over conditioning events
//! (`E[χ_A (Z_t − Z_s)] = 0` for `A` known at time `s`), the degeneracy
//! dichotomy for the unconditionally centered aggregate, and the drift of the
//! log density along growing horizons.
//!
//! A cell passes when its discrepancy is within [`SIGMA`] standard errors.
//! Tables of cells additionally get a Bonferroni verdict at family level
//! [`FAMILY_LEVEL`]. With independent cells that keeps the false-alarm rate
//! of a whole table at or below 1%, while a single 3σ cell alone alarms about
//! 0.27% of the time.

use std::fmt;

use thiserror::Error;

use crate::dist::{DistError, Distribution};
use crate::expr::{ExprError, RealFn};
use crate::model::{BaseModel, DerivedModel, MeasureChange, ModelError};
use crate::rng::family;
use crate::sim::{self, MeasureTag, Path, Sampler, SimError, Surplus};
use crate::stats::{bonferroni_z, pairwise_sum, summarize};

pub const SIGMA: f64 = 3.0;
pub const FAMILY_LEVEL: f64 = 0.01;
pub const MIN_PATHS: usize = 100;
/// Paths in the pilot run that places the aggregate-level events.
pub const PILOT_PATHS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("expression error: {0}")]
    Expr(#[from] ExprError),
    #[error("at least {MIN_PATHS} paths are needed, got {0}")]
    TooFewPaths(usize),
    #[error("this check needs a derived model")]
    MissingDerivedModel,
    #[error("invalid time pair ({s}, {t})")]
    BadTimes { s: f64, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn within(diff: f64, stderr: f64, scale: f64) -> bool {
    diff.abs() <= SIGMA * stderr + 1e-12 * scale.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCReport {
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub verdict: Verdict,
    pub oracle: Option<f64>,
}

impl MCReport {
    /// Mean of `values`; the verdict compares with `oracle` when present and
    /// is inconclusive otherwise.
    pub fn from_values(values: &[f64], oracle: Option<f64>) -> Self {
        let s = summarize(values);
        let verdict = match oracle {
            Some(o) => Verdict::from_pass(within(s.mean - o, s.stderr, o)),
            None => Verdict::Inconclusive,
        };
        MCReport {
            estimate: s.mean,
            stderr: s.stderr,
            n: s.n,
            ci_low: s.mean - SIGMA * s.stderr,
            ci_high: s.mean + SIGMA * s.stderr,
            verdict,
            oracle,
        }
    }

    /// Standardized distance of the estimate from `target`; 0 when both the
    /// distance and the standard error vanish.
    pub fn z(&self, target: f64) -> f64 {
        let d = self.estimate - target;
        if d == 0.0 {
            0.0
        } else {
            d.abs() / self.stderr
        }
    }
}

/// Path functionals evaluated at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    One,
    Count,
    Aggregate,
    NoClaims,
    AggregateAbove(f64),
}

impl Functional {
    /// `1`, `N_1`, `S_1`, `χ{N_1 = 0}`, `χ{S_1 > 10}`.
    pub fn battery() -> Vec<Functional> {
        Functional::battery_at(10.0)
    }

    /// [`Functional::battery`] with the aggregate threshold `q` in place of 10.
    pub fn battery_at(q: f64) -> Vec<Functional> {
        vec![
            Functional::One,
            Functional::Count,
            Functional::Aggregate,
            Functional::NoClaims,
            Functional::AggregateAbove(q),
        ]
    }

    pub fn eval(&self, path: &Path, t: f64) -> Result<f64, SimError> {
        Ok(match *self {
            Functional::One => 1.0,
            Functional::Count => path.count_at(t)? as f64,
            Functional::Aggregate => path.aggregate_at(t)?,
            Functional::NoClaims => (path.count_at(t)? == 0) as u8 as f64,
            Functional::AggregateAbove(q) => (path.aggregate_at(t)? > q) as u8 as f64,
        })
    }

    pub fn label(&self, t: f64) -> String {
        match *self {
            Functional::One => "1".into(),
            Functional::Count => format!("N_{t}"),
            Functional::Aggregate => format!("S_{t}"),
            Functional::NoClaims => format!("1{{N_{t}=0}}"),
            Functional::AggregateAbove(q) => format!("1{{S_{t}>{q}}}"),
        }
    }
}

/// Mixing law, arrival rate and claim mean of one measure.
struct Side<'a> {
    mixing: &'a Distribution,
    rate: &'a RealFn,
    claim_mean: f64,
}

fn side<'a>(base: &'a BaseModel, derived: Option<&'a DerivedModel>, q: bool) -> Result<Side<'a>, VerifyError> {
    if q {
        let d = derived.ok_or(VerifyError::MissingDerivedModel)?;
        Ok(Side {
            mixing: d.q_mixing(),
            rate: d.g(),
            claim_mean: d.q_claim_mean(),
        })
    } else {
        Ok(Side {
            mixing: base.mixing(),
            rate: base.rate(),
            claim_mean: base.claim_mean(),
        })
    }
}

impl Side<'_> {
    /// `E[φ(rate(Θ))]`, or `φ(rate(θ))` with `θ` fixed.
    fn rate_expect(&self, theta: Option<f64>, phi: impl Fn(f64) -> f64) -> Result<f64, VerifyError> {
        match theta {
            Some(th) => Ok(phi(self.rate.eval(th)?)),
            None => Ok(self.mixing.expect(|th| Ok(phi(self.rate.eval(th)?)))?),
        }
    }

    fn functional_oracle(&self, f: Functional, theta: Option<f64>, t: f64) -> Result<Option<f64>, VerifyError> {
        Ok(match f {
            Functional::One => Some(1.0),
            Functional::Count => Some(t * self.rate_expect(theta, |r| r)?),
            Functional::Aggregate => Some(t * self.rate_expect(theta, |r| r)? * self.claim_mean),
            Functional::NoClaims => Some(self.rate_expect(theta, |r| (-t * r).exp())?),
            Functional::AggregateAbove(_) => None,
        })
    }
}

fn check_paths(n: usize) -> Result<(), VerifyError> {
    if n < MIN_PATHS {
        Err(VerifyError::TooFewPaths(n))
    } else {
        Ok(())
    }
}

/// Sample mean of `f` at time `t` over `n` paths drawn under `under`, with
/// the quadrature oracle when one exists.
pub fn mc_estimate(
    f: Functional,
    base: &BaseModel,
    derived: Option<&DerivedModel>,
    under: MeasureTag,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<MCReport, VerifyError> {
    check_paths(n)?;
    let sampler = Sampler::new(base, derived, under, t)?;
    let values = sampler.map(n, seed, family::PATHS, |p| f.eval(p, t))?;
    let oracle = side(base, derived, under.is_q())?.functional_oracle(f, under.fixed_theta(), t)?;
    Ok(MCReport::from_values(&values, oracle))
}

/// Both sides of a reweighting identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ReweightReport {
    pub functional: Functional,
    pub t: f64,
    pub theta: Option<f64>,
    /// Simulated directly under the target measure.
    pub direct: MCReport,
    /// Simulated under the other measure and weighted by the density.
    pub weighted: MCReport,
    pub difference: f64,
    pub pooled_stderr: f64,
    pub verdict: Verdict,
}

/// Which way round a reweighting identity is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `E_Q[f] = E_P[f M_t]`.
    Forward,
    /// `E_P[f] = E_Q[f / M_t]`.
    Reverse,
}

/// Compares `E_Q[f]` by direct simulation with `E_P[f M_t]` (or, with `theta`
/// given, the conditional pair `Q_θ`/`P_θ` weighted by the conditional
/// density). The two sides use disjoint stream families.
pub fn check_reweighting(
    f: Functional,
    derived: &DerivedModel,
    theta: Option<f64>,
    t: f64,
    n: usize,
    seed: u64,
    direction: Direction,
) -> Result<ReweightReport, VerifyError> {
    check_paths(n)?;
    let base = derived.base();
    let change = derived.change();
    let (p_tag, q_tag) = match theta {
        Some(th) => (MeasureTag::ConditionalP(th), MeasureTag::ConditionalQ(th)),
        None => (MeasureTag::BaseP, MeasureTag::DerivedQ),
    };
    let (target, source, sign) = match direction {
        Direction::Forward => (q_tag, p_tag, 1.0),
        Direction::Reverse => (p_tag, q_tag, -1.0),
    };
    let include_xi = theta.is_none();

    let direct_sampler = Sampler::new(base, Some(derived), target, t)?;
    let direct_values = direct_sampler.map(n, seed, family::REWEIGHT_DIRECT, |p| f.eval(p, t))?;
    let weighted_sampler = Sampler::new(base, Some(derived), source, t)?;
    let weighted_values = weighted_sampler.map(n, seed, family::REWEIGHT_WEIGHTED, |p| -> Result<f64, VerifyError> {
        let v = f.eval(p, t)?;
        if v == 0.0 {
            return Ok(0.0);
        }
        let ld = sim::log_density(p, t, base, change, include_xi)?;
        Ok(v * (sign * ld).exp())
    })?;

    let oracle = side(base, Some(derived), target.is_q())?.functional_oracle(f, theta, t)?;
    let direct = MCReport::from_values(&direct_values, oracle);
    let weighted = MCReport::from_values(&weighted_values, oracle);
    let difference = direct.estimate - weighted.estimate;
    let pooled_stderr = direct.stderr.hypot(weighted.stderr);
    let verdict = Verdict::from_pass(within(difference, pooled_stderr, direct.estimate));
    Ok(ReweightReport {
        functional: f,
        t,
        theta,
        direct,
        weighted,
        difference,
        pooled_stderr,
        verdict,
    })
}

/// Conditioning events known at time `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventSpec {
    CountAtMost { s: f64, k: usize },
    AggregateAtMost { s: f64, q: f64 },
    /// `lo < Θ ≤ hi`.
    ThetaIn { lo: f64, hi: f64 },
    WholeSpace,
}

impl EventSpec {
    pub fn contains(&self, path: &Path) -> Result<bool, SimError> {
        Ok(match *self {
            EventSpec::CountAtMost { s, k } => path.count_at(s)? <= k,
            EventSpec::AggregateAtMost { s, q } => path.aggregate_at(s)? <= q,
            EventSpec::ThetaIn { lo, hi } => path.theta > lo && path.theta <= hi,
            EventSpec::WholeSpace => true,
        })
    }

    /// The event restricted to `Θ` alone, as `(lo, hi]`, when it is one.
    fn theta_range(&self) -> Option<(f64, f64)> {
        match *self {
            EventSpec::ThetaIn { lo, hi } => Some((lo, hi)),
            EventSpec::WholeSpace => Some((f64::NEG_INFINITY, f64::INFINITY)),
            _ => None,
        }
    }
}

impl fmt::Display for EventSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            EventSpec::CountAtMost { s, k } => write!(f, "N_{s}<={k}"),
            EventSpec::AggregateAtMost { s, q } => write!(f, "S_{s}<={q:.6}"),
            EventSpec::ThetaIn { lo, hi } => write!(f, "{lo:.6}<theta<={hi:.6}"),
            EventSpec::WholeSpace => f.write_str("all"),
        }
    }
}

/// Processes whose martingale property is tested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Process {
    /// `V_t = S_t − t g(Θ) E_P[X_1 e^{γ(X_1)}]`.
    VChange,
    /// `Y_t = S_t − t h(Θ) E_P[X_1]`.
    YBase,
    /// `S_t` itself.
    RawAggregate,
    /// The likelihood-ratio density (conditional when `θ` is fixed).
    Density,
    Constant(f64),
}

impl Process {
    pub fn label(&self) -> &'static str {
        match self {
            Process::VChange => "V",
            Process::YBase => "Y",
            Process::RawAggregate => "S",
            Process::Density => "M",
            Process::Constant(_) => "const",
        }
    }

    fn value(
        &self,
        path: &Path,
        t: f64,
        base: &BaseModel,
        derived: Option<&DerivedModel>,
        include_xi: bool,
    ) -> Result<f64, VerifyError> {
        Ok(match *self {
            Process::VChange => {
                let d = derived.ok_or(VerifyError::MissingDerivedModel)?;
                sim::surplus(path, t, Surplus::Change(d))?
            }
            Process::YBase => sim::surplus(path, t, Surplus::Base(base))?,
            Process::RawAggregate => path.aggregate_at(t)?,
            Process::Density => {
                let change = derived.map(DerivedModel::change).ok_or(VerifyError::MissingDerivedModel)?;
                sim::log_density(path, t, base, change, include_xi)?.exp()
            }
            Process::Constant(c) => c,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleCell {
    pub s: f64,
    pub t: f64,
    pub event: EventSpec,
    /// Estimate of `E[χ_A (Z_t − Z_s)]`; its verdict tests against 0.
    pub report: MCReport,
    /// Predicted value of the increment when one is known in closed form
    /// (0 for processes that should be martingales).
    pub predicted: Option<f64>,
    /// `|estimate| / stderr`.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleTable {
    pub process: Process,
    pub under: MeasureTag,
    pub cells: Vec<MartingaleCell>,
    pub bonferroni_z: f64,
    pub family_verdict: Verdict,
}

impl MartingaleTable {
    pub fn max_z(&self) -> f64 {
        self.cells.iter().map(|c| c.z).fold(0.0, f64::max)
    }
}

fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let i = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[i]
}

/// The default event family for one earlier time `s`: `N_s ≤ k` for
/// `k ∈ {0, 1, 3}`, `S_s` at most its pilot median and 90th percentile, the
/// two half-spaces of `Θ` split at the mixing median, and the whole space.
pub fn default_events(
    base: &BaseModel,
    derived: Option<&DerivedModel>,
    under: MeasureTag,
    s: f64,
    seed: u64,
) -> Result<Vec<EventSpec>, VerifyError> {
    let sampler = Sampler::new(base, derived, under, s)?;
    let mut pilot = sampler.map(PILOT_PATHS, seed, family::PILOT, |p| p.aggregate_at(s))?;
    pilot.sort_by(f64::total_cmp);
    let median = match under.fixed_theta() {
        Some(th) => th,
        None => side(base, derived, under.is_q())?.mixing.quantile(0.5),
    };
    Ok(vec![
        EventSpec::CountAtMost { s, k: 0 },
        EventSpec::CountAtMost { s, k: 1 },
        EventSpec::CountAtMost { s, k: 3 },
        EventSpec::AggregateAtMost { s, q: empirical_quantile(&pilot, 0.5) },
        EventSpec::AggregateAtMost { s, q: empirical_quantile(&pilot, 0.9) },
        EventSpec::ThetaIn { lo: 0.0, hi: median },
        EventSpec::ThetaIn { lo: median, hi: f64::INFINITY },
        EventSpec::WholeSpace,
    ])
}

/// Predicted `E[χ_A (S_t − S_s)] = (t − s) E[χ_A(Θ) rate(Θ)] E[X_1]` for
/// events that only involve `Θ`.
fn raw_aggregate_drift(
    side: &Side<'_>,
    theta: Option<f64>,
    event: &EventSpec,
    s: f64,
    t: f64,
) -> Result<Option<f64>, VerifyError> {
    let Some((lo, hi)) = event.theta_range() else {
        return Ok(None);
    };
    let inside = |th: f64| th > lo && th <= hi;
    let mass = match theta {
        Some(th) => {
            if inside(th) {
                side.rate.eval(th)?
            } else {
                0.0
            }
        }
        None => side.mixing.expect(|th| Ok(if inside(th) { side.rate.eval(th)? } else { 0.0 }))?,
    };
    Ok(Some((t - s) * mass * side.claim_mean))
}

/// Estimates `E[χ_A (Z_t − Z_s)]` for every pair and event. `events = None`
/// uses [`default_events`] for each pair.
#[allow(clippy::too_many_arguments)]
pub fn check_martingale(
    process: Process,
    base: &BaseModel,
    derived: Option<&DerivedModel>,
    under: MeasureTag,
    pairs: &[(f64, f64)],
    events: Option<&[EventSpec]>,
    n: usize,
    seed: u64,
) -> Result<MartingaleTable, VerifyError> {
    check_paths(n)?;
    let mut layout: Vec<(f64, f64, EventSpec)> = Vec::new();
    for &(s, t) in pairs {
        if !(s >= 0.0 && s < t) {
            return Err(VerifyError::BadTimes { s, t });
        }
        let family = match events {
            Some(e) => e.to_vec(),
            None => default_events(base, derived, under, s, seed)?,
        };
        layout.extend(family.into_iter().map(|e| (s, t, e)));
    }
    let horizon = pairs.iter().map(|p| p.1).fold(0.0, f64::max);
    let include_xi = under.fixed_theta().is_none();
    let sampler = Sampler::new(base, derived, under, horizon)?;
    let rows = sampler.map(n, seed, family::PATHS, |path| {
        layout
            .iter()
            .map(|&(s, t, event)| {
                if !event.contains(path)? {
                    return Ok(0.0);
                }
                Ok(process.value(path, t, base, derived, include_xi)?
                    - process.value(path, s, base, derived, include_xi)?)
            })
            .collect::<Result<Vec<f64>, VerifyError>>()
    })?;

    let drift_side = side(base, derived, under.is_q())?;
    let bz = bonferroni_z(FAMILY_LEVEL, layout.len());
    let mut cells = Vec::with_capacity(layout.len());
    let mut column = vec![0.0; n];
    for (j, &(s, t, event)) in layout.iter().enumerate() {
        for (slot, row) in column.iter_mut().zip(&rows) {
            *slot = row[j];
        }
        let predicted = match process {
            Process::RawAggregate => raw_aggregate_drift(&drift_side, under.fixed_theta(), &event, s, t)?,
            Process::Constant(_) => Some(0.0),
            _ => Some(0.0),
        };
        let mut report = MCReport::from_values(&column, Some(0.0));
        report.oracle = predicted;
        let z = report.z(0.0);
        cells.push(MartingaleCell {
            s,
            t,
            event,
            report,
            predicted,
            z,
        });
    }
    let family_verdict = Verdict::from_pass(cells.iter().all(|c| c.z <= bz));
    Ok(MartingaleTable {
        process,
        under,
        cells,
        bonferroni_z: bz,
        family_verdict,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegeneracyCell {
    pub event: EventSpec,
    /// `E_Q[χ_A (V_t − V_s)]` with its covariance oracle.
    pub report: MCReport,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegeneracyReport {
    pub s: f64,
    pub t: f64,
    /// `Var_Q[g(Θ)] = 0` by quadrature.
    pub degenerate: bool,
    pub g_variance: f64,
    pub cells: Vec<DegeneracyCell>,
    pub bonferroni_z: f64,
    pub violation_detected: bool,
    /// Cell with the largest `|estimate| / stderr`.
    pub witness: Option<(EventSpec, f64)>,
    /// Pass when the outcome matches the theory: a violation is detected
    /// exactly when `g(Θ)` is not degenerate, and every cell agrees with its
    /// oracle.
    pub verdict: Verdict,
}

/// Tests whether `V_u = S_u − E_Q[S_u]` (unconditional centering) is a
/// Q-martingale, probing `Θ` above and below its Q-median and the whole space.
pub fn degeneracy_test(derived: &DerivedModel, s: f64, t: f64, n: usize, seed: u64) -> Result<DegeneracyReport, VerifyError> {
    check_paths(n)?;
    if !(s >= 0.0 && s < t) {
        return Err(VerifyError::BadTimes { s, t });
    }
    let base = derived.base();
    let mixing = derived.q_mixing();
    let g = derived.g();
    let claim_mean = derived.q_claim_mean();
    let mean_g = mixing.expect(|th| g.eval(th))?;
    let mean_g2 = mixing.expect(|th| Ok(g.eval(th)?.powi(2)))?;
    let g_variance = (mean_g2 - mean_g * mean_g).max(0.0);
    let degenerate = g_variance <= 1e-12 * mean_g * mean_g;
    let drift = mean_g * claim_mean;

    let median = mixing.quantile(0.5);
    let events = [
        EventSpec::ThetaIn { lo: median, hi: f64::INFINITY },
        EventSpec::ThetaIn { lo: 0.0, hi: median },
        EventSpec::WholeSpace,
    ];
    let sampler = Sampler::new(base, Some(derived), MeasureTag::DerivedQ, t)?;
    let rows = sampler.map(n, seed, family::PATHS, |path| {
        let inc = path.aggregate_at(t)? - path.aggregate_at(s)? - (t - s) * drift;
        events
            .iter()
            .map(|e| Ok(if e.contains(path)? { inc } else { 0.0 }))
            .collect::<Result<Vec<f64>, SimError>>()
    })?;

    let bz = bonferroni_z(FAMILY_LEVEL, events.len());
    let mut cells = Vec::new();
    let mut column = vec![0.0; n];
    for (j, event) in events.iter().enumerate() {
        for (slot, row) in column.iter_mut().zip(&rows) {
            *slot = row[j];
        }
        let (lo, hi) = event.theta_range().expect("theta events");
        let inside = |th: f64| th > lo && th <= hi;
        let e_g = mixing.expect(|th| Ok(if inside(th) { g.eval(th)? } else { 0.0 }))?;
        let q_a = mixing.expect(|th| Ok(if inside(th) { 1.0 } else { 0.0 }))?;
        let oracle = (t - s) * claim_mean * (e_g - q_a * mean_g);
        let report = MCReport::from_values(&column, Some(oracle));
        let z = report.z(0.0);
        cells.push(DegeneracyCell {
            event: *event,
            report,
            z,
        });
    }
    let witness = cells
        .iter()
        .max_by(|a, b| a.z.total_cmp(&b.z))
        .map(|c| (c.event, c.z));
    let violation_detected = cells.iter().any(|c| c.z > bz);
    let oracles_agree = cells.iter().all(|c| c.report.verdict == Verdict::Pass);
    let verdict = Verdict::from_pass(violation_detected != degenerate && oracles_agree);
    Ok(DegeneracyReport {
        s,
        t,
        degenerate,
        g_variance,
        cells,
        bonferroni_z: bz,
        violation_detected,
        witness,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftRow {
    pub horizon: f64,
    pub under: MeasureTag,
    pub n: usize,
    /// Mean of `ln M_T` (conditional density when `θ` is fixed).
    pub mean_log_density: f64,
    pub stderr: f64,
    /// `mean_log_density / T`.
    pub drift: f64,
    pub drift_stderr: f64,
    pub analytic_drift: f64,
    /// 10%, 50% and 90% empirical quantiles of `ln M_T`.
    pub quantiles: [f64; 3],
    pub frac_below: f64,
    pub frac_above: f64,
    pub verdict: Verdict,
}

/// Log-density level used for the tail fractions.
pub const SINGULARITY_LEVEL: f64 = 5.0;

/// Per-unit-time mean of `ln M_T` under P (`q = false`) or Q (`q = true`):
/// `E[ln ξ(Θ)]/T + E[rate(Θ) α(Θ) + rate(Θ) E[γ(X_1)] − h(Θ)(e^{α(Θ)} − 1)]`
/// where `rate` and the claim law belong to the sampling measure. With `θ`
/// fixed, the `ξ` term is dropped and no mixing expectation is taken.
pub fn analytic_drift(derived: &DerivedModel, theta: Option<f64>, q: bool, horizon: f64) -> Result<f64, VerifyError> {
    let base = derived.base();
    let change: &MeasureChange = derived.change();
    let (claim, mixing) = if q {
        (derived.q_claim(), derived.q_mixing())
    } else {
        (base.claim(), base.mixing())
    };
    let gamma = change.gamma();
    let mean_gamma = claim.expect(|x| gamma.eval(x))?;
    let per_theta = |th: f64| -> Result<f64, ExprError> {
        let alpha = change.alpha().eval(th)?;
        let h = base.rate_at(th)?;
        let rate = if q { derived.g_at(th)? } else { h };
        Ok(rate * alpha + rate * mean_gamma - h * alpha.exp_m1())
    };
    match theta {
        Some(th) => Ok(per_theta(th)?),
        None => {
            let body = mixing.expect(per_theta)?;
            let xi_term = mixing.expect(|th| Ok(change.xi().eval(th)?.ln()))?;
            Ok(body + xi_term / horizon)
        }
    }
}

/// For each horizon, the distribution of `ln M_T` under P and under Q.
pub fn singularity_probe(
    derived: &DerivedModel,
    theta: Option<f64>,
    horizons: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<DriftRow>, VerifyError> {
    check_paths(n)?;
    let base = derived.base();
    let change = derived.change();
    let include_xi = theta.is_none();
    let mut rows = Vec::new();
    for &horizon in horizons {
        let sides = [
            (theta.map_or(MeasureTag::BaseP, MeasureTag::ConditionalP), family::SINGULARITY_P, false),
            (theta.map_or(MeasureTag::DerivedQ, MeasureTag::ConditionalQ), family::SINGULARITY_Q, true),
        ];
        for (under, fam, q) in sides {
            let sampler = Sampler::new(base, Some(derived), under, horizon)?;
            let mut values = sampler.map(n, seed, fam, |p| sim::log_density(p, horizon, base, change, include_xi))?;
            let s = summarize(&values);
            let below = pairwise_sum(&values.iter().map(|&v| (v < -SINGULARITY_LEVEL) as u8 as f64).collect::<Vec<_>>());
            let above = pairwise_sum(&values.iter().map(|&v| (v > SINGULARITY_LEVEL) as u8 as f64).collect::<Vec<_>>());
            values.sort_by(f64::total_cmp);
            let analytic = analytic_drift(derived, theta, q, horizon)?;
            let drift = s.mean / horizon;
            let drift_stderr = s.stderr / horizon;
            rows.push(DriftRow {
                horizon,
                under,
                n,
                mean_log_density: s.mean,
                stderr: s.stderr,
                drift,
                drift_stderr,
                analytic_drift: analytic,
                quantiles: [
                    empirical_quantile(&values, 0.1),
                    empirical_quantile(&values, 0.5),
                    empirical_quantile(&values, 0.9),
                ],
                frac_below: below / n as f64,
                frac_above: above / n as f64,
                verdict: Verdict::from_pass(within(drift - analytic, drift_stderr, analytic)),
            });
        }
    }
    Ok(rows)
}
