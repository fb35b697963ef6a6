//! Path simulation under the four measures, and the path functionals built
//! on top: counts, aggregates, the log likelihood-ratio density and the
//! surplus processes.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Distribution;
use crate::expr::ExprError;
use crate::model::{BaseModel, DerivedModel, MeasureChange};
use crate::rng::RngStream;

/// Hard cap on the number of events in one path.
pub const MAX_EVENTS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("simulation under Q needs a derived model")]
    MissingDerivedModel,
    #[error("path exceeded {cap} events before the horizon")]
    TooManyEvents { cap: usize },
    #[error("time {t} is outside [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("arrival rate {rate} at theta = {theta} is not positive")]
    NonPositiveRate { theta: f64, rate: f64 },
    #[error("conditioning value theta = {0} is not a positive number")]
    InvalidTheta(f64),
    #[error("expression error: {0}")]
    Expr(#[from] ExprError),
}

/// Which measure a path is drawn under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasureTag {
    BaseP,
    DerivedQ,
    ConditionalP(f64),
    ConditionalQ(f64),
}

impl MeasureTag {
    pub fn is_q(&self) -> bool {
        matches!(self, MeasureTag::DerivedQ | MeasureTag::ConditionalQ(_))
    }

    pub fn fixed_theta(&self) -> Option<f64> {
        match *self {
            MeasureTag::ConditionalP(t) | MeasureTag::ConditionalQ(t) => Some(t),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            MeasureTag::BaseP => "P".into(),
            MeasureTag::DerivedQ => "Q".into(),
            MeasureTag::ConditionalP(t) => format!("P_theta({t})"),
            MeasureTag::ConditionalQ(t) => format!("Q_theta({t})"),
        }
    }
}

/// One trajectory on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub theta: f64,
    pub horizon: f64,
    pub event_times: Vec<f64>,
    pub claims: Vec<f64>,
}

impl Path {
    fn check(&self, t: f64) -> Result<(), SimError> {
        if t < 0.0 || t > self.horizon || t.is_nan() {
            return Err(SimError::OutOfHorizon { t, horizon: self.horizon });
        }
        Ok(())
    }

    /// `N_t`: events at or before `t`.
    pub fn count_at(&self, t: f64) -> Result<usize, SimError> {
        self.check(t)?;
        Ok(self.event_times.partition_point(|&e| e <= t))
    }

    /// `S_t`: sum of the claims of the first `N_t` events.
    pub fn aggregate_at(&self, t: f64) -> Result<f64, SimError> {
        let n = self.count_at(t)?;
        Ok(self.claims[..n].iter().sum())
    }

    /// One JSON object per line: `theta`, `horizon`, `event_times`, `claims`,
    /// floats in shortest round-trip form.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("paths serialize")
    }
}

/// Writes paths as JSON lines.
pub fn write_paths<W: Write>(paths: &[Path], mut out: W) -> std::io::Result<()> {
    for p in paths {
        writeln!(out, "{}", p.to_json_line())?;
    }
    Ok(())
}

/// Everything needed to draw paths under one measure.
#[derive(Debug, Clone, Copy)]
pub struct Sampler<'a> {
    base: &'a BaseModel,
    derived: Option<&'a DerivedModel>,
    under: MeasureTag,
    horizon: f64,
}

impl<'a> Sampler<'a> {
    pub fn new(
        base: &'a BaseModel,
        derived: Option<&'a DerivedModel>,
        under: MeasureTag,
        horizon: f64,
    ) -> Result<Self, SimError> {
        if under.is_q() && derived.is_none() {
            return Err(SimError::MissingDerivedModel);
        }
        if let Some(t) = under.fixed_theta() {
            if !(t > 0.0 && t.is_finite()) {
                return Err(SimError::InvalidTheta(t));
            }
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(SimError::OutOfHorizon { t: horizon, horizon });
        }
        Ok(Sampler {
            base,
            derived,
            under,
            horizon,
        })
    }

    pub fn under(&self) -> MeasureTag {
        self.under
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn laws(&self) -> (&'a Distribution, &'a Distribution) {
        match (self.under.is_q(), self.derived) {
            (true, Some(d)) => (d.q_mixing(), d.q_claim()),
            _ => (self.base.mixing(), self.base.claim()),
        }
    }

    fn rate(&self, theta: f64) -> Result<f64, SimError> {
        let rate = match (self.under.is_q(), self.derived) {
            (true, Some(d)) => d.g_at(theta)?,
            _ => self.base.rate_at(theta)?,
        };
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(SimError::NonPositiveRate { theta, rate });
        }
        Ok(rate)
    }

    /// Draws `Θ` (unless fixed), then alternates exponential interarrival and
    /// claim draws until the next arrival would pass the horizon.
    pub fn path(&self, stream: &mut RngStream) -> Result<Path, SimError> {
        let (mixing, claim) = self.laws();
        let theta = match self.under.fixed_theta() {
            Some(t) => t,
            None => mixing.sample(stream),
        };
        let mut path = Path {
            theta,
            horizon: self.horizon,
            event_times: Vec::new(),
            claims: Vec::new(),
        };
        if self.horizon == 0.0 {
            return Ok(path);
        }
        let rate = self.rate(theta)?;
        let mut t = 0.0;
        loop {
            t += -stream.open_unit().ln() / rate;
            if t > self.horizon {
                return Ok(path);
            }
            if path.event_times.len() == MAX_EVENTS {
                return Err(SimError::TooManyEvents { cap: MAX_EVENTS });
            }
            path.event_times.push(t);
            path.claims.push(claim.sample(stream));
        }
    }

    /// Simulates paths `0..n` of stream family `family` in parallel and maps
    /// each through `f`. Results are in path order whatever the scheduling.
    pub fn map<T, E, F>(&self, n: usize, seed: u64, family: u64, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: From<SimError> + Send,
        F: Fn(&Path) -> Result<T, E> + Sync,
    {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut stream = RngStream::new(seed, family, i as u64);
                let p = self.path(&mut stream)?;
                f(&p)
            })
            .collect()
    }
}

/// Draws one path; see [`Sampler::path`].
pub fn simulate_path(
    base: &BaseModel,
    derived: Option<&DerivedModel>,
    under: MeasureTag,
    horizon: f64,
    stream: &mut RngStream,
) -> Result<Path, SimError> {
    Sampler::new(base, derived, under, horizon)?.path(stream)
}

/// `ln M_t = [include_xi] ln ξ(θ) + N_t α(θ) + Σ_{k ≤ N_t} γ(X_k) − t h(θ)(e^{α(θ)} − 1)`.
///
/// With `include_xi = false` this is the conditional density given `Θ = θ`.
pub fn log_density(
    path: &Path,
    t: f64,
    base: &BaseModel,
    change: &MeasureChange,
    include_xi: bool,
) -> Result<f64, SimError> {
    let mut v = log_density_increment(path, 0.0, t, base, change)?;
    if include_xi {
        v += change.xi().eval(path.theta)?.ln();
    }
    Ok(v)
}

/// Contribution of `(s, t]` to the conditional log density:
/// `(N_t − N_s) α(θ) + Σ_{s < T_k ≤ t} γ(X_k) − (t − s) h(θ)(e^{α(θ)} − 1)`.
pub fn log_density_increment(
    path: &Path,
    s: f64,
    t: f64,
    base: &BaseModel,
    change: &MeasureChange,
) -> Result<f64, SimError> {
    let lo = path.count_at(s)?;
    let hi = path.count_at(t)?;
    let alpha = change.alpha().eval(path.theta)?;
    let rate = base.rate_at(path.theta)?;
    let gamma = change.gamma();
    let mut sum = 0.0;
    for &x in &path.claims[lo..hi] {
        sum += gamma.eval(x)?;
    }
    Ok((hi - lo) as f64 * alpha + sum - (t - s) * rate * alpha.exp_m1())
}

/// Centered aggregate processes.
#[derive(Debug, Clone, Copy)]
pub enum Surplus<'a> {
    /// `V_t = S_t − t g(θ) E_P[X_1 e^{γ(X_1)}]`.
    Change(&'a DerivedModel),
    /// `Y_t = S_t − t h(θ) E_P[X_1]`.
    Base(&'a BaseModel),
}

pub fn surplus(path: &Path, t: f64, kind: Surplus<'_>) -> Result<f64, SimError> {
    let s = path.aggregate_at(t)?;
    Ok(match kind {
        Surplus::Change(d) => s - t * d.g_at(path.theta)? * d.claim_loading(),
        Surplus::Base(b) => s - t * b.rate_at(path.theta)? * b.claim_mean(),
    })
}
