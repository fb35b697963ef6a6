//! Scenario files: a base model, a measure change, the jobs to run and the
//! Monte Carlo settings, in TOML.
//!
//! ```toml
//! name = "example"
//! run = ["validate", "derive-q", "premium"]
//!
//! [base]
//! claim = "exp(rate=0.2)"
//! mixing = "gamma(rate=2, shape=2)"
//! h = "theta"                 # optional, identity by default
//!
//! [change]
//! alpha = "ln(theta)"
//! gamma = "ln(x/5)"
//! xi = "(27/8)*theta^2*exp(-theta)"
//! level = 2
//! params = { }                # named constants, visible to every expression
//!
//! [mc]
//! paths = 100000
//! seed = 1
//! horizon = 1.0
//! ```
//!
//! Instead of `alpha`/`gamma`, `[change]` may name a `preset`
//! (`"esscher"` or `"expected-value"`) which reads its loading from the
//! parameter `c`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path as FsPath;
use std::str::FromStr;

use serde::Deserialize;
use toml::Spanned;

use crate::dist::{parse_distribution, DistError, Distribution};
use crate::expr::{ExprError, RealFn, Variable};
use crate::model::{BaseModel, MeasureChange};
use crate::premium::{esscher_change, expected_value_change};
use crate::verify::MIN_PATHS;

pub const BUILTINS: &[(&str, &str)] = &[
    ("example-6.1a", include_str!("../scenarios/example-6.1a.toml")),
    ("example-6.1b", include_str!("../scenarios/example-6.1b.toml")),
    ("example-6.2", include_str!("../scenarios/example-6.2.toml")),
    ("example-6.3", include_str!("../scenarios/example-6.3.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Job {
    Simulate,
    Validate,
    DeriveQ,
    VerifyReweighting,
    VerifyMartingale,
    Degeneracy,
    Singularity,
    Premium,
}

impl Job {
    pub const ALL: [Job; 8] = [
        Job::Simulate,
        Job::Validate,
        Job::DeriveQ,
        Job::VerifyReweighting,
        Job::VerifyMartingale,
        Job::Degeneracy,
        Job::Singularity,
        Job::Premium,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Job::Simulate => "simulate",
            Job::Validate => "validate",
            Job::DeriveQ => "derive-q",
            Job::VerifyReweighting => "verify-reweighting",
            Job::VerifyMartingale => "verify-martingale",
            Job::Degeneracy => "degeneracy",
            Job::Singularity => "singularity",
            Job::Premium => "premium",
        }
    }
}

impl fmt::Display for Job {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Job {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Job::ALL
            .into_iter()
            .find(|j| j.as_str() == s)
            .ok_or_else(|| format!("unknown job '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    JsonLines,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::JsonLines => "jsonl",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json-lines" | "jsonl" => Ok(Format::JsonLines),
            _ => Err(format!("unknown format '{s}' (expected csv or json-lines)")),
        }
    }
}

/// A scenario problem, located in its source when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    pub origin: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{}:{}:{}: {}", self.origin, l, c, self.message),
            (Some(l), None) => write!(f, "{}:{}: {}", self.origin, l, self.message),
            _ => write!(f, "{}: {}", self.origin, self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    description: String,
    run: Vec<Job>,
    base: RawBase,
    #[serde(default)]
    change: RawChange,
    #[serde(default)]
    mc: RawMc,
    #[serde(default)]
    output: Output,
    #[serde(default)]
    checks: Checks,
    #[serde(default)]
    paper: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBase {
    claim: Spanned<String>,
    mixing: Spanned<String>,
    h: Option<Spanned<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChange {
    preset: Option<Spanned<String>>,
    alpha: Option<Spanned<String>>,
    gamma: Option<Spanned<String>>,
    xi: Option<Spanned<String>>,
    level: Option<Spanned<u8>>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMc {
    paths: Spanned<usize>,
    seed: u64,
    horizon: Spanned<f64>,
}

impl Default for RawMc {
    fn default() -> Self {
        RawMc {
            paths: Spanned::new(0..0, 100_000),
            seed: 1,
            horizon: Spanned::new(0..0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mc {
    pub paths: usize,
    pub seed: u64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default)]
    pub format: Format,
    /// Report file; relative paths resolve against the output directory.
    pub path: Option<String>,
    /// If set, the `simulate` job also dumps its base-measure paths here.
    pub paths: Option<String>,
}

/// Per-job settings.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Checks {
    /// Fixed `θ` values for the conditional reweighting checks.
    pub thetas: Vec<f64>,
    /// Threshold `q` of the functional `χ{S_t > q}`.
    pub aggregate_threshold: f64,
    /// `(s, t)` pairs of the martingale tables.
    pub pairs: Vec<(f64, f64)>,
    /// `θ` for the conditional density martingale; the mixing median if unset.
    pub martingale_theta: Option<f64>,
    /// `(s, t)` of the degeneracy test.
    pub degeneracy_times: (f64, f64),
    pub degeneracy_paths: Option<usize>,
    /// Fixed `θ` for the singularity probe; unconditional if unset.
    pub singularity_theta: Option<f64>,
    pub singularity_horizons: Vec<f64>,
    /// Expected outcome of `p(P) < p(Q) < ∞`.
    pub condition13: Option<bool>,
    /// `(θ, expected outcome of p(P_θ) < p(Q_θ) < ∞)`.
    pub condition14: Vec<(f64, bool)>,
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            thetas: Vec::new(),
            aggregate_threshold: 10.0,
            pairs: vec![(0.5, 1.0), (1.0, 2.0)],
            martingale_theta: None,
            degeneracy_times: (0.5, 1.0),
            degeneracy_paths: None,
            singularity_theta: None,
            singularity_horizons: vec![10.0, 50.0],
            condition13: None,
            condition14: Vec::new(),
        }
    }
}

/// Command-line overrides of scenario values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub horizon: Option<f64>,
    pub output: Option<String>,
    pub format: Option<Format>,
    pub params: Vec<(String, f64)>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        *self == Overrides::default()
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    origin: String,
    source: String,
    raw: RawScenario,
    pub mc: Mc,
    pub output: Output,
    /// Names of the values replaced from the command line.
    pub overridden: Vec<String>,
}

/// The model part of a scenario, ready to use.
#[derive(Debug, Clone)]
pub struct Built {
    pub base: BaseModel,
    pub change: MeasureChange,
    pub level: u8,
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, col)
}

impl Scenario {
    /// Resolves a builtin name or a file path.
    pub fn resolve(name: &str) -> Result<Scenario, ScenarioError> {
        if let Some((n, src)) = BUILTINS.iter().find(|(n, _)| *n == name) {
            return Scenario::parse(src, n);
        }
        let path = FsPath::new(name);
        if path.is_file() {
            let src = std::fs::read_to_string(path).map_err(|e| ScenarioError {
                origin: name.to_string(),
                line: None,
                column: None,
                message: e.to_string(),
            })?;
            return Scenario::parse(&src, name);
        }
        let known: Vec<&str> = BUILTINS.iter().map(|(n, _)| *n).collect();
        Err(ScenarioError {
            origin: name.to_string(),
            line: None,
            column: None,
            message: format!(
                "unknown scenario '{name}': not a builtin ({}) and no such file",
                known.join(", ")
            ),
        })
    }

    pub fn parse(src: &str, origin: &str) -> Result<Scenario, ScenarioError> {
        let raw: RawScenario = toml::from_str(src).map_err(|e| {
            let (line, column) = match e.span() {
                Some(s) => {
                    let (l, c) = line_col(src, s.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            ScenarioError {
                origin: origin.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let sc = Scenario {
            origin: origin.to_string(),
            source: src.to_string(),
            mc: Mc {
                paths: *raw.mc.paths.get_ref(),
                seed: raw.mc.seed,
                horizon: *raw.mc.horizon.get_ref(),
            },
            output: raw.output.clone(),
            overridden: Vec::new(),
            raw,
        };
        if sc.mc.paths < MIN_PATHS {
            return Err(sc.error_at(sc.raw.mc.paths.span(), format!("mc.paths must be at least {MIN_PATHS}")));
        }
        if !(sc.mc.horizon > 0.0 && sc.mc.horizon.is_finite()) {
            return Err(sc.error_at(sc.raw.mc.horizon.span(), "mc.horizon must be positive".into()));
        }
        if sc.raw.run.is_empty() {
            return Err(sc.plain_error("'run' lists no jobs".into()));
        }
        sc.build()?;
        Ok(sc)
    }

    pub fn name(&self) -> &str {
        &self.raw.name
    }

    pub fn description(&self) -> &str {
        &self.raw.description
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn jobs(&self) -> &[Job] {
        &self.raw.run
    }

    pub fn checks(&self) -> &Checks {
        &self.raw.checks
    }

    pub fn paper(&self) -> &BTreeMap<String, f64> {
        &self.raw.paper
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.raw.change.params
    }

    fn error_at(&self, span: Range<usize>, message: String) -> ScenarioError {
        if span.is_empty() {
            return self.plain_error(message);
        }
        let (line, column) = line_col(&self.source, span.start);
        ScenarioError {
            origin: self.origin.clone(),
            line: Some(line),
            column: Some(column),
            message,
        }
    }

    fn plain_error(&self, message: String) -> ScenarioError {
        ScenarioError {
            origin: self.origin.clone(),
            line: None,
            column: None,
            message,
        }
    }

    /// Error inside a quoted string value; `offset` is a byte offset into the
    /// string's contents.
    fn error_in(&self, value: &Spanned<String>, offset: Option<usize>, message: String) -> ScenarioError {
        let span = value.span();
        match offset {
            Some(o) if !span.is_empty() => self.error_at(span.start + 1 + o..span.end, message),
            _ => self.error_at(span, message),
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ScenarioError> {
        let bad = |flag: &str, message: String| ScenarioError {
            origin: format!("--{flag}"),
            line: None,
            column: None,
            message,
        };
        if let Some(seed) = o.seed {
            self.mc.seed = seed;
            self.overridden.push("seed".into());
        }
        if let Some(paths) = o.paths {
            if paths < MIN_PATHS {
                return Err(bad("paths", format!("must be at least {MIN_PATHS}")));
            }
            self.mc.paths = paths;
            self.overridden.push("paths".into());
        }
        if let Some(h) = o.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(bad("horizon", "must be positive".into()));
            }
            self.mc.horizon = h;
            self.overridden.push("horizon".into());
        }
        if let Some(out) = &o.output {
            self.output.path = Some(out.clone());
            self.overridden.push("output".into());
        }
        if let Some(f) = o.format {
            self.output.format = f;
            self.overridden.push("format".into());
        }
        for (k, v) in &o.params {
            self.raw.change.params.insert(k.clone(), *v);
            self.overridden.push(format!("param {k}"));
        }
        if !o.params.is_empty() {
            self.build()?;
        }
        Ok(())
    }

    fn distribution(&self, value: &Spanned<String>, what: &str) -> Result<Distribution, ScenarioError> {
        parse_distribution(value.get_ref(), self.params()).map_err(|e| match e {
            DistError::Literal { offset, message } => self.error_in(value, Some(offset), format!("{what}: {message}")),
            other => self.error_in(value, None, format!("{what}: {other}")),
        })
    }

    fn function(&self, value: &Spanned<String>, var: Variable, what: &str) -> Result<RealFn, ScenarioError> {
        RealFn::parse_with(value.get_ref(), var, self.params()).map_err(|e| {
            let offset = match &e {
                ExprError::Syntax { offset, .. } | ExprError::UnknownIdentifier { offset, .. } => Some(*offset),
                _ => None,
            };
            self.error_in(value, offset, format!("{what}: {e}"))
        })
    }

    /// Parses the literals and expressions and assembles the model.
    pub fn build(&self) -> Result<Built, ScenarioError> {
        let b = &self.raw.base;
        let claim = self.distribution(&b.claim, "claim")?;
        let mixing = self.distribution(&b.mixing, "mixing")?;
        let rate = match &b.h {
            Some(h) => self.function(h, Variable::Theta, "h")?,
            None => RealFn::identity(Variable::Theta),
        };
        let base = BaseModel::new(claim, mixing, rate).map_err(|e| self.error_at(b.claim.span(), e.to_string()))?;

        let ch = &self.raw.change;
        let xi = ch
            .xi
            .as_ref()
            .map(|x| self.function(x, Variable::Theta, "xi"))
            .transpose()?;
        let change = match &ch.preset {
            Some(p) => {
                if let Some(extra) = ch.alpha.as_ref().or(ch.gamma.as_ref()) {
                    return Err(self.error_at(extra.span(), "alpha/gamma cannot be combined with a preset".into()));
                }
                let c = *self
                    .params()
                    .get("c")
                    .ok_or_else(|| self.error_in(p, None, "preset needs the parameter 'c'".into()))?;
                match p.get_ref().as_str() {
                    "esscher" => esscher_change(c, &base, xi),
                    "expected-value" => expected_value_change(c, xi),
                    other => {
                        return Err(self.error_in(
                            p,
                            None,
                            format!("unknown preset '{other}' (expected esscher or expected-value)"),
                        ))
                    }
                }
                .map_err(|e| self.error_in(p, None, e.to_string()))?
            }
            None => {
                let alpha = match &ch.alpha {
                    Some(a) => self.function(a, Variable::Theta, "alpha")?,
                    None => RealFn::constant(0.0, Variable::Theta),
                };
                let gamma = match &ch.gamma {
                    Some(g) => self.function(g, Variable::X, "gamma")?,
                    None => RealFn::constant(0.0, Variable::X),
                };
                let xi = xi.unwrap_or_else(|| RealFn::constant(1.0, Variable::Theta));
                MeasureChange::new(alpha, gamma, xi).map_err(|e| self.plain_error(e.to_string()))?
            }
        };
        let level = match &ch.level {
            Some(l) if matches!(l.get_ref(), 1 | 2) => *l.get_ref(),
            Some(l) => return Err(self.error_at(l.span(), "level must be 1 or 2".into())),
            None => 1,
        };
        Ok(Built { base, change, level })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        for (name, _) in BUILTINS {
            let sc = Scenario::resolve(name).unwrap();
            assert_eq!(sc.name(), *name);
            sc.build().unwrap();
        }
    }

    #[test]
    fn unknown_scenario() {
        let e = Scenario::resolve("no-such-scenario").unwrap_err();
        assert!(e.message.contains("no-such-scenario"));
    }

    #[test]
    fn diagnostics_point_into_expressions() {
        let src = "name = \"t\"\nrun = [\"validate\"]\n[base]\nclaim = \"exp(rate=0.2)\"\nmixing = \"gamma(rate=2, shape=2)\"\n[change]\ngamma = \"ln(x/k)\"\n";
        let e = Scenario::parse(src, "t.toml").unwrap_err();
        assert_eq!((e.line, e.column), (Some(7), Some(15)));
        assert!(e.message.contains("`k`"), "{e}");
    }

    #[test]
    fn toml_errors_have_lines() {
        let src = "name = \"t\"\nrun = [\"validate\", \"fly\"]\n[base]\nclaim = \"exp(rate=0.2)\"\nmixing = \"degenerate(1)\"\n";
        let e = Scenario::parse(src, "t.toml").unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn overrides() {
        let mut sc = Scenario::resolve("example-6.3").unwrap();
        sc.apply(&Overrides {
            seed: Some(9),
            params: vec![("c".into(), 2.0)],
            ..Default::default()
        })
        .unwrap();
        assert_eq!(sc.mc.seed, 9);
        let built = sc.build().unwrap();
        assert!((built.base.claim_mean() - 2.0 / 3.0).abs() < 1e-15);
        assert!(sc
            .apply(&Overrides {
                paths: Some(10),
                ..Default::default()
            })
            .is_err());
    }
}
