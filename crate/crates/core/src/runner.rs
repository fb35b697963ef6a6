//! Executes the jobs of a scenario and collects report rows.

use std::error::Error;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use crate::dist::Distribution;
use crate::expr::RealFn;
use crate::model::{validate_change, DerivedModel, Gate, NORM_TOL};
use crate::premium::{check_condition_14, premium_density, premium_schedule};
use crate::report::{format_float, Row};
use crate::rng::family;
use crate::scenario::{Built, Job, Scenario, ScenarioError};
use crate::sim::{self, MeasureTag, Path, Sampler, SimError};
use crate::stats::{chi_square, summarize};
use crate::verify::{
    check_martingale, check_reweighting, degeneracy_test, mc_estimate, singularity_probe, Direction, Functional,
    MartingaleTable, Process, Verdict, SIGMA, SINGULARITY_LEVEL,
};

/// Environment variable naming the directory for relative output paths.
pub const OUTPUT_DIR_ENV: &str = "CMPP_OUTPUT_DIR";

/// Significance level of the goodness-of-fit rows.
pub const GOF_LEVEL: f64 = 0.001;

type JobResult = Result<(), Box<dyn Error>>;

fn resolve(p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        return p;
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) => PathBuf::from(dir).join(p),
        None => p,
    }
}

/// Where the report of `sc` goes.
pub fn output_path(sc: &Scenario) -> PathBuf {
    let p = match &sc.output.path {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(format!("{}.{}", sc.name(), sc.output.format.extension())),
    };
    resolve(p)
}

/// Exit status of a finished run: 0 when every row is fine, 1 otherwise.
pub fn exit_code(rows: &[Row]) -> i32 {
    if rows.iter().all(Row::is_ok) {
        0
    } else {
        1
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn fmt(v: f64) -> String {
    format_float(v)
}

struct Runner<'a> {
    sc: &'a Scenario,
    built: Built,
    derived: Option<Result<DerivedModel, String>>,
    rows: Vec<Row>,
}

/// Runs `jobs` (the scenario's own list when `None`) in order.
pub fn run(sc: &Scenario, jobs: Option<&[Job]>) -> Result<Vec<Row>, ScenarioError> {
    let built = sc.build()?;
    let mut r = Runner {
        sc,
        built,
        derived: None,
        rows: Vec::new(),
    };
    r.meta();
    for &job in jobs.unwrap_or(sc.jobs()) {
        let res = match job {
            Job::Simulate => r.simulate(),
            Job::Validate => r.validate(),
            Job::DeriveQ => r.derive_q(),
            Job::VerifyReweighting => r.reweighting(),
            Job::VerifyMartingale => r.martingale(),
            Job::Degeneracy => r.degeneracy(),
            Job::Singularity => r.singularity(),
            Job::Premium => r.premium(),
        };
        if let Err(e) = res {
            r.push(job, Row::new(job.as_str(), "error").pass_if(false).detail(e.to_string()));
        }
    }
    Ok(r.rows)
}

impl Runner<'_> {
    fn push(&mut self, job: Job, mut row: Row) {
        row.scenario = self.sc.name().to_string();
        row.job = job.as_str().to_string();
        row.seed = self.sc.mc.seed;
        row.paper_value = self.sc.paper().get(&row.quantity).copied();
        self.rows.push(row);
    }

    fn n(&self) -> usize {
        self.sc.mc.paths
    }

    fn seed(&self) -> u64 {
        self.sc.mc.seed
    }

    fn horizon(&self) -> f64 {
        self.sc.mc.horizon
    }

    fn derived(&mut self) -> Result<&DerivedModel, Box<dyn Error>> {
        if self.derived.is_none() {
            let b = &self.built;
            self.derived = Some(DerivedModel::build(&b.base, &b.change, b.level).map_err(|e| e.to_string()));
        }
        match self.derived.as_ref().expect("just set") {
            Ok(d) => Ok(d),
            Err(e) => Err(format!("no derived model: {e}").into()),
        }
    }

    fn meta(&mut self) {
        let note = |sc: &Scenario, key: &str| {
            if sc.overridden.iter().any(|o| o == key) {
                "override".to_string()
            } else {
                String::new()
            }
        };
        let sc = self.sc;
        let mut rows = vec![
            Row::new("run", "paths").estimate(sc.mc.paths as f64).detail(note(sc, "paths")),
            Row::new("run", "seed").estimate(sc.mc.seed as f64).detail(note(sc, "seed")),
            Row::new("run", "horizon").estimate(sc.mc.horizon).detail(note(sc, "horizon")),
        ];
        for (k, v) in sc.params() {
            rows.push(Row::new("run", format!("param {k}")).estimate(*v).detail(note(sc, &format!("param {k}"))));
        }
        rows.push(Row::new("run", "change").detail(self.built.change.to_string()));
        for mut row in rows {
            row.scenario = sc.name().to_string();
            row.seed = sc.mc.seed;
            self.rows.push(row);
        }
    }

    fn validate(&mut self) -> JobResult {
        let job = Job::Validate;
        let b = &self.built;
        let r = validate_change(&b.base, &b.change, b.level)?;
        let level = b.level;
        let value = |g: &Gate| g.value().unwrap_or(f64::INFINITY);
        let mut rows = vec![
            Row::new(job.as_str(), "E_P[e^gamma(X_1)]")
                .estimate(value(&r.gamma_norm))
                .oracle(Some(1.0))
                .pass_if(r.gamma_norm.value().is_some_and(|v| (v - 1.0).abs() <= NORM_TOL)),
            Row::new(job.as_str(), "E_P[xi(Theta)]")
                .estimate(value(&r.xi_norm))
                .oracle(Some(1.0))
                .pass_if(r.xi_norm.value().is_some_and(|v| (v - 1.0).abs() <= NORM_TOL)),
            Row::new(job.as_str(), "xi > 0")
                .estimate(r.xi_positive as u8 as f64)
                .pass_if(r.xi_positive),
        ];
        let names = [
            ("E_P[X_1 e^gamma(X_1)]", "E_P[xi g]"),
            ("E_P[X_1^2 e^gamma(X_1)]", "E_P[xi g^2]"),
        ];
        for (i, (claim, mixing)) in names.into_iter().enumerate() {
            for (q, g) in [(claim, &r.claim_gates[i]), (mixing, &r.mixing_gates[i])] {
                let mut row = Row::new(job.as_str(), q).estimate(value(g)).detail(g.to_string());
                if i < level as usize {
                    row = row.pass_if(g.is_finite());
                }
                rows.push(row);
            }
        }
        rows.push(
            Row::new(job.as_str(), "admissible")
                .estimate(r.level_achieved as f64)
                .pass_if(r.verdict)
                .detail(format!("level {} requested; {}", r.level_requested, r.issues.join("; "))),
        );
        for row in rows {
            self.push(job, row);
        }
        Ok(())
    }

    fn derive_q(&mut self) -> JobResult {
        let job = Job::DeriveQ;
        let d = self.derived()?.clone();
        let base = d.base();
        let change = d.change();
        let xi = change.xi();
        let mut rows = vec![
            Row::new(job.as_str(), "g(theta)").detail(d.g().to_string()),
            Row::new(job.as_str(), "q_claim").detail(d.q_claim().to_string()),
            Row::new(job.as_str(), "q_mixing").detail(d.q_mixing().to_string()),
        ];

        let mean_x = d.q_claim_mean();
        rows.push(
            Row::new(job.as_str(), "E_Q[X_1]")
                .estimate(mean_x)
                .oracle(Some(d.claim_loading()))
                .pass_if(rel_close(mean_x, d.claim_loading(), NORM_TOL))
                .detail("oracle: E_P[X_1 e^gamma(X_1)]"),
        );
        for k in [1u32, 2] {
            let est = d.q_mixing().moment(k)?;
            let oracle = base.mixing().expect(|th| Ok(th.powi(k as i32) * xi.eval(th)?))?;
            let q = if k == 1 { "E_Q[Theta]" } else { "E_Q[Theta^2]" };
            rows.push(
                Row::new(job.as_str(), q)
                    .estimate(est)
                    .oracle(Some(oracle))
                    .pass_if(rel_close(est, oracle, NORM_TOL))
                    .detail(if k == 1 { "oracle: E_P[Theta xi(Theta)]" } else { "oracle: E_P[Theta^2 xi(Theta)]" }),
            );
        }
        let g = d.g();
        let mean_g = d.q_mixing().expect(|th| g.eval(th))?;
        let gate = d.report().mixing_gates[0].value();
        rows.push(
            Row::new(job.as_str(), "E_Q[g(Theta)]")
                .estimate(mean_g)
                .oracle(gate)
                .pass_if(gate.is_some_and(|o| rel_close(mean_g, o, NORM_TOL)))
                .detail("oracle: E_P[xi g]"),
        );

        let claim_dev = density_deviation(d.q_claim(), base.claim(), change.gamma())?;
        rows.push(
            Row::new(job.as_str(), "q_claim density")
                .estimate(claim_dev)
                .oracle(Some(0.0))
                .pass_if(claim_dev <= 1e-9)
                .detail("max deviation from e^gamma times the base density on 64 points"),
        );
        let mixing_dev = density_deviation(d.q_mixing(), base.mixing(), xi)?;
        rows.push(
            Row::new(job.as_str(), "q_mixing density")
                .estimate(mixing_dev)
                .oracle(Some(0.0))
                .pass_if(mixing_dev <= 1e-9)
                .detail("max deviation from xi times the base density on 64 points"),
        );

        let mut worst: f64 = 0.0;
        for th in base.mixing().support_grid(64) {
            let h = base.rate_at(th)?;
            let back = d.g_at(th)? * (-change.alpha().eval(th)?).exp();
            worst = worst.max((back - h).abs() / h.abs().max(f64::MIN_POSITIVE));
        }
        rows.push(
            Row::new(job.as_str(), "g(theta) e^-alpha(theta) / h(theta) - 1")
                .estimate(worst)
                .oracle(Some(0.0))
                .pass_if(worst <= 1e-12),
        );
        for row in rows {
            self.push(job, row);
        }
        Ok(())
    }

    fn premium(&mut self) -> JobResult {
        let job = Job::Premium;
        let d = self.derived()?.clone();
        let base = d.base();
        let quote = premium_density(base, Some(&d))?;
        let n = self.n();
        let seed = self.seed();
        let checks = self.sc.checks().clone();
        let mut rows = Vec::new();

        let mean_h = base.mixing().expect(|th| base.rate().eval(th))?;
        rows.push(Row::new(job.as_str(), "E_P[h(Theta)]").estimate(mean_h));
        if base.has_identity_rate() {
            rows.push(Row::new(job.as_str(), "E_P[Theta]").estimate(mean_h));
        }
        rows.push(Row::new(job.as_str(), "E_P[X_1]").estimate(base.claim_mean()));
        rows.push(
            Row::new(job.as_str(), "p(P)")
                .estimate(quote.p_base)
                .detail("E_P[h(Theta)] E_P[X_1]"),
        );
        rows.push(
            Row::new(job.as_str(), "p(Q)")
                .estimate(quote.p_derived)
                .oracle(Some(quote.p_derived_check))
                .pass_if(rel_close(quote.p_derived, quote.p_derived_check, NORM_TOL))
                .detail(format!(
                    "E_Q[g(Theta)] E_Q[X_1] ({}); oracle E_P[xi g] E_P[X_1 e^gamma(X_1)]",
                    quote.method.as_str()
                )),
        );
        for (tag, p, label) in [
            (MeasureTag::BaseP, quote.p_base, "p(P) monte carlo"),
            (MeasureTag::DerivedQ, quote.p_derived, "p(Q) monte carlo"),
        ] {
            let sampler = Sampler::new(base, Some(&d), tag, 1.0)?;
            let values = sampler.map(n, seed, family::PREMIUM, |path| path.aggregate_at(1.0))?;
            let s = summarize(&values);
            rows.push(
                Row::new(job.as_str(), label)
                    .estimate(s.mean)
                    .stderr(s.stderr)
                    .oracle(Some(p))
                    .pass_if((s.mean - p).abs() <= SIGMA * s.stderr)
                    .detail("mean of S_1"),
            );
        }
        rows.push(Row::new(job.as_str(), "p(P_theta)").detail(quote.per_theta_base.to_string()));
        rows.push(Row::new(job.as_str(), "p(Q_theta)").detail(quote.per_theta_derived.to_string()));

        let c13 = quote.cond13;
        let mut row = Row::new(job.as_str(), "condition 13")
            .estimate(c13.margin)
            .detail(format!("p(P) < p(Q) < inf is {}", c13.holds));
        if let Some(expected) = checks.condition13 {
            row = row.pass_if(c13.holds == expected);
        }
        rows.push(row);
        for (theta, expected) in checks.condition14 {
            let c = check_condition_14(theta, &d)?;
            rows.push(
                Row::new(job.as_str(), format!("condition 14 at theta={theta}"))
                    .estimate(c.margin)
                    .pass_if(c.holds == expected)
                    .detail(format!(
                        "p(P_theta) = {}, p(Q_theta) = {}, holds = {}",
                        fmt(c.lower),
                        fmt(c.upper),
                        c.holds
                    )),
            );
        }
        let t_end = self.horizon();
        rows.push(
            Row::new(job.as_str(), "premium over [0, T]")
                .estimate(premium_schedule(&quote, 0.0, t_end)?)
                .detail(format!("(T - t) p(Q) with t = 0, T = {}", fmt(t_end))),
        );
        for row in rows {
            self.push(job, row);
        }
        Ok(())
    }

    fn simulate(&mut self) -> JobResult {
        let job = Job::Simulate;
        let derived = self.derived().ok().cloned();
        let base = self.built.base.clone();
        let (n, seed, t) = (self.n(), self.seed(), self.horizon());
        let mut rows = Vec::new();
        let mut tags = vec![MeasureTag::BaseP];
        if derived.is_some() {
            tags.push(MeasureTag::DerivedQ);
        }
        for tag in tags {
            for f in [Functional::Count, Functional::Aggregate] {
                let r = mc_estimate(f, &base, derived.as_ref(), tag, t, n, seed)?;
                rows.push(
                    Row::new(job.as_str(), format!("E_{}[{}]", tag.label(), f.label(t)))
                        .estimate(r.estimate)
                        .stderr(r.stderr)
                        .oracle(r.oracle)
                        .verdict(r.verdict),
                );
            }
        }

        let sampler = Sampler::new(&base, None, MeasureTag::BaseP, t)?;
        let counts = sampler.map(n, seed, family::PATHS, |p| p.count_at(t))?;
        let max = counts.iter().copied().max().unwrap_or(0);
        let mut observed = vec![0u64; max + 1];
        for c in &counts {
            observed[*c] += 1;
        }
        let mut probs = Vec::new();
        let mut total = 0.0;
        for k in 0..=max.max(1) {
            let p = base.mixed_count_pmf(t, k as u64)?;
            probs.push(p);
            total += p;
            if k >= max && 1.0 - total < 1e-12 {
                break;
            }
        }
        let cs = chi_square(&observed, &probs);
        rows.push(
            Row::new(job.as_str(), format!("N_{t} pmf under P"))
                .estimate(cs.p_value)
                .pass_if(cs.p_value > GOF_LEVEL)
                .detail(format!(
                    "chi-square p-value against the mixed Poisson pmf; statistic {} on {} dof",
                    fmt(cs.statistic),
                    cs.dof
                )),
        );

        if let Some(dump) = self.sc.output.paths.clone() {
            let paths = sampler.map(n, seed, family::PATHS, |p| Ok::<Path, SimError>(p.clone()))?;
            let target = resolve(PathBuf::from(dump));
            let file = File::create(&target).map_err(|e| format!("{}: {e}", target.display()))?;
            sim::write_paths(&paths, BufWriter::new(file)).map_err(|e| format!("{}: {e}", target.display()))?;
            rows.push(Row::new(job.as_str(), "path dump").estimate(n as f64).detail(target.display().to_string()));
        }
        for row in rows {
            self.push(job, row);
        }
        Ok(())
    }

    fn reweighting(&mut self) -> JobResult {
        let job = Job::VerifyReweighting;
        let d = self.derived()?.clone();
        let (n, seed, t) = (self.n(), self.seed(), self.horizon());
        let mut settings: Vec<(Option<f64>, Direction)> = vec![(None, Direction::Forward), (None, Direction::Reverse)];
        settings.extend(self.sc.checks().thetas.iter().map(|&th| (Some(th), Direction::Forward)));
        let threshold = self.sc.checks().aggregate_threshold;
        let mut rows = Vec::new();
        for (theta, direction) in settings {
            for f in Functional::battery_at(threshold) {
                let r = check_reweighting(f, &d, theta, t, n, seed, direction)?;
                let measure = match (theta, direction) {
                    (None, Direction::Forward) => "Q".to_string(),
                    (None, Direction::Reverse) => "P".to_string(),
                    (Some(th), _) => format!("Q_theta({th})"),
                };
                let weight = match direction {
                    Direction::Forward => "weighted by M",
                    Direction::Reverse => "weighted by 1/M",
                };
                let oracle_ok = r.direct.oracle.is_none()
                    || (r.direct.verdict == Verdict::Pass && r.weighted.verdict == Verdict::Pass);
                rows.push(
                    Row::new(job.as_str(), format!("E_{measure}[{}]", f.label(t)))
                        .estimate(r.direct.estimate)
                        .stderr(r.pooled_stderr)
                        .oracle(r.direct.oracle)
                        .pass_if(r.verdict == Verdict::Pass && oracle_ok)
                        .detail(format!(
                            "direct {} +- {}; {weight} {} +- {}",
                            fmt(r.direct.estimate),
                            fmt(r.direct.stderr),
                            fmt(r.weighted.estimate),
                            fmt(r.weighted.stderr)
                        )),
                );
            }
        }
        for row in rows {
            self.push(job, row);
        }
        Ok(())
    }

    fn martingale(&mut self) -> JobResult {
        let job = Job::VerifyMartingale;
        let d = self.derived()?.clone();
        let base = d.base();
        let (n, seed) = (self.n(), self.seed());
        let pairs = self.sc.checks().pairs.clone();
        let theta = match self.sc.checks().martingale_theta {
            Some(th) => th,
            None => base.mixing().quantile(0.5),
        };
        let runs = [
            (Process::VChange, MeasureTag::DerivedQ, true),
            (Process::YBase, MeasureTag::BaseP, true),
            (Process::Density, MeasureTag::ConditionalP(theta), true),
            (Process::RawAggregate, MeasureTag::DerivedQ, false),
        ];
        let mut rows = Vec::new();
        for (process, under, martingale) in runs {
            let table = check_martingale(process, base, Some(&d), under, &pairs, None, n, seed)?;
            rows.extend(martingale_rows(job, &table, martingale));
        }
        for row in rows {
            self.push(job, row);
        }
        Ok(())
    }

    fn degeneracy(&mut self) -> JobResult {
        let job = Job::Degeneracy;
        let d = self.derived()?.clone();
        let checks = self.sc.checks();
        let (s, t) = checks.degeneracy_times;
        let n = checks.degeneracy_paths.unwrap_or(self.n());
        let r = degeneracy_test(&d, s, t, n, self.seed())?;
        let mut rows = Vec::new();
        for c in &r.cells {
            rows.push(
                Row::new(job.as_str(), format!("E_Q[1_A (V_t - V_s)] A={} s={s} t={t}", c.event))
                    .estimate(c.report.estimate)
                    .stderr(c.report.stderr)
                    .oracle(c.report.oracle)
                    .detail(format!("z = {}; oracle agreement {}", fmt(c.z), c.report.verdict)),
            );
        }
        let witness = r
            .witness
            .map(|(e, z)| format!("{e} at {} sigma", fmt(z)))
            .unwrap_or_default();
        rows.push(
            Row::new(job.as_str(), "degeneracy dichotomy")
                .estimate(r.witness.map_or(0.0, |w| w.1))
                .verdict(r.verdict)
                .detail(format!(
                    "Var_Q[g(Theta)] = {}; degenerate {}; violation detected {} (Bonferroni z {}); witness {witness}",
                    fmt(r.g_variance),
                    r.degenerate,
                    r.violation_detected,
                    fmt(r.bonferroni_z)
                )),
        );
        for row in rows {
            self.push(job, row);
        }
        Ok(())
    }

    fn singularity(&mut self) -> JobResult {
        let job = Job::Singularity;
        let d = self.derived()?.clone();
        let checks = self.sc.checks().clone();
        let theta = checks.singularity_theta;
        let table = singularity_probe(&d, theta, &checks.singularity_horizons, self.n(), self.seed())?;
        let mut rows = Vec::new();
        for r in &table {
            rows.push(
                Row::new(job.as_str(), format!("drift of ln M under {} T={}", r.under.label(), r.horizon))
                    .estimate(r.drift)
                    .stderr(r.drift_stderr)
                    .oracle(Some(r.analytic_drift))
                    .verdict(r.verdict)
                    .detail(format!(
                        "quantiles 10/50/90%: {} {} {}; below -{lvl}: {}; above +{lvl}: {}",
                        fmt(r.quantiles[0]),
                        fmt(r.quantiles[1]),
                        fmt(r.quantiles[2]),
                        fmt(r.frac_below),
                        fmt(r.frac_above),
                        lvl = SINGULARITY_LEVEL
                    )),
            );
        }
        let below: Vec<(f64, f64)> = table
            .iter()
            .filter(|r| !r.under.is_q())
            .map(|r| (r.horizon, r.frac_below))
            .collect();
        if below.len() >= 2 && !d.change().is_identity() {
            let increasing = below.windows(2).all(|w| w[1].1 > w[0].1);
            let trail: Vec<String> = below.iter().map(|(h, f)| format!("T={h}: {}", fmt(*f))).collect();
            rows.push(
                Row::new(job.as_str(), format!("P(ln M < -{SINGULARITY_LEVEL}) grows with T"))
                    .estimate(below.last().map_or(0.0, |b| b.1))
                    .pass_if(increasing)
                    .detail(trail.join("; ")),
            );
        }
        for row in rows {
            self.push(job, row);
        }
        Ok(())
    }
}

/// Largest `|q − e^w p|` over 64 quantile points of `q`, relative to
/// `max(1, e^w p)`.
fn density_deviation(q: &Distribution, p: &Distribution, w: &RealFn) -> Result<f64, Box<dyn Error>> {
    let is_log = w.variable() == crate::expr::Variable::X;
    let mut worst: f64 = 0.0;
    for x in q.support_grid(64) {
        let weight = if is_log { w.eval(x)?.exp() } else { w.eval(x)? };
        let reference = weight * p.density(x);
        worst = worst.max((q.density(x) - reference).abs() / reference.abs().max(1.0));
    }
    Ok(worst)
}

fn martingale_rows(job: Job, table: &MartingaleTable, martingale: bool) -> Vec<Row> {
    let name = format!("{} under {}", table.process.label(), table.under.label());
    let mut rows = Vec::new();
    for c in &table.cells {
        let cell_ok = match (martingale, c.predicted) {
            (true, _) => c.z <= SIGMA,
            (false, Some(p)) => (c.report.estimate - p).abs() <= SIGMA * c.report.stderr,
            (false, None) => true,
        };
        rows.push(
            Row::new(
                job.as_str(),
                format!("{name}: E[1_A (Z_t - Z_s)] A={} s={} t={}", c.event, c.s, c.t),
            )
            .estimate(c.report.estimate)
            .stderr(c.report.stderr)
            .oracle(c.predicted)
            .detail(format!("z = {}; within 3 sigma of the prediction: {cell_ok}", fmt(c.z))),
        );
    }
    let (ok, claim) = if martingale {
        (table.family_verdict == Verdict::Pass, "martingale")
    } else {
        let drift_matches = table.cells.iter().all(|c| match c.predicted {
            Some(p) => (c.report.estimate - p).abs() <= table.bonferroni_z * c.report.stderr,
            None => true,
        });
        (table.family_verdict == Verdict::Fail && drift_matches, "not a martingale; drift as predicted")
    };
    rows.push(
        Row::new(job.as_str(), format!("{name}: {claim}"))
            .estimate(table.max_z())
            .pass_if(ok)
            .detail(format!(
                "largest |z| over {} cells; Bonferroni threshold {} at family level 0.01",
                table.cells.len(),
                fmt(table.bonferroni_z)
            )),
    );
    rows
}
