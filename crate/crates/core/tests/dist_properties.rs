mod common;

use cmpp_core::dist::{DistError, Distribution, TiltWeight};
use cmpp_core::rng::RngStream;
use cmpp_core::stats::{ks_critical, ks_statistic, summarize};
use common::{claim_fn, close, gamma_pdf, simpson, theta};

fn catalog() -> Vec<Distribution> {
    vec![
        Distribution::exponential(0.2).unwrap(),
        Distribution::exponential(1.0).unwrap(),
        Distribution::gamma(2.0, 2.0).unwrap(),
        Distribution::gamma(3.0, 4.0).unwrap(),
        Distribution::gamma(0.2, 2.0).unwrap(),
        Distribution::beta(2.0, 1.0).unwrap(),
        Distribution::beta(2.5, 3.5).unwrap(),
        Distribution::uniform(0.0, 1.0).unwrap(),
        Distribution::uniform(1.0, 3.0).unwrap(),
    ]
}

fn upper(d: &Distribution) -> f64 {
    let s = d.support();
    if s.is_bounded() {
        s.hi
    } else {
        d.quantile(1.0 - 1e-15) * 1.5
    }
}

fn samples(d: &Distribution, n: usize, seed: u64) -> Vec<f64> {
    (0..n)
        .map(|i| d.sample(&mut RngStream::new(seed, 99, i as u64)))
        .collect()
}

#[test]
fn catalog_moments() {
    let e = Distribution::exponential(0.2).unwrap();
    assert!(close(e.moment(1).unwrap(), 5.0, 1e-12));
    assert!(close(e.moment(2).unwrap(), 50.0, 1e-12));
    assert!(close(e.moment(3).unwrap(), 750.0, 1e-12));
    let dg = Distribution::degenerate(1.7).unwrap();
    for k in 0..5 {
        assert!(close(dg.moment(k).unwrap(), 1.7f64.powi(k as i32), 1e-15));
    }
    assert!(close(Distribution::beta(2.0, 1.0).unwrap().moment(1).unwrap(), 2.0 / 3.0, 1e-15));
    assert!(close(Distribution::gamma(2.0, 2.0).unwrap().moment(1).unwrap(), 1.0, 1e-15));
}

#[test]
fn catalog_mgfs() {
    for c in [0.5, 1.0, 2.0] {
        let d = Distribution::gamma(c + 1.0, 2.0).unwrap();
        assert!(close(d.mgf(c).unwrap(), (c + 1.0) * (c + 1.0), 1e-12));
        for th in [0.1, 0.5, 0.9] {
            let want = ((c + 1.0) / (c + 1.0 + th)).powi(2);
            assert!(close(d.mgf(-th).unwrap(), want, 1e-12));
        }
    }
    let e1 = Distribution::exponential(1.0).unwrap();
    let oracle = simpson(|x| (0.5 * x).exp() * (-x).exp(), 0.0, 80.0, 20_000);
    assert!(close(e1.mgf(0.5).unwrap(), oracle, 1e-9));
    assert!(matches!(e1.mgf(1.0), Err(DistError::OutsideConvergenceStrip { .. })));
    assert!(matches!(e1.mgf(1.5), Err(DistError::OutsideConvergenceStrip { .. })));
}

#[test]
fn mgf_at_zero_is_exactly_one() {
    let mut all = catalog();
    all.push(Distribution::poisson(2.5).unwrap());
    all.push(Distribution::degenerate(2.0).unwrap());
    for d in all {
        assert_eq!(d.mgf(0.0).unwrap(), 1.0, "{d}");
    }
}

#[test]
fn density_and_cdf_values() {
    let g = Distribution::gamma(2.0, 2.0).unwrap();
    assert!(close(g.density(1.0), 4.0 * (-2.0f64).exp(), 1e-14));
    assert_eq!(Distribution::uniform(0.0, 1.0).unwrap().density(0.3), 1.0);
    assert_eq!(Distribution::exponential(0.2).unwrap().density(-1.0), 0.0);
    assert!(close(Distribution::uniform(0.0, 1.0).unwrap().cdf(0.3), 0.3, 1e-15));
    let e = Distribution::exponential(0.2).unwrap();
    assert!(close(e.cdf(5.0), 1.0 - (-1.0f64).exp(), 1e-14));
    let by_quad = simpson(|x| e.density(x), 0.0, 5.0, 2000);
    assert!(close(e.cdf(5.0), by_quad, 1e-12));
    assert_eq!(Distribution::degenerate(2.0).unwrap().quantile(0.5), 2.0);
}

#[test]
fn closed_forms_agree_with_quadrature() {
    for d in catalog() {
        let lo = d.support().lo;
        let hi = upper(&d);
        let total = simpson(|x| d.density(x), lo, hi, 200_000);
        assert!((total - 1.0).abs() < 1e-8, "{d}: mass {total}");
        for x in d.support_grid(20) {
            let cdf = simpson(|y| d.density(y), lo, x, 20_000);
            assert!((d.cdf(x) - cdf).abs() < 1e-8, "{d} cdf at {x}: {} vs {cdf}", d.cdf(x));
        }
        for k in 1..=3u32 {
            let m = simpson(|x| x.powi(k as i32) * d.density(x), lo, hi, 200_000);
            assert!(close(d.moment(k).unwrap(), m, 1e-8), "{d} moment {k}: {} vs {m}", d.moment(k).unwrap());
        }
    }
}

#[test]
fn poisson_mass_and_moments() {
    let d = Distribution::poisson(2.5).unwrap();
    let pmf = |n: u32| (-2.5f64).exp() * 2.5f64.powi(n as i32) / common::factorial(n);
    let total: f64 = (0..60).map(pmf).sum();
    assert!((total - 1.0).abs() < 1e-12);
    for k in 1..=3 {
        let m: f64 = (0..60).map(|n| f64::from(n).powi(k) * pmf(n)).sum();
        assert!(close(d.moment(k as u32).unwrap(), m, 1e-10));
    }
    assert!(close(d.density(3.0), pmf(3), 1e-14));
}

#[test]
fn quantile_inverts_cdf() {
    for d in catalog() {
        for x in d.support_grid(50) {
            let back = d.quantile(d.cdf(x));
            assert!((back - x).abs() <= 1e-8 * x.abs().max(1.0), "{d}: {x} -> {back}");
        }
    }
}

#[test]
fn empirical_moments_within_four_standard_errors() {
    let n = 100_000;
    let mut all = catalog();
    all.push(Distribution::poisson(2.5).unwrap());
    for (i, d) in all.iter().enumerate() {
        let xs = samples(d, n, 1000 + i as u64);
        let s = summarize(&xs);
        let mean = d.mean().unwrap();
        let var = d.variance().unwrap();
        assert!((s.mean - mean).abs() <= 4.0 * s.stderr, "{d}: mean {} vs {mean}", s.mean);
        let sq: Vec<f64> = xs.iter().map(|x| (x - s.mean).powi(2)).collect();
        let v = summarize(&sq);
        assert!((v.mean - var).abs() <= 4.0 * v.stderr, "{d}: variance {} vs {var}", v.mean);
    }
}

#[test]
fn exponential_sample_mean() {
    let d = Distribution::exponential(0.2).unwrap();
    let xs = samples(&d, 1_000_000, 7);
    let mean = summarize(&xs).mean;
    assert!((mean - 5.0).abs() <= 3.0 * 5.0 / 1000.0, "{mean}");
}

#[test]
fn gamma_samples_pass_ks() {
    let d = Distribution::gamma(2.0, 2.0).unwrap();
    let xs = samples(&d, 100_000, 11);
    let cdf = |x: f64| 1.0 - (-2.0 * x).exp() * (1.0 + 2.0 * x);
    let ks = ks_statistic(&xs, cdf);
    assert!(ks < ks_critical(xs.len(), 0.001), "{ks}");
}

#[test]
fn degenerate_samples_are_the_point() {
    let d = Distribution::degenerate(1.25).unwrap();
    assert!(samples(&d, 100, 3).iter().all(|&x| x == 1.25));
}

#[test]
fn tilted_law_normalizes_and_samples() {
    // Ga(2, 2) tilted by θ is Ga(2, 3).
    let t = Distribution::tilted(Distribution::gamma(2.0, 2.0).unwrap(), TiltWeight::Direct(theta("theta"))).unwrap();
    let mass = simpson(|x| t.density(x), 0.0, 40.0, 200_000);
    assert!((mass - 1.0).abs() < 1e-8);
    for x in [0.3, 1.0, 2.5] {
        assert!(close(t.density(x), gamma_pdf(2.0, 3, x), 1e-9));
    }
    let xs = samples(&t, 100_000, 5);
    let cdf = |x: f64| 1.0 - (-2.0 * x).exp() * (1.0 + 2.0 * x + 2.0 * x * x);
    assert!(ks_statistic(&xs, cdf) < ks_critical(xs.len(), 0.001));
    assert!(close(t.moment(1).unwrap(), 1.5, 1e-9));
}

#[test]
fn tilted_requires_normalization() {
    let r = Distribution::tilted(Distribution::exponential(1.0).unwrap(), TiltWeight::Direct(theta("2")));
    assert!(matches!(r, Err(DistError::NotNormalized { .. })));
    let ok = Distribution::tilted(
        Distribution::exponential(1.0).unwrap(),
        TiltWeight::Exponential(claim_fn("0.5*x - ln(2)")),
    )
    .unwrap();
    assert!(close(ok.mean().unwrap(), 2.0, 1e-9));
}

#[test]
fn divergent_moment_is_detected() {
    let d = Distribution::exponential(0.2).unwrap();
    let r = d.expect(|x| Ok(x.exp()));
    assert!(matches!(r, Err(DistError::DivergentMoment(_))));
}
