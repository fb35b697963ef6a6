mod common;

use cmpp_core::dist::Distribution;
use cmpp_core::expr::{RealFn, Variable};
use cmpp_core::model::{derive_g, derive_q_model, validate_change, BaseModel, DerivedModel, Gate, LawForm, MeasureChange};
use cmpp_core::premium::esscher_change;
use common::{change, claim_fn, close, ex62, ex62_base, ex62_change, ex63, gamma_pdf, simpson, theta};

fn gamma_params(d: &Distribution) -> (f64, f64) {
    match *d {
        Distribution::Gamma { rate, shape } => (rate, shape),
        Distribution::Exponential { rate } => (rate, 1.0),
        ref other => panic!("expected a gamma law, got {other}"),
    }
}

#[test]
fn identity_change_passes_with_unit_norms() {
    let bases = [
        ex62_base(),
        common::ex63_base(1.0),
        BaseModel::standard(Distribution::uniform(1.0, 3.0).unwrap(), Distribution::degenerate(2.0).unwrap()).unwrap(),
    ];
    for base in bases {
        let r = validate_change(&base, &MeasureChange::identity(), 2).unwrap();
        assert!(r.verdict, "{:?}", r.issues);
        assert_eq!(r.level_achieved, 2);
        assert!(close(r.gamma_norm.value().unwrap(), 1.0, 1e-12));
        assert!(close(r.xi_norm.value().unwrap(), 1.0, 1e-12));
    }
}

#[test]
fn worked_change_normalizes() {
    let r = validate_change(&ex62_base(), &ex62_change(), 2).unwrap();
    assert!(r.verdict, "{:?}", r.issues);
    assert!((r.gamma_norm.value().unwrap() - 1.0).abs() < 1e-8);
    assert!((r.xi_norm.value().unwrap() - 1.0).abs() < 1e-8);
    assert!(r.xi_positive);
}

#[test]
fn exponential_gamma_beyond_the_rate_diverges() {
    let r = validate_change(&ex62_base(), &change("0", "x", "1"), 2).unwrap();
    assert!(!r.verdict);
    assert_eq!(r.gamma_norm, Gate::Divergent);
    assert!(derive_q_model(&ex62_base(), &change("0", "x", "1"), &r).is_err());
}

#[test]
fn report_is_tied_to_its_model() {
    let r = validate_change(&ex62_base(), &MeasureChange::identity(), 2).unwrap();
    assert!(derive_q_model(&ex62_base(), &ex62_change(), &r).is_err());
}

#[test]
fn unnormalized_xi_fails() {
    let r = validate_change(&ex62_base(), &change("0", "0", "2"), 2).unwrap();
    assert!(!r.verdict);
    assert!(close(r.xi_norm.value().unwrap(), 2.0, 1e-12));
}

#[test]
fn derived_rate_examples() {
    let g0 = derive_g(&MeasureChange::identity());
    let g1 = derive_g(&change("ln(theta)", "0", "1"));
    let g2 = derive_g(&change("0.7", "0", "1"));
    for th in [0.1, 0.5, 1.0, 2.0, 7.5] {
        assert!(close(g0.eval(th).unwrap(), th, 1e-15));
        assert!(close(g1.eval(th).unwrap(), th * th, 1e-14));
        assert!(close(g2.eval(th).unwrap(), 0.7f64.exp() * th, 1e-14));
    }
}

#[test]
fn worked_example_laws() {
    let d = ex62();
    let (rate, shape) = gamma_params(d.q_mixing());
    assert!(close(rate, 3.0, 1e-12) && close(shape, 4.0, 1e-12));
    let (rate, shape) = gamma_params(d.q_claim());
    assert!(close(rate, 0.2, 1e-12) && close(shape, 2.0, 1e-12));
    assert!(close(d.q_claim_mean(), 10.0, 1e-12));
    // E_P[X²]/E_P[X] for Exp(1/5).
    assert!(close(d.q_claim_mean(), 50.0 / 5.0, 1e-12));

    let u = ex63(1.0);
    assert_eq!(u.mixing_form(), LawForm::Catalog);
    match *u.q_mixing() {
        Distribution::Uniform { lo, hi } => assert!(lo == 0.0 && close(hi, 1.0, 1e-12)),
        ref other => panic!("{other}"),
    }
}

#[test]
fn gamma_mixing_power_weight_closure() {
    // θ^k e^{−sθ} on Ga(r, m) → Ga(r+s, m+k); check the small-shape case too.
    let base = BaseModel::standard(Distribution::exponential(1.0).unwrap(), Distribution::gamma(2.0, 0.2).unwrap()).unwrap();
    // E[θ e^{−θ}] under Ga(2, 0.2) is 0.2·2^0.2/3^1.2.
    let norm = 0.2 * 2f64.powf(0.2) / 3f64.powf(1.2);
    let xi = theta("theta*exp(-theta)/k").bind("k", norm);
    let d = DerivedModel::build(&base, &MeasureChange::new(theta("0"), claim_fn("0"), xi).unwrap(), 2).unwrap();
    let (rate, shape) = gamma_params(d.q_mixing());
    assert!(close(rate, 3.0, 1e-10) && close(shape, 1.2, 1e-10), "{}", d.q_mixing());
}

#[test]
fn esscher_on_gamma_stays_gamma() {
    for (a, b, c) in [(2.0, 2.0, 1.0), (1.0, 3.0, 0.5), (0.2, 1.0, 0.05), (2.0, 1.5, -0.5)] {
        let base = BaseModel::standard(Distribution::gamma(a, b).unwrap(), Distribution::gamma(2.0, 2.0).unwrap()).unwrap();
        let ch = esscher_change(c, &base, None).unwrap();
        let d = DerivedModel::build(&base, &ch, 2).unwrap();
        let (rate, shape) = gamma_params(d.q_claim());
        assert!(close(rate, a - c, 1e-10) && close(shape, b, 1e-10), "{}", d.q_claim());
        for x in d.base().claim().support_grid(20) {
            let want = (c * x).exp() * d.base().claim().density(x) / (a / (a - c)).powf(b);
            assert!(close(d.q_claim().density(x), want, 1e-9));
        }
    }
}

fn derived_catalog() -> Vec<DerivedModel> {
    let mut out = vec![ex62(), ex63(0.5), ex63(1.0), ex63(2.0)];
    for base in [ex62_base(), common::ex63_base(1.0)] {
        out.push(DerivedModel::build(&base, &MeasureChange::identity(), 2).unwrap());
        out.push(DerivedModel::build(&base, &esscher_change(0.05, &base, None).unwrap(), 2).unwrap());
        out.push(DerivedModel::build(&base, &change("ln(2)", "0", "1"), 2).unwrap());
    }
    // A weight no closure rule matches.
    let base = ex62_base();
    let xi = theta("(1+theta)/2");
    let gamma = claim_fn("0.1*x - k").bind("k", (1.0f64 / 0.5).ln());
    out.push(DerivedModel::build(&base, &MeasureChange::new(theta("0"), gamma, xi).unwrap(), 2).unwrap());
    out
}

#[test]
fn derived_densities_match_the_tilt_pointwise() {
    for d in derived_catalog() {
        let (ch, base) = (d.change(), d.base());
        for x in base.claim().support_grid(64) {
            let want = ch.gamma().eval(x).unwrap().exp() * base.claim().density(x);
            let got = d.q_claim().density(x);
            assert!((got - want).abs() <= 1e-9 * want.max(1e-12), "claim {x}: {got} vs {want} ({})", d.q_claim());
        }
        for th in base.mixing().support_grid(64) {
            let want = ch.xi().eval(th).unwrap() * base.mixing().density(th);
            let got = d.q_mixing().density(th);
            assert!((got - want).abs() <= 1e-9 * want.max(1e-12), "mixing {th}: {got} vs {want} ({})", d.q_mixing());
        }
    }
}

#[test]
fn unmatched_weight_falls_back_to_a_tilted_law() {
    let d = derived_catalog().pop().unwrap();
    assert_eq!(d.mixing_form(), LawForm::Tilted);
    let mass = simpson(|t| d.q_mixing().density(t), 0.0, 60.0, 100_000);
    assert!((mass - 1.0).abs() < 1e-8);
    // E_Q[Θ] = E_P[Θ(1+Θ)/2] = (1 + 3/2)/2 for Ga(2, 2).
    assert!(close(d.q_mixing().mean().unwrap(), 1.25, 1e-9));
}

#[test]
fn g_times_exp_minus_alpha_is_theta() {
    for d in derived_catalog() {
        for th in d.base().mixing().support_grid(32) {
            let back = d.g_at(th).unwrap() * (-d.change().alpha().eval(th).unwrap()).exp();
            assert!((back - th).abs() <= 1e-12 * th.max(1.0), "{th}: {back}");
        }
    }
}

#[test]
fn degenerate_mixing_stays_degenerate() {
    let base = BaseModel::standard(Distribution::exponential(0.2).unwrap(), Distribution::degenerate(1.0).unwrap()).unwrap();
    let d = DerivedModel::build(&base, &change("ln(theta)", "ln(x/5)", "1"), 2).unwrap();
    assert_eq!(*d.q_mixing(), Distribution::degenerate(1.0).unwrap());
    assert!(close(d.g_at(1.0).unwrap(), 1.0, 1e-15));
    // CPP(g(θ0), q_claim): Q(N_1 = n) is Poisson(1).
    for n in 0..6 {
        let want = (-1.0f64).exp() / common::factorial(n as u32);
        assert!(close(d.mixed_count_pmf(1.0, n).unwrap(), want, 1e-12));
    }
    let (rate, shape) = gamma_params(d.q_claim());
    assert!(close(rate, 0.2, 1e-12) && close(shape, 2.0, 1e-12));
}

#[test]
fn identity_maps_base_to_itself() {
    for base in [ex62_base(), common::ex63_base(2.0)] {
        let d = DerivedModel::build(&base, &MeasureChange::identity(), 2).unwrap();
        assert!(d.change().is_identity());
        for x in base.claim().support_grid(20) {
            assert!(close(d.q_claim().density(x), base.claim().density(x), 1e-12));
        }
        for th in base.mixing().support_grid(20) {
            assert!(close(d.q_mixing().density(th), base.mixing().density(th), 1e-12));
            assert!(close(d.g_at(th).unwrap(), th, 1e-15));
        }
    }
}

#[test]
fn mixed_count_pmf_matches_quadrature() {
    // P(N_1 = n) under Ga(2, 2) mixing: ∫ e^{−θ} θ^n / n! · 4θe^{−2θ} dθ.
    let base = ex62_base();
    for n in 0..8u64 {
        let f = |th: f64| (-th).exp() * th.powi(n as i32) / common::factorial(n as u32) * gamma_pdf(2.0, 2, th);
        let want = simpson(f, 0.0, 60.0, 60_000);
        assert!(close(base.mixed_count_pmf(1.0, n).unwrap(), want, 1e-9));
    }
}

#[test]
fn wrong_variable_is_rejected() {
    let alpha = RealFn::parse("x", Variable::X).unwrap();
    assert!(MeasureChange::new(alpha, claim_fn("0"), theta("1")).is_err());
    let unbound = claim_fn("c*x");
    assert!(MeasureChange::new(theta("0"), unbound, theta("1")).is_err());
}
