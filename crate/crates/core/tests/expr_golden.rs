use std::collections::BTreeMap;

use cmpp_core::expr::{parse_expr, BinOp, DomainError, Expr, ExprError, Func, RealFn, Variable};
use proptest::prelude::*;

const CORPUS: [&str; 30] = [
    "0",
    "x",
    "theta",
    "2+3*4",
    "2^3^2",
    "-2^2",
    "(-2)^2",
    "-x",
    "--x",
    "1-2-3",
    "1-(2-3)",
    "8/4/2",
    "8/(4/2)",
    "(27/8)*theta^2*exp(-theta)",
    "c*x - 2*ln(c+1)",
    "ln(theta)",
    "ln(2)*theta",
    "exp(theta)*(2/(2+theta))^2",
    "(c+1)^2*(c+1+theta)^(-2)",
    "sqrt(x^2 + 1)",
    "theta^(1/2)",
    "2*theta^3 - 3*ln(theta)",
    "x/5 - ln(x/5)",
    "-(x - 1)*(x + 1)",
    "exp(-exp(-theta))",
    "a*b - c/d + e^f",
    "1.5e-3*x + 2.25E2",
    "((((x))))",
    "-theta^-2",
    "0.05*x - 2*ln(2/(2 - 0.05))",
];

#[test]
fn golden_corpus_round_trips() {
    for src in CORPUS {
        let tree = parse_expr(src).unwrap_or_else(|e| panic!("{src}: {e}"));
        let printed = tree.to_string();
        let again = parse_expr(&printed).unwrap_or_else(|e| panic!("{src} -> {printed}: {e}"));
        assert_eq!(tree, again, "{src} printed as {printed}");
    }
}

fn eval(src: &str) -> f64 {
    parse_expr(src).unwrap().eval(0.0).unwrap()
}

#[test]
fn precedence() {
    assert_eq!(eval("2+3*4"), 14.0);
    assert_eq!(eval("2^3^2"), 512.0);
    assert_eq!(eval("-2^2"), -4.0);
    assert_eq!(eval("(-2)^2"), 4.0);
    assert_eq!(eval("1-2-3"), -4.0);
    assert_eq!(eval("8/4/2"), 1.0);
}

#[test]
fn evaluation_examples() {
    let f = RealFn::parse("(27/8)*theta^2*exp(-theta)", Variable::Theta).unwrap();
    let want = 27.0 / (8.0 * std::f64::consts::E);
    assert!((f.eval(1.0).unwrap() - want).abs() < 1e-15);
    assert!((f.eval(1.0).unwrap() - 1.2415931).abs() < 1e-7);

    assert_eq!(RealFn::parse("x", Variable::X).unwrap().eval(3.0).unwrap(), 3.0);

    let g = RealFn::parse("c*x - 2*ln(c+1)", Variable::X).unwrap().bind("c", 1.0);
    assert!((g.eval(0.0).unwrap() + 2.0 * 2f64.ln()).abs() < 1e-15);
    assert!((g.eval(0.0).unwrap() + 1.3862944).abs() < 1e-7);

    for p in [-3.0, 0.0, 1e300] {
        assert_eq!(RealFn::parse("0", Variable::X).unwrap().eval(p).unwrap(), 0.0);
    }
    let l = RealFn::parse("ln(theta)", Variable::Theta).unwrap();
    assert!((l.eval(0.5).unwrap() + 0.6931472).abs() < 1e-7);
}

#[test]
fn syntax_errors_carry_offsets() {
    assert!(matches!(parse_expr("ln("), Err(ExprError::Syntax { offset: 3, .. })));
    assert!(matches!(parse_expr("2 + * 3"), Err(ExprError::Syntax { offset: 4, .. })));
    assert!(matches!(parse_expr("(x"), Err(ExprError::Syntax { offset: 2, .. })));
    assert!(matches!(parse_expr("x)"), Err(ExprError::Syntax { offset: 1, .. })));
    assert!(matches!(parse_expr(""), Err(ExprError::Syntax { offset: 0, .. })));
}

#[test]
fn identifiers_are_checked() {
    let none = BTreeMap::new();
    let r = RealFn::parse_with("2*y + x", Variable::X, &none);
    assert!(matches!(r, Err(ExprError::UnknownIdentifier { ref name, offset: 2 }) if name == "y"));
    // A claim-side function may not mention theta.
    assert!(RealFn::parse("theta*x", Variable::X).is_err());
    assert!(RealFn::parse("x", Variable::Theta).is_err());
    let mut params = BTreeMap::new();
    params.insert("c".to_string(), 2.0);
    let f = RealFn::parse_with("c*x", Variable::X, &params).unwrap();
    assert_eq!(f.eval(1.5).unwrap(), 3.0);
}

#[test]
fn domain_and_binding_errors() {
    let ln = RealFn::parse("ln(x)", Variable::X).unwrap();
    assert!(matches!(ln.eval(0.0), Err(ExprError::Domain(DomainError::LogNonPositive(_)))));
    assert!(matches!(ln.eval(-1.0), Err(ExprError::Domain(_))));
    let div = RealFn::parse("1/x", Variable::X).unwrap();
    assert!(matches!(div.eval(0.0), Err(ExprError::Domain(_))));
    let unbound = RealFn::parse("c*x", Variable::X).unwrap();
    assert!(matches!(unbound.eval(1.0), Err(ExprError::UnboundParameter(ref n)) if n == "c"));
}

#[test]
fn evaluation_is_pure() {
    let f = RealFn::parse("exp(theta)*(2/(2+theta))^2 - sqrt(theta)", Variable::Theta).unwrap();
    for p in [0.1, 0.7, 3.3] {
        let a = f.eval(p).unwrap();
        for _ in 0..10 {
            assert_eq!(f.eval(p).unwrap().to_bits(), a.to_bits());
        }
    }
}

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0.0f64..1e6).prop_map(Expr::Num),
        (0u32..100).prop_map(|n| Expr::Num(f64::from(n))),
        Just(Expr::Var(Variable::X)),
        Just(Expr::Var(Variable::Theta)),
        prop::sample::select(vec!["a", "c", "k2"]).prop_map(|s| Expr::Param(s.to_string())),
    ]
}

fn tree() -> impl Strategy<Value = Expr> {
    let ops = prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow]);
    let funcs = prop::sample::select(vec![Func::Ln, Func::Exp, Func::Sqrt]);
    leaf().prop_recursive(5, 48, 2, move |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (funcs.clone(), inner.clone()).prop_map(|(f, e)| Expr::call(f, e)),
            (ops.clone(), inner.clone(), inner).prop_map(|(op, l, r)| Expr::bin(op, l, r)),
        ]
    })
}

proptest! {
    #[test]
    fn printed_trees_reparse_identically(e in tree()) {
        let printed = e.to_string();
        let back = parse_expr(&printed).unwrap();
        prop_assert_eq!(back, e, "printed as {}", printed);
    }
}
