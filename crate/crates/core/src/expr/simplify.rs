use super::{BinOp, Expr, Func};

/// Bottom-up algebraic clean-up used when building derived formulas such as
/// `g(theta) = theta * exp(alpha(theta))`.
///
/// Rewrites applied: constant folding of parameter-free numeric subtrees,
/// `exp(ln(u)) = u`, `exp(k*ln(u)) = u^k`, `exp(a+b) = exp(a)*exp(b)` when both
/// halves simplify away from `exp`, multiplicative and additive identities,
/// `v*v = v^2` and `v*v^k = v^(k+1)`, and numeric factors moved to the left.
/// The identities only hold where the original tree is defined, which is the
/// support the formulas are used on.
pub fn simplify(e: &Expr) -> Expr {
    let e = match e {
        Expr::Num(_) | Expr::Var(_) | Expr::Param(_) => return e.clone(),
        Expr::Neg(inner) => Expr::Neg(Box::new(simplify(inner))),
        Expr::Call(f, inner) => Expr::Call(*f, Box::new(simplify(inner))),
        Expr::Bin(op, l, r) => Expr::Bin(*op, Box::new(simplify(l)), Box::new(simplify(r))),
    };
    rewrite(e)
}

fn is_num(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Num(n) if *n == v)
}

fn is_numeric_literal(e: &Expr) -> bool {
    matches!(e, Expr::Num(_))
}

fn fold(e: &Expr) -> Option<f64> {
    if matches!(e, Expr::Num(_)) {
        return None;
    }
    let mut has_leaf = false;
    check_leaves(e, &mut has_leaf);
    if has_leaf {
        return None;
    }
    e.eval(0.0).ok()
}

fn check_leaves(e: &Expr, found: &mut bool) {
    match e {
        Expr::Num(_) => {}
        Expr::Var(_) | Expr::Param(_) => *found = true,
        Expr::Neg(i) | Expr::Call(_, i) => check_leaves(i, found),
        Expr::Bin(_, l, r) => {
            check_leaves(l, found);
            check_leaves(r, found);
        }
    }
}

fn rewrite(e: Expr) -> Expr {
    if let Some(v) = fold(&e) {
        return Expr::Num(v);
    }
    match e {
        Expr::Neg(inner) => match *inner {
            Expr::Neg(x) => *x,
            other => Expr::Neg(Box::new(other)),
        },
        Expr::Call(Func::Exp, arg) => rewrite_exp(*arg),
        Expr::Bin(op, l, r) => rewrite_bin(op, *l, *r),
        other => other,
    }
}

fn rewrite_exp(arg: Expr) -> Expr {
    match arg {
        Expr::Num(v) if v == 0.0 => Expr::Num(1.0),
        Expr::Call(Func::Ln, u) => *u,
        Expr::Bin(BinOp::Mul, k, inner)
            if is_numeric_literal(&k) && matches!(*inner, Expr::Call(Func::Ln, _)) =>
        {
            let Expr::Call(_, u) = *inner else { unreachable!() };
            rewrite_bin(BinOp::Pow, *u, *k)
        }
        Expr::Bin(BinOp::Add, a, b) => {
            let ea = rewrite_exp((*a).clone());
            let eb = rewrite_exp((*b).clone());
            if is_exp(&ea) || is_exp(&eb) {
                Expr::call(Func::Exp, Expr::Bin(BinOp::Add, a, b))
            } else {
                rewrite_bin(BinOp::Mul, ea, eb)
            }
        }
        Expr::Bin(BinOp::Sub, a, b) => {
            let ea = rewrite_exp((*a).clone());
            let eb = rewrite_exp((*b).clone());
            if is_exp(&ea) || is_exp(&eb) {
                Expr::call(Func::Exp, Expr::Bin(BinOp::Sub, a, b))
            } else {
                rewrite_bin(BinOp::Div, ea, eb)
            }
        }
        other => Expr::call(Func::Exp, other),
    }
}

fn is_exp(e: &Expr) -> bool {
    matches!(e, Expr::Call(Func::Exp, _))
}

/// `(base, exponent)` when `e` is `v` or `v^k` for a variable `v`.
fn var_power(e: &Expr) -> Option<(&Expr, f64)> {
    match e {
        Expr::Var(_) => Some((e, 1.0)),
        Expr::Bin(BinOp::Pow, b, k) => match (&**b, &**k) {
            (Expr::Var(_), Expr::Num(k)) => Some((b, *k)),
            _ => None,
        },
        _ => None,
    }
}

fn rewrite_bin(op: BinOp, l: Expr, r: Expr) -> Expr {
    match op {
        BinOp::Add => {
            if is_num(&r, 0.0) {
                return l;
            }
            if is_num(&l, 0.0) {
                return r;
            }
        }
        BinOp::Sub => {
            if is_num(&r, 0.0) {
                return l;
            }
        }
        BinOp::Mul => {
            if is_num(&l, 1.0) {
                return r;
            }
            if is_num(&r, 1.0) {
                return l;
            }
            if let (Some((bl, kl)), Some((br, kr))) = (var_power(&l), var_power(&r)) {
                if bl == br {
                    let base = bl.clone();
                    return rewrite_bin(BinOp::Pow, base, Expr::Num(kl + kr));
                }
            }
            if is_numeric_literal(&r) && !is_numeric_literal(&l) {
                return rewrite_bin(BinOp::Mul, r, l);
            }
            // k1*(k2*e) -> (k1*k2)*e
            if let (Expr::Num(a), Expr::Bin(BinOp::Mul, il, ir)) = (&l, &r) {
                if let Expr::Num(b) = **il {
                    return rewrite_bin(BinOp::Mul, Expr::Num(a * b), (**ir).clone());
                }
            }
        }
        BinOp::Div => {
            if is_num(&r, 1.0) {
                return l;
            }
        }
        BinOp::Pow => {
            if is_num(&r, 1.0) {
                return l;
            }
            if is_num(&r, 0.0) {
                return Expr::Num(1.0);
            }
        }
    }
    let e = Expr::bin(op, l, r);
    match fold(&e) {
        Some(v) => Expr::Num(v),
        None => e,
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_expr;
    use super::*;

    fn s(src: &str) -> String {
        simplify(&parse_expr(src).unwrap()).to_string()
    }

    #[test]
    fn derived_intensity_shapes() {
        assert_eq!(s("theta*exp(0)"), "theta");
        assert_eq!(s("theta*exp(ln(theta))"), "theta^2");
        assert_eq!(s("theta*exp(ln(2))"), "2*theta");
        assert_eq!(s("theta*exp(c)"), "theta*exp(c)");
        assert_eq!(s("10*(theta*exp(ln(theta)))"), "10*theta^2");
        assert_eq!(s("exp(2*ln(theta))"), "theta^2");
        assert_eq!(s("theta*exp(ln(c+theta)+2*ln(u))"), "theta*((c+theta)*u^2)");
    }

    #[test]
    fn folding_keeps_parameters_symbolic() {
        assert_eq!(s("2*3+c"), "6+c");
        assert_eq!(s("x+0"), "x");
        assert_eq!(s("--x"), "x");
    }
}
