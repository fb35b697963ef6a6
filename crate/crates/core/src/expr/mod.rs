//! Single-variable formula language used for the measure-change components
//! (`alpha`, `gamma`, `xi`), the derived intensity `g` and the rate function `h`.
//!
//! Grammar, loosest to tightest:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          -- right associative
//! primary := number | ident | func '(' expr ')' | '(' expr ')'
//! func    := ln | exp | sqrt
//! ```
//!
//! Unary minus binds looser than `^`, so `-2^2` evaluates to `-4`.

mod parse;
mod simplify;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use parse::parse_expr;
pub use simplify::simplify;

/// The free variable of a formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variable {
    /// Claim-side functions (`gamma`).
    X,
    /// Mixing-side functions (`alpha`, `xi`, `g`, `h`).
    Theta,
}

impl Variable {
    pub fn name(self) -> &'static str {
        match self {
            Variable::X => "x",
            Variable::Theta => "theta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Ln,
    Exp,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Ln => "ln",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "ln" => Some(Func::Ln),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }
}

/// Abstract syntax tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Variable),
    Param(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("domain error: {0}")]
    Domain(DomainError),
    #[error("unbound parameter `{0}`")]
    UnboundParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DomainError {
    #[error("ln of non-positive value {0}")]
    LogNonPositive(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("sqrt of negative value {0}")]
    SqrtNegative(f64),
    #[error("power {0}^{1} is undefined")]
    InvalidPower(f64, f64),
    #[error("result overflowed to a non-finite value")]
    Overflow,
    #[error("result is not a number")]
    NotANumber,
}

impl From<DomainError> for ExprError {
    fn from(e: DomainError) -> Self {
        ExprError::Domain(e)
    }
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(v: Variable) -> Expr {
        Expr::Var(v)
    }

    pub fn bin(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::Bin(op, Box::new(l), Box::new(r))
    }

    pub fn call(f: Func, arg: Expr) -> Expr {
        Expr::Call(f, Box::new(arg))
    }

    /// True when the tree mentions the free variable.
    pub fn has_var(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Param(_) => false,
            Expr::Var(_) => true,
            Expr::Neg(e) | Expr::Call(_, e) => e.has_var(),
            Expr::Bin(_, l, r) => l.has_var() || r.has_var(),
        }
    }

    /// Visits every variable and parameter reference.
    fn visit_leaves<'a>(&'a self, out: &mut dyn FnMut(&'a Expr)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(_) | Expr::Param(_) => out(self),
            Expr::Neg(e) | Expr::Call(_, e) => e.visit_leaves(out),
            Expr::Bin(_, l, r) => {
                l.visit_leaves(out);
                r.visit_leaves(out);
            }
        }
    }

    /// Replaces every bound parameter with its numeric value.
    fn substitute(&self, params: &BTreeMap<String, f64>) -> Expr {
        match self {
            Expr::Param(name) => match params.get(name) {
                Some(&v) => Expr::Num(v),
                None => self.clone(),
            },
            Expr::Num(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(e) => Expr::Neg(Box::new(e.substitute(params))),
            Expr::Call(f, e) => Expr::Call(*f, Box::new(e.substitute(params))),
            Expr::Bin(op, l, r) => {
                Expr::Bin(*op, Box::new(l.substitute(params)), Box::new(r.substitute(params)))
            }
        }
    }

    /// Evaluates with the free variable set to `point`. Parameters must already
    /// be substituted.
    pub fn eval(&self, point: f64) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(_) => point,
            Expr::Param(name) => return Err(ExprError::UnboundParameter(name.clone())),
            Expr::Neg(e) => -e.eval(point)?,
            Expr::Call(f, e) => {
                let a = e.eval(point)?;
                match f {
                    Func::Ln => {
                        if a <= 0.0 {
                            return Err(DomainError::LogNonPositive(a).into());
                        }
                        a.ln()
                    }
                    Func::Exp => a.exp(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(DomainError::SqrtNegative(a).into());
                        }
                        a.sqrt()
                    }
                }
            }
            Expr::Bin(op, l, r) => {
                let a = l.eval(point)?;
                let b = r.eval(point)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(DomainError::DivisionByZero.into());
                        }
                        a / b
                    }
                    BinOp::Pow => power(a, b)?,
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else if v.is_nan() {
            Err(DomainError::NotANumber.into())
        } else {
            Err(DomainError::Overflow.into())
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.precedence(),
            Expr::Neg(_) => 3,
            Expr::Num(v) if v.is_sign_negative() => 3,
            _ => 5,
        }
    }
}

fn power(base: f64, exponent: f64) -> Result<f64, DomainError> {
    if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
        if base == 0.0 && exponent < 0.0 {
            return Err(DomainError::DivisionByZero);
        }
        return Ok(base.powi(exponent as i32));
    }
    if base < 0.0 {
        return Err(DomainError::InvalidPower(base, exponent));
    }
    if base == 0.0 && exponent < 0.0 {
        return Err(DomainError::DivisionByZero);
    }
    Ok(base.powf(exponent))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if v.is_sign_negative() {
                    write!(f, "-{}", format_number(-v))
                } else {
                    f.write_str(&format_number(*v))
                }
            }
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Param(p) => f.write_str(p),
            Expr::Call(func, e) => write!(f, "{}({})", func.name(), e),
            Expr::Neg(e) => {
                if e.precedence() < 3 {
                    write!(f, "-({e})")
                } else {
                    write!(f, "-{e}")
                }
            }
            Expr::Bin(op, l, r) => {
                let p = op.precedence();
                let left_parens = match op {
                    BinOp::Pow => l.precedence() <= p,
                    _ => l.precedence() < p,
                };
                let right_parens = match op {
                    BinOp::Pow => r.precedence() < 3,
                    _ => r.precedence() <= p,
                };
                write_wrapped(f, l, left_parens)?;
                write!(f, "{}", op.symbol())?;
                write_wrapped(f, r, right_parens)
            }
        }
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Shortest round-trip decimal for a non-negative literal.
fn format_number(v: f64) -> String {
    let s = format!("{v:?}");
    match s.strip_suffix(".0") {
        Some(stripped) => stripped.to_string(),
        None => s,
    }
}

/// A parsed formula over one declared free variable with named parameter
/// bindings.
#[derive(Debug, Clone, PartialEq)]
pub struct RealFn {
    expr: Expr,
    var: Variable,
    params: BTreeMap<String, f64>,
    resolved: Expr,
}

impl RealFn {
    /// Parses `src` for the declared variable. Parameters may be bound later;
    /// evaluating with a parameter still unbound yields `UnboundParameter`.
    pub fn parse(src: &str, var: Variable) -> Result<RealFn, ExprError> {
        let expr = parse_expr(src)?;
        check_variable(&expr, var, src)?;
        Ok(RealFn::from_expr(expr, var))
    }

    /// Parses `src` and requires every identifier to be the free variable,
    /// a known function or one of `params`.
    pub fn parse_with(
        src: &str,
        var: Variable,
        params: &BTreeMap<String, f64>,
    ) -> Result<RealFn, ExprError> {
        let expr = parse_expr(src)?;
        check_variable(&expr, var, src)?;
        let mut unknown = None;
        expr.visit_leaves(&mut |leaf| {
            if let Expr::Param(name) = leaf {
                if !params.contains_key(name) && unknown.is_none() {
                    unknown = Some(name.clone());
                }
            }
        });
        if let Some(name) = unknown {
            let offset = identifier_offset(src, &name);
            return Err(ExprError::UnknownIdentifier { name, offset });
        }
        let mut f = RealFn::from_expr(expr, var);
        f.bind_all(params);
        Ok(f)
    }

    pub fn from_expr(expr: Expr, var: Variable) -> RealFn {
        let resolved = expr.clone();
        RealFn {
            expr,
            var,
            params: BTreeMap::new(),
            resolved,
        }
    }

    pub fn constant(v: f64, var: Variable) -> RealFn {
        RealFn::from_expr(Expr::Num(v), var)
    }

    pub fn identity(var: Variable) -> RealFn {
        RealFn::from_expr(Expr::Var(var), var)
    }

    /// Binds one parameter. Parameters not mentioned in the tree are kept so the
    /// binding set can be reported, but have no effect.
    pub fn bind(mut self, name: &str, value: f64) -> RealFn {
        self.params.insert(name.to_string(), value);
        self.resolved = self.expr.substitute(&self.params);
        self
    }

    /// Binds the parameters from `params` that the tree actually references.
    pub fn bind_all(&mut self, params: &BTreeMap<String, f64>) {
        let used = self.param_names();
        for (k, v) in params {
            if used.iter().any(|u| u == k) {
                self.params.insert(k.clone(), *v);
            }
        }
        self.resolved = self.expr.substitute(&self.params);
    }

    pub fn eval(&self, point: f64) -> Result<f64, ExprError> {
        self.resolved.eval(point)
    }

    pub fn variable(&self) -> Variable {
        self.var
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// Tree with all bound parameters replaced by their values.
    pub fn resolved(&self) -> &Expr {
        &self.resolved
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.expr.visit_leaves(&mut |leaf| {
            if let Expr::Param(name) = leaf {
                if !names.contains(name) {
                    names.push(name.clone());
                }
            }
        });
        names
    }

    /// True when the formula does not depend on its variable.
    pub fn is_constant(&self) -> bool {
        !self.expr.has_var()
    }

    /// Applies `func` to this formula, keeping the parameter bindings.
    pub fn compose(&self, func: Func) -> RealFn {
        self.map_expr(|e| Expr::call(func, e))
    }

    /// Rewrites the tree while keeping the variable and parameter bindings.
    pub fn map_expr(&self, f: impl FnOnce(Expr) -> Expr) -> RealFn {
        let expr = f(self.expr.clone());
        let resolved = expr.substitute(&self.params);
        RealFn {
            expr,
            var: self.var,
            params: self.params.clone(),
            resolved,
        }
    }

    /// Combines two formulas over the same variable.
    pub fn combine(&self, op: BinOp, other: &RealFn) -> RealFn {
        assert_eq!(self.var, other.var, "combining formulas over different variables");
        let mut params = self.params.clone();
        params.extend(other.params.iter().map(|(k, v)| (k.clone(), *v)));
        let expr = Expr::bin(op, self.expr.clone(), other.expr.clone());
        let resolved = expr.substitute(&params);
        RealFn {
            expr,
            var: self.var,
            params,
            resolved,
        }
    }

    /// Algebraic clean-up of the symbolic tree.
    pub fn simplified(&self) -> RealFn {
        let expr = simplify(&self.expr);
        let resolved = expr.substitute(&self.params);
        RealFn {
            expr,
            var: self.var,
            params: self.params.clone(),
            resolved,
        }
    }
}

impl fmt::Display for RealFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)
    }
}

fn check_variable(expr: &Expr, var: Variable, src: &str) -> Result<(), ExprError> {
    let mut wrong = None;
    expr.visit_leaves(&mut |leaf| {
        if let Expr::Var(v) = leaf {
            if *v != var && wrong.is_none() {
                wrong = Some(*v);
            }
        }
    });
    match wrong {
        Some(v) => Err(ExprError::UnknownIdentifier {
            name: v.name().to_string(),
            offset: identifier_offset(src, v.name()),
        }),
        None => Ok(()),
    }
}

fn identifier_offset(src: &str, name: &str) -> usize {
    let bytes = src.as_bytes();
    let is_ident = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut start = 0;
    while let Some(pos) = src[start..].find(name) {
        let at = start + pos;
        let end = at + name.len();
        let before_ok = at == 0 || !is_ident(bytes[at - 1]);
        let after_ok = end >= bytes.len() || !is_ident(bytes[end]);
        if before_ok && after_ok {
            return at;
        }
        start = at + 1;
    }
    0
}
