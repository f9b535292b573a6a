//! A small expression language for coefficients and boundary data.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' unary)?
//! primary := number | 'pi' | var | func '(' expr (',' expr)* ')' | '(' expr ')'
//! var     := 'x' | 'y' | 'z' | 'u'
//! func    := 'sin' | 'cos' | 'exp' | 'tanh' | 'abs' | 'min' | 'max'
//! ```
//!
//! `^` binds tighter than unary minus and is right associative, so `-x^2 = -(x^2)`.
//! Evaluation is generic over [`Scalar`], which gives exact first and second derivatives
//! through the [`Dual`] and [`Jet`] number types.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    Z,
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    Abs,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(v) => f.write_str(match v {
                Var::X => "x",
                Var::Y => "y",
                Var::Z => "z",
                Var::U => "u",
            }),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| Error::Syntax { pos: start, msg: format!("malformed number `{text}`") })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if "+-*/^(),".contains(c) {
            out.push((i, Tok::Sym(c)));
            i += 1;
        } else {
            return Err(Error::Syntax { pos: i, msg: format!("unexpected character `{c}`") });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::Syntax { pos: self.offset(), msg: format!("expected `{c}`") })
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else if self.eat('+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat('^') {
            let exp = self.unary()?;
            Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Expr> {
        let pos = self.offset();
        let tok = self.toks.get(self.pos).map(|(_, t)| t.clone());
        match tok {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "x" => return Ok(Expr::Var(Var::X)),
                    "y" => return Ok(Expr::Var(Var::Y)),
                    "z" => return Ok(Expr::Var(Var::Z)),
                    "u" => return Ok(Expr::Var(Var::U)),
                    "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
                    _ => {}
                }
                let func = Func::from_name(&name).ok_or(Error::UnknownIdentifier { name: name.clone(), pos })?;
                self.expect('(')?;
                let mut args = vec![self.expr()?];
                while self.eat(',') {
                    args.push(self.expr()?);
                }
                self.expect(')')?;
                if args.len() != func.arity() {
                    return Err(Error::Syntax {
                        pos,
                        msg: format!("{} takes {} argument(s), got {}", name, func.arity(), args.len()),
                    });
                }
                Ok(Expr::Call(func, args))
            }
            Some(Tok::Sym(c)) => Err(Error::Syntax { pos, msg: format!("unexpected `{c}`") }),
            None => Err(Error::Syntax { pos, msg: "unexpected end of expression".into() }),
        }
    }
}

/// Parses an expression; errors carry the byte offset of the offending token.
pub fn parse_expr(src: &str) -> Result<Expr> {
    if src.trim().is_empty() {
        return Err(Error::Syntax { pos: 0, msg: "empty expression".into() });
    }
    let mut p = Parser { toks: tokenize(src)?, pos: 0, end: src.len() };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(Error::Syntax { pos: p.offset(), msg: "unexpected trailing input".into() });
    }
    Ok(e)
}

impl std::str::FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_expr(s)
    }
}

/// Number type the evaluator runs on.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    /// Applies a scalar function given its value and first two derivatives at `self.value()`.
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self;

    fn sin(self) -> Self {
        let v = self.value();
        self.chain(v.sin(), v.cos(), -v.sin())
    }
    fn cos(self) -> Self {
        let v = self.value();
        self.chain(v.cos(), -v.sin(), -v.cos())
    }
    fn exp(self) -> Self {
        let e = self.value().exp();
        self.chain(e, e, e)
    }
    fn tanh(self) -> Self {
        let t = self.value().tanh();
        let s = 1.0 - t * t;
        self.chain(t, s, -2.0 * t * s)
    }
    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }
    fn ln(self) -> Self {
        let v = self.value();
        self.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
    }
    fn powf(self, e: Self) -> Self;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn chain(self, f: f64, _: f64, _: f64) -> Self {
        f
    }
    fn powf(self, e: Self) -> Self {
        f64::powf(self, e)
    }
}

/// Constant-exponent power `a^c` through the chain rule; safe for negative bases with integer
/// exponents.
fn pow_const<T: Scalar>(a: T, c: f64) -> T {
    if c == 0.0 {
        return T::constant(1.0);
    }
    if c == 1.0 {
        return a;
    }
    let v = a.value();
    let d2 = if c == 2.0 { 2.0 } else { c * (c - 1.0) * v.powf(c - 2.0) };
    a.chain(v.powf(c), c * v.powf(c - 1.0), d2)
}

/// First-order forward-mode number in one variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn variable(v: f64) -> Self {
        Self { v, d: 1.0 }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, d: self.d + o.d }
    }
}
impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { v: self.v - o.v, d: self.d - o.d }
    }
}
impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self { v: self.v * o.v, d: self.v * o.d + self.d * o.v }
    }
}
impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Self { v: self.v / o.v, d: (self.d * o.v - self.v * o.d) / (o.v * o.v) }
    }
}
impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self { v: -self.v, d: -self.d }
    }
}

impl Scalar for Dual {
    fn constant(v: f64) -> Self {
        Self { v, d: 0.0 }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn chain(self, f: f64, df: f64, _: f64) -> Self {
        Self { v: f, d: df * self.d }
    }
    fn powf(self, e: Self) -> Self {
        if e.d == 0.0 {
            pow_const(self, e.v)
        } else {
            (e * self.ln()).exp()
        }
    }
}

/// Second-order forward-mode number in the three space variables: value, gradient, Hessian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; 3],
    pub h: [[f64; 3]; 3],
}

impl Jet {
    /// The coordinate function `x_k` evaluated at `v`.
    pub fn coordinate(k: usize, v: f64) -> Self {
        let mut g = [0.0; 3];
        g[k] = 1.0;
        Self { v, g, h: [[0.0; 3]; 3] }
    }

    pub fn laplacian(&self) -> f64 {
        self.h[0][0] + self.h[1][1] + self.h[2][2]
    }
}

impl Add for Jet {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut r = self;
        r.v += o.v;
        for i in 0..3 {
            r.g[i] += o.g[i];
            for j in 0..3 {
                r.h[i][j] += o.h[i][j];
            }
        }
        r
    }
}
impl Sub for Jet {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}
impl Neg for Jet {
    type Output = Self;
    fn neg(self) -> Self {
        Self { v: -self.v, g: self.g.map(|x| -x), h: self.h.map(|r| r.map(|x| -x)) }
    }
}
impl Mul for Jet {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut r = Jet::constant(self.v * o.v);
        for i in 0..3 {
            r.g[i] = self.v * o.g[i] + o.v * self.g[i];
            for j in 0..3 {
                r.h[i][j] = self.v * o.h[i][j] + o.v * self.h[i][j] + self.g[i] * o.g[j] + o.g[i] * self.g[j];
            }
        }
        r
    }
}
impl Div for Jet {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let v = o.v;
        self * o.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }
}

impl Scalar for Jet {
    fn constant(v: f64) -> Self {
        Self { v, g: [0.0; 3], h: [[0.0; 3]; 3] }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        let mut r = Jet::constant(f);
        for i in 0..3 {
            r.g[i] = df * self.g[i];
            for j in 0..3 {
                r.h[i][j] = df * self.h[i][j] + d2f * self.g[i] * self.g[j];
            }
        }
        r
    }
    fn powf(self, e: Self) -> Self {
        if e.g == [0.0; 3] && e.h == [[0.0; 3]; 3] {
            pow_const(self, e.v)
        } else {
            (e * self.ln()).exp()
        }
    }
}

/// Values of the free variables.
#[derive(Debug, Clone, Copy)]
pub struct Vars<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub u: T,
}

impl Vars<f64> {
    pub fn at(p: &[f64; 3], u: f64) -> Self {
        Self { x: p[0], y: p[1], z: p[2], u }
    }
}

impl Expr {
    pub fn eval<T: Scalar>(&self, vars: &Vars<T>) -> T {
        match self {
            Expr::Num(v) => T::constant(*v),
            Expr::Var(Var::X) => vars.x,
            Expr::Var(Var::Y) => vars.y,
            Expr::Var(Var::Z) => vars.z,
            Expr::Var(Var::U) => vars.u,
            Expr::Neg(e) => -e.eval(vars),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(vars), b.eval(vars));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(func, args) => {
                let a = args[0].eval(vars);
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Tanh => a.tanh(),
                    Func::Abs => a.abs(),
                    Func::Min | Func::Max => {
                        let b = args[1].eval(vars);
                        let pick_a = if *func == Func::Min { a.value() <= b.value() } else { a.value() >= b.value() };
                        if pick_a {
                            a
                        } else {
                            b
                        }
                    }
                }
            }
        }
    }

    /// Value at a point in space (with `u = 0`).
    pub fn eval_at(&self, p: &[f64; 3]) -> f64 {
        self.eval(&Vars::at(p, 0.0))
    }

    /// Value, gradient and Hessian in space at `p` (with `u = 0`).
    pub fn jet_at(&self, p: &[f64; 3]) -> Jet {
        let vars = Vars {
            x: Jet::coordinate(0, p[0]),
            y: Jet::coordinate(1, p[1]),
            z: Jet::coordinate(2, p[2]),
            u: Jet::constant(0.0),
        };
        self.eval(&vars)
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(e) => e.uses(var),
            Expr::Bin(_, a, b) => a.uses(var) || b.uses(var),
            Expr::Call(_, args) => args.iter().any(|a| a.uses(var)),
        }
    }

    /// False if the expression contains a kink (`abs`, `min`, `max`).
    pub fn is_smooth(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Var(_) => true,
            Expr::Neg(e) => e.is_smooth(),
            Expr::Bin(_, a, b) => a.is_smooth() && b.is_smooth(),
            Expr::Call(f, args) => !matches!(f, Func::Abs | Func::Min | Func::Max) && args.iter().all(Expr::is_smooth),
        }
    }
}
