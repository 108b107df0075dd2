//! Nonlinear predictors `η = f(x; β)` parsed from text.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?            right-associative
//! atom    := number | ident | func '(' expr ')' | '(' expr ')'
//! func    := log | exp | sqrt | sin | cos | tan
//! ```
//!
//! Numbers are decimal literals with an optional exponent (`1.5`, `2e-3`).
//! Every identifier must be a declared covariate or parameter. Values,
//! gradients and Hessians with respect to the parameters are propagated
//! together in one forward pass over the tree, so the Jacobian and the
//! per-observation Hessians are exact.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Log,
    Exp,
    Sqrt,
    Sin,
    Cos,
    Tan,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "log" => Func::Log,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Log => "log",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Covariate(usize),
    Param(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    fn depends_on_params(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Covariate(_) => false,
            Expr::Param(_) => true,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on_params(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.depends_on_params() || b.depends_on_params()
            }
        }
    }
}

/// A parsed predictor together with its symbol tables.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    ast: Expr,
    covariate_names: Vec<String>,
    parameter_names: Vec<String>,
}

/// Predictor values and exact first/second derivatives at one `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignDerivatives {
    pub eta: DVector<f64>,
    /// `n × p`, entry `(i, r) = ∂ηᵢ/∂βᵣ`.
    pub jacobian: DMatrix<f64>,
    /// One symmetric `p × p` matrix `∂²ηᵢ/∂βᵣ∂βₛ` per observation.
    pub hessians: Vec<DMatrix<f64>>,
}

// ---------------------------------------------------------------------------
// Lexer / parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::Slash => "`/`".into(),
        Tok::Caret => "`^`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::End => "end of input".into(),
    }
}

/// Tokens paired with 1-based character positions.
fn lex(source: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let simple = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(t) = simple {
            out.push((t, pos));
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value: f64 = text.parse().map_err(|_| Error::Syntax {
                pos,
                msg: format!("malformed number `{text}`"),
            })?;
            out.push((Tok::Num(value), pos));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
            continue;
        }
        return Err(Error::Syntax {
            pos,
            msg: format!("unexpected character `{c}`"),
        });
    }
    out.push((Tok::End, chars.len() + 1));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    at: usize,
    covariates: &'a [String],
    parameters: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<()> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(Error::Syntax {
                pos: self.pos(),
                msg: format!("expected {}, found {}", describe(&want), describe(self.peek())),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let (tok, pos) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    if *self.peek() != Tok::LParen {
                        return Err(Error::Syntax {
                            pos: self.pos(),
                            msg: format!("function `{name}` must be followed by `(`"),
                        });
                    }
                    self.bump();
                    let arg = self.expr()?;
                    self.expect(Tok::RParen)?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                if *self.peek() == Tok::LParen {
                    return Err(Error::Syntax {
                        pos,
                        msg: format!("unknown function `{name}`"),
                    });
                }
                if let Some(k) = self.covariates.iter().position(|c| *c == name) {
                    Ok(Expr::Covariate(k))
                } else if let Some(k) = self.parameters.iter().position(|c| *c == name) {
                    Ok(Expr::Param(k))
                } else {
                    Err(Error::UnknownIdentifier { name, pos })
                }
            }
            other => Err(Error::Syntax {
                pos,
                msg: format!("unexpected {}", describe(&other)),
            }),
        }
    }
}

fn check_names(kind: &str, names: &[String]) -> Result<()> {
    for (i, n) in names.iter().enumerate() {
        let valid = n
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid {
            return Err(Error::invalid(format!("{kind} name `{n}` is not an identifier")));
        }
        if Func::from_name(n).is_some() {
            return Err(Error::invalid(format!("{kind} name `{n}` is a reserved function name")));
        }
        if names[..i].contains(n) {
            return Err(Error::invalid(format!("duplicate {kind} name `{n}`")));
        }
    }
    Ok(())
}

impl PredictorModel {
    pub fn parse<S: AsRef<str>, T: AsRef<str>>(
        source: &str,
        covariates: &[S],
        parameters: &[T],
    ) -> Result<Self> {
        let covariate_names: Vec<String> = covariates.iter().map(|s| s.as_ref().to_string()).collect();
        let parameter_names: Vec<String> = parameters.iter().map(|s| s.as_ref().to_string()).collect();
        if parameter_names.is_empty() {
            return Err(Error::invalid("predictor needs at least one parameter"));
        }
        check_names("covariate", &covariate_names)?;
        check_names("parameter", &parameter_names)?;
        if let Some(dup) = covariate_names.iter().find(|c| parameter_names.contains(c)) {
            return Err(Error::invalid(format!(
                "`{dup}` is declared both as covariate and as parameter"
            )));
        }
        let mut parser = Parser {
            toks: lex(source)?,
            at: 0,
            covariates: &covariate_names,
            parameters: &parameter_names,
        };
        let ast = parser.expr()?;
        if *parser.peek() != Tok::End {
            return Err(Error::Syntax {
                pos: parser.pos(),
                msg: format!("unexpected {}", describe(parser.peek())),
            });
        }
        Ok(PredictorModel {
            ast,
            covariate_names,
            parameter_names,
        })
    }

    /// Parses with every identifier that is neither a covariate nor a function
    /// treated as a parameter, in order of first appearance.
    pub fn parse_with_inferred_parameters<S: AsRef<str>>(source: &str, covariates: &[S]) -> Result<Self> {
        let mut params: Vec<String> = Vec::new();
        for (tok, _) in lex(source)? {
            if let Tok::Ident(name) = tok {
                let is_cov = covariates.iter().any(|c| c.as_ref() == name);
                if !is_cov && Func::from_name(&name).is_none() && !params.contains(&name) {
                    params.push(name);
                }
            }
        }
        Self::parse(source, covariates, &params)
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.parameter_names
    }

    /// Number of parameters `p`.
    pub fn n_params(&self) -> usize {
        self.parameter_names.len()
    }

    /// Number of covariates `m`.
    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn eval_eta(&self, x: &DMatrix<f64>, beta: &[f64]) -> Result<DVector<f64>> {
        self.check_shapes(x, beta)?;
        let mut eta = DVector::zeros(x.nrows());
        for i in 0..x.nrows() {
            eta[i] = self.eval_row(x, i, beta, Order::Value)?.v;
        }
        Ok(eta)
    }

    pub fn jacobian(&self, x: &DMatrix<f64>, beta: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.eval_first_order(x, beta)?.1)
    }

    pub fn hessians(&self, x: &DMatrix<f64>, beta: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        Ok(self.derivatives(x, beta)?.hessians)
    }

    /// `η` and the Jacobian without the Hessians.
    pub fn eval_first_order(&self, x: &DMatrix<f64>, beta: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_shapes(x, beta)?;
        let (n, p) = (x.nrows(), self.n_params());
        let mut eta = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, p);
        for i in 0..n {
            let jet = self.eval_row(x, i, beta, Order::Gradient)?;
            eta[i] = jet.v;
            for r in 0..p {
                jac[(i, r)] = jet.grad(r);
            }
        }
        Ok((eta, jac))
    }

    pub fn derivatives(&self, x: &DMatrix<f64>, beta: &[f64]) -> Result<DesignDerivatives> {
        self.check_shapes(x, beta)?;
        let (n, p) = (x.nrows(), self.n_params());
        let mut eta = DVector::zeros(n);
        let mut jacobian = DMatrix::zeros(n, p);
        let mut hessians = Vec::with_capacity(n);
        for i in 0..n {
            let jet = self.eval_row(x, i, beta, Order::Hessian)?;
            eta[i] = jet.v;
            for r in 0..p {
                jacobian[(i, r)] = jet.grad(r);
            }
            let mut h = DMatrix::zeros(p, p);
            if !jet.h.is_empty() {
                for r in 0..p {
                    for s in 0..p {
                        h[(r, s)] = jet.h[r * p + s];
                    }
                }
            }
            hessians.push(h);
        }
        Ok(DesignDerivatives {
            eta,
            jacobian,
            hessians,
        })
    }

    fn check_shapes(&self, x: &DMatrix<f64>, beta: &[f64]) -> Result<()> {
        if x.ncols() != self.n_covariates() {
            return Err(Error::invalid(format!(
                "covariate matrix has {} columns, predictor declares {}",
                x.ncols(),
                self.n_covariates()
            )));
        }
        if beta.len() != self.n_params() {
            return Err(Error::invalid(format!(
                "beta has {} entries, predictor declares {}",
                beta.len(),
                self.n_params()
            )));
        }
        if let Some(b) = beta.iter().find(|b| !b.is_finite()) {
            return Err(Error::invalid(format!("beta entry {b} is not finite")));
        }
        Ok(())
    }

    fn eval_row(&self, x: &DMatrix<f64>, row: usize, beta: &[f64], order: Order) -> Result<Jet> {
        let ctx = EvalCtx {
            model: self,
            x,
            row,
            beta,
            order,
            p: self.n_params(),
        };
        ctx.eval(&self.ast)
    }

    fn fmt_expr(&self, e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match e {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Covariate(k) => write!(f, "{}", self.covariate_names[*k]),
            Expr::Param(k) => write!(f, "{}", self.parameter_names[*k]),
            Expr::Neg(a) => {
                write!(f, "(-")?;
                self.fmt_expr(a, f)?;
                write!(f, ")")
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                self.fmt_expr(a, f)?;
                write!(f, ")")
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                let op = match e {
                    Expr::Add(..) => "+",
                    Expr::Sub(..) => "-",
                    Expr::Mul(..) => "*",
                    Expr::Div(..) => "/",
                    _ => "^",
                };
                write!(f, "(")?;
                self.fmt_expr(a, f)?;
                write!(f, " {op} ")?;
                self.fmt_expr(b, f)?;
                write!(f, ")")
            }
        }
    }

    fn expr_text(&self, e: &Expr) -> String {
        struct Show<'a>(&'a PredictorModel, &'a Expr);
        impl fmt::Display for Show<'_> {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt_expr(self.1, f)
            }
        }
        Show(self, e).to_string()
    }
}

/// Fully parenthesized source text that parses back to the same tree.
impl fmt::Display for PredictorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_expr(&self.ast, f)
    }
}

// ---------------------------------------------------------------------------
// Forward-mode evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Value with gradient and (row-major, symmetric) Hessian in `β`.
/// Empty `g` marks a subtree that does not depend on `β`.
#[derive(Debug, Clone)]
struct Jet {
    v: f64,
    g: Vec<f64>,
    h: Vec<f64>,
}

impl Jet {
    fn constant(v: f64) -> Self {
        Jet {
            v,
            g: Vec::new(),
            h: Vec::new(),
        }
    }

    fn is_const(&self) -> bool {
        self.g.is_empty()
    }

    fn grad(&self, r: usize) -> f64 {
        if self.g.is_empty() {
            0.0
        } else {
            self.g[r]
        }
    }
}

struct EvalCtx<'a> {
    model: &'a PredictorModel,
    x: &'a DMatrix<f64>,
    row: usize,
    beta: &'a [f64],
    order: Order,
    p: usize,
}

impl EvalCtx<'_> {
    fn domain(&self, e: &Expr, what: &str) -> Error {
        Error::domain(format!(
            "row {}: {} in `{}`",
            self.row + 1,
            what,
            self.model.expr_text(e)
        ))
    }

    fn param(&self, k: usize) -> Jet {
        let p = self.p;
        let mut g = vec![0.0; p];
        g[k] = 1.0;
        let h = if self.order == Order::Hessian {
            vec![0.0; p * p]
        } else {
            Vec::new()
        };
        Jet {
            v: self.beta[k],
            g,
            h,
        }
    }

    /// `F(a)` given `F(a.v)`, `F'(a.v)`, `F''(a.v)`.
    fn chain(&self, a: &Jet, f0: f64, f1: f64, f2: f64) -> Jet {
        if a.is_const() {
            return Jet::constant(f0);
        }
        let p = self.p;
        let g: Vec<f64> = a.g.iter().map(|gi| f1 * gi).collect();
        let mut h = Vec::new();
        if self.order == Order::Hessian {
            h = vec![0.0; p * p];
            for r in 0..p {
                for s in r..p {
                    let v = f1 * a.h[r * p + s] + f2 * a.g[r] * a.g[s];
                    h[r * p + s] = v;
                    h[s * p + r] = v;
                }
            }
        }
        Jet { v: f0, g, h }
    }

    fn add(&self, a: &Jet, b: &Jet, sign: f64) -> Jet {
        let v = a.v + sign * b.v;
        match (a.is_const(), b.is_const()) {
            (true, true) => Jet::constant(v),
            (false, true) => Jet { v, ..a.clone() },
            (true, false) => Jet {
                v,
                g: b.g.iter().map(|x| sign * x).collect(),
                h: b.h.iter().map(|x| sign * x).collect(),
            },
            (false, false) => Jet {
                v,
                g: a.g.iter().zip(&b.g).map(|(x, y)| x + sign * y).collect(),
                h: a.h.iter().zip(&b.h).map(|(x, y)| x + sign * y).collect(),
            },
        }
    }

    fn mul(&self, a: &Jet, b: &Jet) -> Jet {
        let v = a.v * b.v;
        if a.is_const() && b.is_const() {
            return Jet::constant(v);
        }
        if b.is_const() {
            return self.chain(a, v, b.v, 0.0);
        }
        if a.is_const() {
            return self.chain(b, v, a.v, 0.0);
        }
        let p = self.p;
        let g: Vec<f64> = (0..p).map(|r| a.g[r] * b.v + b.g[r] * a.v).collect();
        let mut h = Vec::new();
        if self.order == Order::Hessian {
            h = vec![0.0; p * p];
            for r in 0..p {
                for s in r..p {
                    let val = a.h[r * p + s] * b.v
                        + b.h[r * p + s] * a.v
                        + a.g[r] * b.g[s]
                        + b.g[r] * a.g[s];
                    h[r * p + s] = val;
                    h[s * p + r] = val;
                }
            }
        }
        Jet { v, g, h }
    }

    fn finite(&self, e: &Expr, j: Jet) -> Result<Jet> {
        if j.v.is_finite() && j.g.iter().all(|x| x.is_finite()) && j.h.iter().all(|x| x.is_finite()) {
            Ok(j)
        } else {
            Err(self.domain(e, "non-finite value or derivative"))
        }
    }

    fn eval(&self, e: &Expr) -> Result<Jet> {
        let out = match e {
            Expr::Num(v) => Jet::constant(*v),
            Expr::Covariate(k) => Jet::constant(self.x[(self.row, *k)]),
            Expr::Param(k) => {
                if self.order == Order::Value {
                    Jet::constant(self.beta[*k])
                } else {
                    self.param(*k)
                }
            }
            Expr::Neg(a) => {
                let a = self.eval(a)?;
                self.chain(&a, -a.v, -1.0, 0.0)
            }
            Expr::Add(a, b) => self.add(&self.eval(a)?, &self.eval(b)?, 1.0),
            Expr::Sub(a, b) => self.add(&self.eval(a)?, &self.eval(b)?, -1.0),
            Expr::Mul(a, b) => self.mul(&self.eval(a)?, &self.eval(b)?),
            Expr::Div(a, b) => {
                let num = self.eval(a)?;
                let den = self.eval(b)?;
                if den.v == 0.0 {
                    return Err(self.domain(e, "division by zero"));
                }
                let inv = 1.0 / den.v;
                let recip = self.chain(&den, inv, -inv * inv, 2.0 * inv * inv * inv);
                self.mul(&num, &recip)
            }
            Expr::Pow(a, b) => self.pow(e, a, b)?,
            Expr::Call(func, a) => {
                let a = self.eval(a)?;
                let x = a.v;
                match func {
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(self.domain(e, &format!("log of nonpositive value {x}")));
                        }
                        self.chain(&a, x.ln(), 1.0 / x, -1.0 / (x * x))
                    }
                    Func::Exp => {
                        let v = x.exp();
                        self.chain(&a, v, v, v)
                    }
                    Func::Sqrt => {
                        if x < 0.0 || (x == 0.0 && !a.is_const()) {
                            return Err(self.domain(e, &format!("sqrt of value {x}")));
                        }
                        let s = x.sqrt();
                        self.chain(&a, s, 0.5 / s, -0.25 / (s * x))
                    }
                    Func::Sin => self.chain(&a, x.sin(), x.cos(), -x.sin()),
                    Func::Cos => self.chain(&a, x.cos(), -x.sin(), -x.cos()),
                    Func::Tan => {
                        let t = x.tan();
                        let sec2 = 1.0 + t * t;
                        self.chain(&a, t, sec2, 2.0 * sec2 * t)
                    }
                }
            }
        };
        self.finite(e, out)
    }

    fn pow(&self, e: &Expr, base: &Expr, exponent: &Expr) -> Result<Jet> {
        let a = self.eval(base)?;
        let b = self.eval(exponent)?;
        if !exponent.depends_on_params() {
            let c = b.v;
            if a.is_const() {
                let v = a.v.powf(c);
                if !v.is_finite() {
                    return Err(self.domain(e, &format!("power {}^{} undefined", a.v, c)));
                }
                return Ok(Jet::constant(v));
            }
            let integer = c.fract() == 0.0 && c.abs() < 1e9;
            if a.v > 0.0 || integer {
                let (f0, f1, f2) = if integer {
                    let k = c as i32;
                    (
                        a.v.powi(k),
                        c * a.v.powi(k - 1),
                        c * (c - 1.0) * a.v.powi(k - 2),
                    )
                } else {
                    (
                        a.v.powf(c),
                        c * a.v.powf(c - 1.0),
                        c * (c - 1.0) * a.v.powf(c - 2.0),
                    )
                };
                // powi(k-1) at zero base with k = 0,1 is fine; f1/f2 are then multiplied by zero
                let f1 = if c == 0.0 { 0.0 } else { f1 };
                let f2 = if c == 0.0 || c == 1.0 { 0.0 } else { f2 };
                return Ok(self.chain(&a, f0, f1, f2));
            }
            return Err(self.domain(
                e,
                &format!("non-integer power {c} of nonpositive base {}", a.v),
            ));
        }
        // exponent depends on β: a^b = exp(b log a), needs a > 0
        if a.v <= 0.0 {
            return Err(self.domain(
                e,
                &format!("base {} must be positive for a parameter-dependent exponent", a.v),
            ));
        }
        let log_a = self.chain(&a, a.v.ln(), 1.0 / a.v, -1.0 / (a.v * a.v));
        let prod = self.mul(&b, &log_a);
        let v = prod.v.exp();
        Ok(self.chain(&prod, v, v, v))
    }
}
