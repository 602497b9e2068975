//! A small arithmetic expression language for user-supplied scalar functions.
//!
//! Supported syntax: `+  -  *  /  ^` (with `^` right-associative and binding
//! tighter than unary minus), parentheses, numeric literals (including
//! scientific notation), the constant `pi`, the unary functions `sin cos exp
//! ln sqrt abs`, and free variables (any other identifier, e.g. `z`, `x`,
//! `mu`).  Variables are bound at evaluation time.

use crate::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        };
        f.write_str(name)
    }
}

impl Expr {
    /// Parse source text into an expression tree.
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0, src };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::config(format!(
                "unexpected trailing input at offset {} in expression `{src}`",
                p.offset()
            )));
        }
        Ok(e)
    }

    /// Evaluate with the given variable bindings.  Unknown variables are a
    /// configuration error; domain issues (e.g. `ln` of a negative number)
    /// surface as NaN, matching IEEE semantics.
    pub fn eval(&self, vars: &[(&str, f64)]) -> Result<f64> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(name) => vars
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::config(format!("unknown variable `{name}` in expression")))?,
            Expr::Neg(e) => -e.eval(vars)?,
            Expr::Add(a, b) => a.eval(vars)? + b.eval(vars)?,
            Expr::Sub(a, b) => a.eval(vars)? - b.eval(vars)?,
            Expr::Mul(a, b) => a.eval(vars)? * b.eval(vars)?,
            Expr::Div(a, b) => a.eval(vars)? / b.eval(vars)?,
            Expr::Pow(a, b) => a.eval(vars)?.powf(b.eval(vars)?),
            Expr::Call(f, e) => {
                let v = e.eval(vars)?;
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Ln => v.ln(),
                    Func::Sqrt => v.sqrt(),
                    Func::Abs => v.abs(),
                }
            }
        })
    }

    /// The set of free variable names, sorted and de-duplicated.
    pub fn free_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(n) => out.push(n.clone()),
            Expr::Neg(e) | Expr::Call(_, e) => e.collect_vars(out),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Check that every free variable is in `allowed`; used when wiring
    /// expressions into contexts that bind a fixed set of names.
    pub fn check_vars(&self, allowed: &[&str]) -> Result<()> {
        for v in self.free_vars() {
            if !allowed.contains(&v.as_str()) {
                return Err(Error::config(format!(
                    "expression uses variable `{v}`, but only {allowed:?} are available here"
                )));
            }
        }
        Ok(())
    }

    /// Turn a single-variable expression into a plain scalar closure.
    pub fn into_fn_of(self, var: &'static str) -> impl Fn(f64) -> f64 + Send + Sync + Clone {
        move |z: f64| self.eval(&[(var, z)]).unwrap_or(f64::NAN)
    }
}

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
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push((Tok::Plus, i));
                i += 1;
            }
            '-' => {
                out.push((Tok::Minus, i));
                i += 1;
            }
            '*' => {
                out.push((Tok::Star, i));
                i += 1;
            }
            '/' => {
                out.push((Tok::Slash, i));
                i += 1;
            }
            '^' => {
                out.push((Tok::Caret, i));
                i += 1;
            }
            '(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // Optional exponent part, e.g. 1e-3.
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| {
                    Error::config(format!("bad numeric literal `{text}` at offset {start}"))
                })?;
                out.push((Tok::Num(v), start));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            other => {
                return Err(Error::config(format!(
                    "unexpected character `{other}` at offset {i} in expression `{src}`"
                )))
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, o)| *o)
            .unwrap_or(self.src.len())
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
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
                Some(Tok::Star) => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            self.bump();
            // Right-associative: 2^3^2 == 2^(3^2).  The exponent may carry a
            // unary minus (z^-2).
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let off = self.offset();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.bump() {
                    Some(Tok::RParen) => Ok(e),
                    _ => Err(Error::config(format!(
                        "missing `)` at offset {} in expression `{}`",
                        self.offset(),
                        self.src
                    ))),
                }
            }
            Some(Tok::Ident(name)) => {
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    "ln" => Some(Func::Ln),
                    "sqrt" => Some(Func::Sqrt),
                    "abs" => Some(Func::Abs),
                    "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
                    _ => None,
                };
                match func {
                    Some(f) => {
                        if !matches!(self.peek(), Some(Tok::LParen)) {
                            return Err(Error::config(format!(
                                "function `{f}` needs parenthesized argument (offset {off} in `{}`)",
                                self.src
                            )));
                        }
                        self.bump();
                        let arg = self.expr()?;
                        match self.bump() {
                            Some(Tok::RParen) => Ok(Expr::Call(f, Box::new(arg))),
                            _ => Err(Error::config(format!(
                                "missing `)` after `{f}(...` in expression `{}`",
                                self.src
                            ))),
                        }
                    }
                    None => Ok(Expr::Var(name)),
                }
            }
            other => Err(Error::config(format!(
                "expected a value at offset {off} in expression `{}`, found {other:?}",
                self.src
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(src: &str, z: f64) -> f64 {
        Expr::parse(src).unwrap().eval(&[("z", z)]).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval1("2+3*4", 0.0), 14.0);
        assert_eq!(eval1("2^3^2", 0.0), 512.0); // right-assoc
        assert_eq!(eval1("-z^2", 3.0), -9.0); // unary minus binds looser than ^
        assert_eq!(eval1("(2+3)*4", 0.0), 20.0);
        assert_eq!(eval1("2-3-4", 0.0), -5.0); // left-assoc subtraction
        assert_eq!(eval1("12/4/3", 0.0), 1.0);
    }

    #[test]
    fn functions_and_constants() {
        assert!((eval1("sin(pi/2)", 0.0) - 1.0).abs() < 1e-15);
        assert!((eval1("sqrt(z)*sin(ln(z))", 1.0) - 0.0).abs() < 1e-15);
        assert!((eval1("exp(ln(z))", 2.5) - 2.5).abs() < 1e-12);
        assert!((eval1("abs(-3)", 0.0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn scientific_literals() {
        assert_eq!(eval1("1e-3 + 2.5E2", 0.0), 250.001);
        assert_eq!(eval1("1.5e2", 0.0), 150.0);
    }

    #[test]
    fn unknown_variable_is_config_error() {
        let e = Expr::parse("z + w").unwrap();
        assert!(e.eval(&[("z", 1.0)]).is_err());
        assert!(e.check_vars(&["z"]).is_err());
        assert!(e.check_vars(&["z", "w"]).is_ok());
        assert_eq!(e.free_vars(), vec!["w".to_string(), "z".to_string()]);
    }

    #[test]
    fn parse_errors_carry_position() {
        assert!(Expr::parse("2 +").is_err());
        assert!(Expr::parse("(1+2").is_err());
        assert!(Expr::parse("1 ? 2").is_err());
        assert!(Expr::parse("sin 3").is_err());
        assert!(Expr::parse("2 3").is_err());
    }

    #[test]
    fn negative_exponent() {
        assert!((eval1("z^-2", 2.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn domain_issues_become_nan() {
        assert!(eval1("ln(-1)", 0.0).is_nan());
        assert!(eval1("sqrt(0-4)", 0.0).is_nan());
    }
}
