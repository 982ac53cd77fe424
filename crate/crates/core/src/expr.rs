//! A tiny arithmetic expression grammar for scenario files: variables
//! `x`, `y`, `z`, `t`, the operators `+ - * / ^`, parentheses, and the
//! functions `sin`, `cos`, `exp`. Parsed by recursive descent into a
//! small AST evaluated per point.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{0}' at offset {1}")]
    BadChar(char, usize),
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token at offset {0}")]
    BadToken(usize),
    #[error("unknown identifier '{0}'")]
    UnknownIdent(String),
    #[error("unbalanced parenthesis at offset {0}")]
    Unbalanced(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Var {
    X,
    Y,
    Z,
    T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Unary(Func, Box<Expr>),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Evaluates at a spatial point (missing coordinates read as 0) and
    /// time.
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        let coord = |i: usize| x.get(i).copied().unwrap_or(0.0);
        match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X) => coord(0),
            Expr::Var(Var::Y) => coord(1),
            Expr::Var(Var::Z) => coord(2),
            Expr::Var(Var::T) => t,
            Expr::Neg(e) => -e.eval(x, t),
            Expr::Unary(f, e) => {
                let v = e.eval(x, t);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                }
            }
            Expr::Add(a, b) => a.eval(x, t) + b.eval(x, t),
            Expr::Sub(a, b) => a.eval(x, t) - b.eval(x, t),
            Expr::Mul(a, b) => a.eval(x, t) * b.eval(x, t),
            Expr::Div(a, b) => a.eval(x, t) / b.eval(x, t),
            Expr::Pow(a, b) => a.eval(x, t).powf(b.eval(x, t)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(Var::X) => write!(f, "x"),
            Expr::Var(Var::Y) => write!(f, "y"),
            Expr::Var(Var::Z) => write!(f, "z"),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Unary(Func::Sin, e) => write!(f, "sin({e})"),
            Expr::Unary(Func::Cos, e) => write!(f, "cos({e})"),
            Expr::Unary(Func::Exp, e) => write!(f, "exp({e})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

pub fn parse(src: &str) -> Result<Expr, ExprError> {
    let mut p = Parser { src: src.as_bytes(), pos: 0 };
    let e = p.sum()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(ExprError::BadToken(p.pos));
    }
    Ok(e)
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.src.get(self.pos).is_some_and(|c| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut left = self.product()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    left = Expr::Add(Box::new(left), Box::new(self.product()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    left = Expr::Sub(Box::new(left), Box::new(self.product()?));
                }
                _ => return Ok(left),
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut left = self.power()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    left = Expr::Mul(Box::new(left), Box::new(self.power()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    left = Expr::Div(Box::new(left), Box::new(self.power()?));
                }
                _ => return Ok(left),
            }
        }
    }

    /// `^` binds tighter than `*` and associates to the right.
    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.power()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(ExprError::UnexpectedEnd),
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.atom()?)))
            }
            Some(b'(') => {
                let open = self.pos;
                self.pos += 1;
                let e = self.sum()?;
                if self.peek() != Some(b')') {
                    return Err(ExprError::Unbalanced(open));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(ExprError::BadChar(c as char, self.pos)),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|&c| c.is_ascii_digit() || c == b'.')
        {
            self.pos += 1;
        }
        // scientific notation: 1e-3, 2.5E+4
        if self.src.get(self.pos).is_some_and(|&c| c == b'e' || c == b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.src.get(self.pos).is_some_and(|&c| c == b'+' || c == b'-') {
                self.pos += 1;
            }
            if self.src.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                while self.src.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| ExprError::BadToken(start))
    }

    fn ident(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.src.get(self.pos).is_some_and(|c| c.is_ascii_alphanumeric()) {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match name {
            "x" => Ok(Expr::Var(Var::X)),
            "y" => Ok(Expr::Var(Var::Y)),
            "z" => Ok(Expr::Var(Var::Z)),
            "t" => Ok(Expr::Var(Var::T)),
            "pi" => Ok(Expr::Num(std::f64::consts::PI)),
            "sin" | "cos" | "exp" => {
                let func = match name {
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    _ => Func::Exp,
                };
                if self.peek() != Some(b'(') {
                    return Err(ExprError::BadToken(self.pos));
                }
                let open = self.pos;
                self.pos += 1;
                let arg = self.sum()?;
                if self.peek() != Some(b')') {
                    return Err(ExprError::Unbalanced(open));
                }
                self.pos += 1;
                Ok(Expr::Unary(func, Box::new(arg)))
            }
            _ => Err(ExprError::UnknownIdent(name.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, x: &[f64], t: f64) -> f64 {
        parse(src).unwrap().eval(x, t)
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(eval("1 + 2 * 3", &[], 0.0), 7.0);
        assert_eq!(eval("(1 + 2) * 3", &[], 0.0), 9.0);
        assert_eq!(eval("2 ^ 3 ^ 2", &[], 0.0), 512.0); // right-associative
        assert_eq!(eval("10 - 4 - 3", &[], 0.0), 3.0); // left-associative
        assert_eq!(eval("8 / 4 / 2", &[], 0.0), 1.0);
        assert_eq!(eval("-2 ^ 2", &[], 0.0), 4.0); // unary binds to the atom
        assert_eq!(eval("2 * -3", &[], 0.0), -6.0);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(eval("x + 2*y + 3*z + 4*t", &[1.0, 2.0, 3.0], 5.0), 34.0);
        assert_eq!(eval("z", &[1.0, 2.0], 0.0), 0.0); // 2-d points have z = 0
        assert!((eval("sin(pi/2)", &[], 0.0) - 1.0).abs() < 1e-15);
        assert!((eval("cos(0) + exp(0)", &[], 0.0) - 2.0).abs() < 1e-15);
        assert!((eval("sin(pi*x)^2", &[0.5], 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scientific_notation() {
        assert_eq!(eval("1e-3", &[], 0.0), 1e-3);
        assert_eq!(eval("2.5E+2", &[], 0.0), 250.0);
        // a bare 'e' suffix is not an exponent
        assert!(parse("1e").is_err() || eval("1e", &[], 0.0) == 1.0);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse("").is_err());
        assert!(parse("1 +").is_err());
        assert!(parse("(1 + 2").is_err());
        assert!(parse("foo + 1").is_err());
        assert!(parse("sin 2").is_err());
        assert!(parse("1 2").is_err());
        assert!(parse("2 $ 3").is_err());
    }

    #[test]
    fn display_round_trips() {
        let e = parse("1 + x*sin(pi*t) - y^2").unwrap();
        let back = parse(&e.to_string()).unwrap();
        assert_eq!(back.eval(&[0.3, 0.7], 0.2), e.eval(&[0.3, 0.7], 0.2));
    }
}
