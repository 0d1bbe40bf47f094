//! Closed-form expression strings for scenario configs.
//!
//! Grammar: `+ - * / ^`, `sin cos exp log abs`, numeric literals, `pi`,
//! and the variables `t`, `x1`, `x2` (plus `a1`, `a2` for convex-potential
//! integrands). `log` is the natural logarithm, `^` is right-associative
//! and binds tighter than unary minus.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Variable bindings for one evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Vars {
    pub t: f64,
    pub x: [f64; 2],
    pub a: [f64; 2],
}

impl Vars {
    pub fn spatial(x: &[f64]) -> Self {
        let mut v = Vars::default();
        v.x[..x.len()].copy_from_slice(x);
        v
    }

    pub fn space_time(t: f64, x: &[f64]) -> Self {
        let mut v = Self::spatial(x);
        v.t = t;
        v
    }

    pub fn with_arg(mut self, a: &[f64]) -> Self {
        self.a[..a.len()].copy_from_slice(a);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Const(f64),
    Var(u8), // 0 = t, 1 = x1, 2 = x2
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Sin(Box<Node>),
    Cos(Box<Node>),
    Exp(Box<Node>),
    Log(Box<Node>),
    Abs(Box<Node>),
}

/// A parsed expression; cheap to clone and evaluate.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser {
            bytes: src.as_bytes(),
            pos: 0,
        };
        p.skip_ws();
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(p.err("trailing input"));
        }
        Ok(Expr {
            root,
            source: src.to_string(),
        })
    }

    pub fn eval(&self, v: &Vars) -> f64 {
        eval_node(&self.root, v)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let src = String::deserialize(d)?;
        Expr::parse(&src).map_err(serde::de::Error::custom)
    }
}

fn eval_node(n: &Node, v: &Vars) -> f64 {
    match n {
        Node::Const(c) => *c,
        Node::Var(0) => v.t,
        Node::Var(i) if *i <= 2 => v.x[(*i - 1) as usize],
        Node::Var(i) => v.a[(*i - 3) as usize],
        Node::Neg(a) => -eval_node(a, v),
        Node::Add(a, b) => eval_node(a, v) + eval_node(b, v),
        Node::Sub(a, b) => eval_node(a, v) - eval_node(b, v),
        Node::Mul(a, b) => eval_node(a, v) * eval_node(b, v),
        Node::Div(a, b) => eval_node(a, v) / eval_node(b, v),
        Node::Pow(a, b) => eval_node(a, v).powf(eval_node(b, v)),
        Node::Sin(a) => eval_node(a, v).sin(),
        Node::Cos(a) => eval_node(a, v).cos(),
        Node::Exp(a) => eval_node(a, v).exp(),
        Node::Log(a) => eval_node(a, v).ln(),
        Node::Abs(a) => eval_node(a, v).abs(),
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Expr {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    // term := unary (('*' | '/') unary)*
    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    // power := atom ('^' unary)?   (right-assoc, so 2^3^2 = 2^9)
    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.eat(b'(');
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            _ => Err(self.err("expected a number, name, or '('")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E') && self.pos > start {
                // exponent part: e[+-]?digits
                let mut probe = self.pos + 1;
                if matches!(self.bytes.get(probe), Some(b'+') | Some(b'-')) {
                    probe += 1;
                }
                if matches!(self.bytes.get(probe), Some(d) if d.is_ascii_digit()) {
                    self.pos = probe;
                } else {
                    break;
                }
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let value: f64 = text
            .parse()
            .map_err(|_| Error::Expr {
                pos: start,
                msg: format!("bad number literal '{text}'"),
            })?;
        self.skip_ws();
        Ok(Node::Const(value))
    }

    fn ident(&mut self) -> Result<Node> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        self.skip_ws();
        match name {
            "t" => Ok(Node::Var(0)),
            "x1" => Ok(Node::Var(1)),
            "x2" => Ok(Node::Var(2)),
            "a1" => Ok(Node::Var(3)),
            "a2" => Ok(Node::Var(4)),
            "pi" => Ok(Node::Const(std::f64::consts::PI)),
            "e" => Ok(Node::Const(std::f64::consts::E)),
            "sin" | "cos" | "exp" | "log" | "abs" => {
                if !self.eat(b'(') {
                    return Err(self.err("expected '(' after function name"));
                }
                let arg = Box::new(self.expr()?);
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(match name {
                    "sin" => Node::Sin(arg),
                    "cos" => Node::Cos(arg),
                    "exp" => Node::Exp(arg),
                    "log" => Node::Log(arg),
                    _ => Node::Abs(arg),
                })
            }
            _ => Err(Error::Expr {
                pos: start,
                msg: format!("unknown name '{name}'"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(src: &str, t: f64, x1: f64, x2: f64) -> f64 {
        Expr::parse(src).unwrap().eval(&Vars::space_time(t, &[x1, x2]))
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(at("1+2*3", 0.0, 0.0, 0.0), 7.0);
        assert_eq!(at("(1+2)*3", 0.0, 0.0, 0.0), 9.0);
        assert_eq!(at("2^3^2", 0.0, 0.0, 0.0), 512.0);
        assert_eq!(at("-2^2", 0.0, 0.0, 0.0), -4.0);
        assert_eq!(at("6/3/2", 0.0, 0.0, 0.0), 1.0);
        assert_eq!(at("1e-3 + 2E2", 0.0, 0.0, 0.0), 200.001);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(at("2+sin(x1)", 0.0, 0.0, 0.0), 2.0);
        let v = at("exp(log(abs(-3)))", 0.0, 0.0, 0.0);
        assert!((v - 3.0).abs() < 1e-12);
        assert!((at("sin(pi/2) + cos(0) + t + x2", 1.0, 0.0, 2.0) - 5.0).abs() < 1e-12);
        assert!((at("x1^(2+x1)", 0.0, 2.0, 0.0) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn parse_errors_carry_position() {
        for bad in ["2+", "sin 3", "foo(1)", "(1+2", "1..2"] {
            match Expr::parse(bad) {
                Err(Error::Expr { .. }) => {}
                other => panic!("expected parse error for {bad:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn serde_round_trip() {
        let e: Expr = serde_json::from_str("\"2+sin(x1)*x2\"").unwrap();
        assert_eq!(e.eval(&Vars::space_time(0.0, &[0.0, 5.0])), 2.0);
        let back = serde_json::to_string(&e).unwrap();
        assert_eq!(back, "\"2+sin(x1)*x2\"");
    }

    #[test]
    fn potential_argument_variables() {
        let e = Expr::parse("(a1^2+a2^2)/2 + x1*abs(a1)").unwrap();
        let v = Vars::spatial(&[0.5, 0.0]).with_arg(&[2.0, -1.0]);
        assert!((e.eval(&v) - 3.5).abs() < 1e-15);
    }
}
