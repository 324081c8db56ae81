//! Parser and evaluator for scalar math expressions over named state and
//! input variables (`x1..xn`, `u1..um`).
//!
//! The grammar is deliberately small and total: literals, variables, the
//! binary operators `+ - * / ^`, unary minus, and the functions `sqrt`,
//! `sin`, `cos`, `exp`, `log` (natural), `min2`, `max2` and `angle`, where
//! `angle(p) = 1/(2*sqrt(1+p^2))`. `^` binds tighter than unary minus and is
//! right-associative. Evaluation is generic over the dual-number levels, so
//! parsed fields differentiate exactly like built-in ones.

use crate::error::{EvalError, ParseError};
use crate::scalar::{angle, Scalar};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Sin,
    Cos,
    Exp,
    Log,
    Angle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func2 {
    Min2,
    Max2,
}

#[derive(Clone, Debug)]
pub enum Node {
    Num(f64),
    /// 0-based state coordinate.
    StateVar(usize),
    /// 0-based input coordinate.
    InputVar(usize),
    Neg(Box<Spanned>),
    Bin(BinOp, Box<Spanned>, Box<Spanned>),
    Call(Func, Box<Spanned>),
    Call2(Func2, Box<Spanned>, Box<Spanned>),
}

/// AST node with its source span (byte offsets, for diagnostics only).
#[derive(Clone, Debug)]
pub struct Spanned {
    pub node: Node,
    pub span: (usize, usize),
}

/// Structural equality ignores spans.
impl PartialEq for Spanned {
    fn eq(&self, other: &Self) -> bool {
        match (&self.node, &other.node) {
            (Node::Num(a), Node::Num(b)) => a.to_bits() == b.to_bits(),
            (Node::StateVar(a), Node::StateVar(b)) => a == b,
            (Node::InputVar(a), Node::InputVar(b)) => a == b,
            (Node::Neg(a), Node::Neg(b)) => a == b,
            (Node::Bin(op, a1, a2), Node::Bin(oq, b1, b2)) => op == oq && a1 == b1 && a2 == b2,
            (Node::Call(f, a), Node::Call(g, b)) => f == g && a == b,
            (Node::Call2(f, a1, a2), Node::Call2(g, b1, b2)) => f == g && a1 == b1 && a2 == b2,
            _ => false,
        }
    }
}

/// A parsed, immutable expression over `state_dim` state and `input_dim`
/// input variables. Evaluation is re-entrant and safe to share across
/// threads.
#[derive(Clone, Debug, PartialEq)]
pub struct Expression {
    root: Spanned,
    state_dim: usize,
    input_dim: usize,
}

impl Expression {
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Evaluate at plain floating-point values.
    pub fn evaluate(&self, state: &[f64], input: &[f64]) -> Result<f64, EvalError> {
        self.evaluate_generic(state, input)
    }

    /// Evaluate at any scalar level (dual numbers for differentiation).
    /// The value part always equals [`Expression::evaluate`] on the value
    /// parts: both run the same arithmetic path.
    pub fn evaluate_generic<S: Scalar>(&self, state: &[S], input: &[S]) -> Result<S, EvalError> {
        if state.len() != self.state_dim {
            return Err(EvalError::DimMismatch {
                expected: self.state_dim,
                got: state.len(),
            });
        }
        if input.len() != self.input_dim {
            return Err(EvalError::DimMismatch {
                expected: self.input_dim,
                got: input.len(),
            });
        }
        eval_node(&self.root, state, input)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", print_node(&self.root, 0))
    }
}

fn eval_node<S: Scalar>(n: &Spanned, state: &[S], input: &[S]) -> Result<S, EvalError> {
    match &n.node {
        Node::Num(v) => Ok(S::from_f64(*v)),
        Node::StateVar(i) => Ok(state[*i].clone()),
        Node::InputVar(i) => Ok(input[*i].clone()),
        Node::Neg(a) => Ok(-eval_node(a, state, input)?),
        Node::Bin(op, a, b) => {
            let x = eval_node(a, state, input)?;
            let y = eval_node(b, state, input)?;
            match op {
                BinOp::Add => Ok(x + y),
                BinOp::Sub => Ok(x - y),
                BinOp::Mul => Ok(x * y),
                BinOp::Div => Ok(x / y),
                BinOp::Pow => {
                    // Variable-free integral exponents use the exact product
                    // rule and permit non-positive bases.
                    if let Some(e) = const_eval(b) {
                        if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
                            return Ok(x.powi(e as i32));
                        }
                    }
                    x.powf(&y).map_err(|e| e.with_context(print_node(n, 0)))
                }
            }
        }
        Node::Call(func, a) => {
            let x = eval_node(a, state, input)?;
            let ctx = || print_node(n, 0);
            match func {
                Func::Sqrt => x.sqrt().map_err(|e| e.with_context(ctx())),
                Func::Log => x.ln().map_err(|e| e.with_context(ctx())),
                Func::Sin => Ok(x.sin()),
                Func::Cos => Ok(x.cos()),
                Func::Exp => Ok(x.exp()),
                Func::Angle => Ok(angle(x)),
            }
        }
        Node::Call2(func, a, b) => {
            let x = eval_node(a, state, input)?;
            let y = eval_node(b, state, input)?;
            Ok(match func {
                Func2::Min2 => x.min2(y),
                Func2::Max2 => x.max2(y),
            })
        }
    }
}

/// Fold a variable-free subtree to a number; `None` if it mentions a
/// variable or leaves a function domain.
fn const_eval(n: &Spanned) -> Option<f64> {
    match &n.node {
        Node::Num(v) => Some(*v),
        Node::StateVar(_) | Node::InputVar(_) => None,
        Node::Neg(a) => const_eval(a).map(|v| -v),
        Node::Bin(op, a, b) => {
            let (x, y) = (const_eval(a)?, const_eval(b)?);
            Some(match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Pow => {
                    if y.fract() == 0.0 && y.abs() <= i32::MAX as f64 {
                        x.powi(y as i32)
                    } else {
                        x.powf(y)
                    }
                }
            })
        }
        Node::Call(f, a) => {
            let x = const_eval(a)?;
            let v = match f {
                Func::Sqrt => x.sqrt(),
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
                Func::Log => x.ln(),
                Func::Angle => 1.0 / (2.0 * (1.0 + x * x).sqrt()),
            };
            v.is_finite().then_some(v)
        }
        Node::Call2(f, a, b) => {
            let (x, y) = (const_eval(a)?, const_eval(b)?);
            Some(match f {
                Func2::Min2 => x.min(y),
                Func2::Max2 => x.max(y),
            })
        }
    }
}

// Precedence tiers for printing: 0 add, 1 mul, 2 unary, 3 pow, 4 atom.
fn print_node(n: &Spanned, parent: u8) -> String {
    let (s, prec) = match &n.node {
        Node::Num(v) => (format!("{v}"), 4),
        Node::StateVar(i) => (format!("x{}", i + 1), 4),
        Node::InputVar(i) => (format!("u{}", i + 1), 4),
        Node::Neg(a) => (format!("-{}", print_node(a, 2)), 2),
        Node::Bin(op, a, b) => match op {
            BinOp::Add => (format!("{} + {}", print_node(a, 0), print_node(b, 1)), 0),
            BinOp::Sub => (format!("{} - {}", print_node(a, 0), print_node(b, 1)), 0),
            BinOp::Mul => (format!("{} * {}", print_node(a, 1), print_node(b, 2)), 1),
            BinOp::Div => (format!("{} / {}", print_node(a, 1), print_node(b, 2)), 1),
            // Right-associative: parenthesize a left child of equal tier.
            BinOp::Pow => (format!("{}^{}", print_node(a, 4), print_node(b, 2)), 3),
        },
        Node::Call(f, a) => {
            let name = match f {
                Func::Sqrt => "sqrt",
                Func::Sin => "sin",
                Func::Cos => "cos",
                Func::Exp => "exp",
                Func::Log => "log",
                Func::Angle => "angle",
            };
            (format!("{name}({})", print_node(a, 0)), 4)
        }
        Node::Call2(f, a, b) => {
            let name = match f {
                Func2::Min2 => "min2",
                Func2::Max2 => "max2",
            };
            (
                format!("{name}({}, {})", print_node(a, 0), print_node(b, 0)),
                4,
            )
        }
    };
    if prec < parent {
        format!("({s})")
    } else {
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
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
    Comma,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer {
            src: src.as_bytes(),
            pos: 0,
        };
        let mut out = Vec::new();
        loop {
            lx.skip_ws();
            if lx.pos >= lx.src.len() {
                return Ok(out);
            }
            let start = lx.pos;
            let c = lx.src[lx.pos];
            let tok = match c {
                b'+' => {
                    lx.pos += 1;
                    Tok::Plus
                }
                b'-' => {
                    lx.pos += 1;
                    Tok::Minus
                }
                b'*' => {
                    lx.pos += 1;
                    Tok::Star
                }
                b'/' => {
                    lx.pos += 1;
                    Tok::Slash
                }
                b'^' => {
                    lx.pos += 1;
                    Tok::Caret
                }
                b'(' => {
                    lx.pos += 1;
                    Tok::LParen
                }
                b')' => {
                    lx.pos += 1;
                    Tok::RParen
                }
                b',' => {
                    lx.pos += 1;
                    Tok::Comma
                }
                b'0'..=b'9' | b'.' => lx.number(start)?,
                c if c.is_ascii_alphabetic() || c == b'_' => lx.ident(),
                other => {
                    return Err(ParseError::new(
                        format!("unexpected character `{}`", other as char),
                        start + 1,
                    ))
                }
            };
            out.push((tok, start));
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn number(&mut self, start: usize) -> Result<Tok, ParseError> {
        let mut end = self.pos;
        while end < self.src.len() && (self.src[end].is_ascii_digit() || self.src[end] == b'.') {
            end += 1;
        }
        // Exponent part: e / E with optional sign.
        if end < self.src.len() && (self.src[end] == b'e' || self.src[end] == b'E') {
            let mut cursor = end + 1;
            if cursor < self.src.len() && (self.src[cursor] == b'+' || self.src[cursor] == b'-') {
                cursor += 1;
            }
            if cursor < self.src.len() && self.src[cursor].is_ascii_digit() {
                while cursor < self.src.len() && self.src[cursor].is_ascii_digit() {
                    cursor += 1;
                }
                end = cursor;
            }
        }
        let text = std::str::from_utf8(&self.src[start..end]).expect("ascii slice");
        let value: f64 = text
            .parse()
            .map_err(|_| ParseError::new(format!("malformed number `{text}`"), start + 1))?;
        self.pos = end;
        Ok(Tok::Num(value))
    }

    fn ident(&mut self) -> Tok {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        Tok::Ident(
            std::str::from_utf8(&self.src[start..self.pos])
                .expect("ascii slice")
                .to_owned(),
        )
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    end: usize,
    state_dim: usize,
    input_dim: usize,
}

/// Parse `source` into an [`Expression`] over `state_dim` state and
/// `input_dim` input variables. Errors carry a 1-based character position.
pub fn parse(source: &str, state_dim: usize, input_dim: usize) -> Result<Expression, ParseError> {
    if source.trim().is_empty() {
        return Err(ParseError::new("empty expression", 1));
    }
    let toks = Lexer::tokens(source)?;
    let mut p = Parser {
        toks,
        idx: 0,
        end: source.len(),
        state_dim,
        input_dim,
    };
    let root = p.expr()?;
    if let Some((_, pos)) = p.peek() {
        return Err(ParseError::new("unexpected trailing input", pos + 1));
    }
    Ok(Expression {
        root,
        state_dim,
        input_dim,
    })
}

impl Parser {
    fn peek(&self) -> Option<(&Tok, usize)> {
        self.toks.get(self.idx).map(|(t, p)| (t, *p))
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.idx).cloned();
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.peek().map(|(_, p)| p).unwrap_or(self.end)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<usize, ParseError> {
        let pos = self.here();
        match self.bump() {
            Some((t, p)) if t == tok => Ok(p),
            _ => Err(ParseError::new(format!("expected {what}"), pos + 1)),
        }
    }

    fn expr(&mut self) -> Result<Spanned, ParseError> {
        let mut lhs = self.term()?;
        while let Some((tok, _)) = self.peek() {
            let op = match tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            let span = (lhs.span.0, rhs.span.1);
            lhs = Spanned {
                node: Node::Bin(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Spanned, ParseError> {
        let mut lhs = self.unary()?;
        while let Some((tok, _)) = self.peek() {
            let op = match tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            let span = (lhs.span.0, rhs.span.1);
            lhs = Spanned {
                node: Node::Bin(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Spanned, ParseError> {
        if let Some((Tok::Minus, pos)) = self.peek() {
            self.bump();
            let inner = self.unary()?;
            let span = (pos, inner.span.1);
            return Ok(Spanned {
                node: Node::Neg(Box::new(inner)),
                span,
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Spanned, ParseError> {
        let base = self.atom()?;
        if let Some((Tok::Caret, _)) = self.peek() {
            self.bump();
            // Exponent re-enters at the unary tier: right-associative, and
            // `2^-3` parses.
            let exp = self.unary()?;
            let span = (base.span.0, exp.span.1);
            return Ok(Spanned {
                node: Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)),
                span,
            });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Spanned, ParseError> {
        let pos = self.here();
        match self.bump() {
            Some((Tok::Num(v), p)) => Ok(Spanned {
                node: Node::Num(v),
                span: (p, p + 1),
            }),
            Some((Tok::LParen, p)) => {
                let inner = self.expr()?;
                let close = self.expect(Tok::RParen, "closing `)`")?;
                Ok(Spanned {
                    node: inner.node,
                    span: (p, close + 1),
                })
            }
            Some((Tok::Ident(name), p)) => self.ident_atom(name, p),
            _ => Err(ParseError::new("expected an operand", pos + 1)),
        }
    }

    fn ident_atom(&mut self, name: String, p: usize) -> Result<Spanned, ParseError> {
        if matches!(self.peek(), Some((Tok::LParen, _))) {
            self.bump();
            let func1 = match name.as_str() {
                "sqrt" => Some(Func::Sqrt),
                "sin" => Some(Func::Sin),
                "cos" => Some(Func::Cos),
                "exp" => Some(Func::Exp),
                "log" => Some(Func::Log),
                "angle" => Some(Func::Angle),
                _ => None,
            };
            if let Some(f) = func1 {
                let arg = self.expr()?;
                let close = self.expect(Tok::RParen, "closing `)`")?;
                return Ok(Spanned {
                    node: Node::Call(f, Box::new(arg)),
                    span: (p, close + 1),
                });
            }
            let func2 = match name.as_str() {
                "min2" => Some(Func2::Min2),
                "max2" => Some(Func2::Max2),
                _ => None,
            };
            if let Some(f) = func2 {
                let a = self.expr()?;
                self.expect(Tok::Comma, "`,` between arguments")?;
                let b = self.expr()?;
                let close = self.expect(Tok::RParen, "closing `)`")?;
                return Ok(Spanned {
                    node: Node::Call2(f, Box::new(a), Box::new(b)),
                    span: (p, close + 1),
                });
            }
            return Err(ParseError::new(format!("unknown function `{name}`"), p + 1));
        }

        let make_var = |prefix: char,
                        dim: usize,
                        kind: fn(usize) -> Node|
         -> Result<Node, ParseError> {
            let idx: usize = name[1..]
                .parse()
                .map_err(|_| ParseError::new(format!("unknown identifier `{name}`"), p + 1))?;
            if idx == 0 || idx > dim {
                return Err(ParseError::new(
                    format!("variable `{name}` out of range (declared {prefix}1..{prefix}{dim})"),
                    p + 1,
                ));
            }
            Ok(kind(idx - 1))
        };
        let node = match name.as_bytes().first() {
            Some(b'x') if name.len() > 1 && name[1..].bytes().all(|c| c.is_ascii_digit()) => {
                make_var('x', self.state_dim, Node::StateVar)?
            }
            Some(b'u') if name.len() > 1 && name[1..].bytes().all(|c| c.is_ascii_digit()) => {
                make_var('u', self.input_dim, Node::InputVar)?
            }
            _ => {
                return Err(ParseError::new(
                    format!("unknown identifier `{name}`"),
                    p + 1,
                ))
            }
        };
        Ok(Spanned {
            node,
            span: (p, p + name.len()),
        })
    }
}
