//! Exact rational arithmetic over small infix expressions.
//!
//! Shared by the rule-based step checker and the Game-of-24 harness. Nothing
//! in here touches floating point.

use std::fmt;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub, Zero};

pub type Rational = Ratio<i128>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

impl Op {
    pub const ALL: [Op; 4] = [Op::Add, Op::Sub, Op::Mul, Op::Div];

    pub fn from_char(c: char) -> Option<Op> {
        match c {
            '+' => Some(Op::Add),
            '-' | '−' | '–' => Some(Op::Sub),
            '*' | '×' | '·' | '⋅' => Some(Op::Mul),
            '/' | '÷' => Some(Op::Div),
            _ => None,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Op::Add => '+',
            Op::Sub => '-',
            Op::Mul => '*',
            Op::Div => '/',
        }
    }

    /// `None` on division by zero or overflow.
    pub fn apply(self, a: Rational, b: Rational) -> Option<Rational> {
        match self {
            Op::Add => a.checked_add(&b),
            Op::Sub => a.checked_sub(&b),
            Op::Mul => a.checked_mul(&b),
            Op::Div => {
                if b.is_zero() {
                    None
                } else {
                    a.checked_div(&b)
                }
            }
        }
    }

    fn precedence(self) -> u8 {
        match self {
            Op::Add | Op::Sub => 1,
            Op::Mul | Op::Div => 2,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Num(Rational),
    Neg(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    DivisionByZero,
    Overflow,
}

impl Expr {
    pub fn bin(op: Op, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn eval(&self) -> Result<Rational, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Neg(e) => {
                let v = e.eval()?;
                Rational::zero().checked_sub(&v).ok_or(EvalError::Overflow)
            }
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval()?, b.eval()?);
                if *op == Op::Div && b.is_zero() {
                    return Err(EvalError::DivisionByZero);
                }
                op.apply(a, b).ok_or(EvalError::Overflow)
            }
        }
    }

    /// Numeric literals in left-to-right order.
    pub fn literals(&self) -> Vec<Rational> {
        let mut out = Vec::new();
        self.collect_literals(&mut out);
        out
    }

    fn collect_literals(&self, out: &mut Vec<Rational>) {
        match self {
            Expr::Num(v) => out.push(*v),
            Expr::Neg(e) => e.collect_literals(out),
            Expr::Bin(_, a, b) => {
                a.collect_literals(out);
                b.collect_literals(out);
            }
        }
    }

    pub fn op_count(&self) -> usize {
        match self {
            Expr::Num(_) => 0,
            Expr::Neg(e) => e.op_count(),
            Expr::Bin(_, a, b) => 1 + a.op_count() + b.op_count(),
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8, right_of_noncommutative: bool) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{}", format_rational(v)),
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.fmt_prec(f, 3, false)
            }
            Expr::Bin(op, a, b) => {
                let prec = op.precedence();
                let paren = prec < parent || (prec == parent && right_of_noncommutative);
                if paren {
                    write!(f, "(")?;
                }
                a.fmt_prec(f, prec, false)?;
                write!(f, "{}", op.symbol())?;
                b.fmt_prec(f, prec, matches!(op, Op::Sub | Op::Div))?;
                if paren {
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Expr {
    /// Minimal parentheses, ASCII operators, no spaces.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0, false)
    }
}

/// `7`, `-3`, `8/3`.
pub fn format_rational(v: &Rational) -> String {
    if v.is_integer() {
        v.numer().to_string()
    } else {
        format!("{}/{}", v.numer(), v.denom())
    }
}

/// Parse an unsigned decimal literal (`12`, `0.75`) into an exact rational.
pub fn parse_decimal(s: &str) -> Option<Rational> {
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    if frac_part.len() > 30 || int_part.len() > 30 {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: i128 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
    let denom = 10i128.checked_pow(frac_part.len() as u32)?;
    Some(Rational::new(numer, denom))
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Num(Rational),
    Op(Op),
    LParen,
    RParen,
    Junk,
}

/// Tokens with their byte spans in the source.
pub(crate) fn tokenize(src: &str) -> Vec<(Token, usize, usize)> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|(_, d)| d.is_ascii_digit())) {
            let start = pos;
            let mut j = i;
            let mut seen_dot = false;
            while j < chars.len() {
                let ch = chars[j].1;
                if ch.is_ascii_digit() {
                    j += 1;
                } else if ch == '.' && !seen_dot && chars.get(j + 1).is_some_and(|(_, d)| d.is_ascii_digit()) {
                    seen_dot = true;
                    j += 1;
                } else {
                    break;
                }
            }
            let end = chars.get(j).map_or(src.len(), |(p, _)| *p);
            match parse_decimal(&src[start..end]) {
                Some(v) => out.push((Token::Num(v), start, end)),
                None => out.push((Token::Junk, start, end)),
            }
            i = j;
            continue;
        }
        let end = chars.get(i + 1).map_or(src.len(), |(p, _)| *p);
        let tok = match c {
            '(' | '[' => Token::LParen,
            ')' | ']' => Token::RParen,
            _ => match Op::from_char(c) {
                Some(op) => Token::Op(op),
                None => Token::Junk,
            },
        };
        out.push((tok, pos, end));
        i += 1;
    }
    out
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn expr(&mut self) -> Option<Expr> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(op @ (Op::Add | Op::Sub))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Some(lhs)
    }

    fn term(&mut self) -> Option<Expr> {
        let mut lhs = self.factor()?;
        while let Some(Token::Op(op @ (Op::Mul | Op::Div))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Some(lhs)
    }

    fn factor(&mut self) -> Option<Expr> {
        match self.peek()?.clone() {
            Token::Num(v) => {
                self.pos += 1;
                Some(Expr::Num(v))
            }
            Token::Op(Op::Sub) => {
                self.pos += 1;
                Some(Expr::Neg(Box::new(self.factor()?)))
            }
            Token::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(Token::RParen) => {
                        self.pos += 1;
                        Some(inner)
                    }
                    _ => None,
                }
            }
            _ => None,
        }
    }
}

pub(crate) fn parse_tokens(tokens: &[Token]) -> Option<Expr> {
    let mut parser = Parser { tokens, pos: 0 };
    let expr = parser.expr()?;
    (parser.pos == tokens.len()).then_some(expr)
}

/// Parse a complete infix expression such as `8/(3-8/3)`.
pub fn parse_expression(src: &str) -> Option<Expr> {
    let tokens: Vec<Token> = tokenize(src).into_iter().map(|(t, _, _)| t).collect();
    parse_tokens(&tokens)
}
