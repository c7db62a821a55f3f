//! Scalar expression language used for warping functions, Clairaut
//! functions, factor maps and inline metrics.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and binds tighter than a leading minus, so
//! `-x1^2` is `-(x1^2)` and `2^-1` is `0.5`. There is no implicit
//! multiplication. Identifiers are the declared coordinates `x1..xn`, the
//! constant `pi`, and the functions `exp ln sin cos tan sqrt` (one argument)
//! and `pow` (two arguments).

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// Relative step for central differences of expressions.
pub const DERIV_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExprError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unknown symbol `{name}` at byte {offset}")]
    UnknownSymbol { offset: usize, name: String },

    #[error("`{name}` at byte {offset} expects {expected} argument(s), got {got}")]
    Arity {
        offset: usize,
        name: String,
        expected: usize,
        got: usize,
    },

    #[error("expression expects {expected} coordinates, got {got}")]
    PointArity { expected: usize, got: usize },

    #[error("domain error in `{subexpr}`: {message}")]
    Domain { subexpr: String, message: String },
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
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Tan,
    Sqrt,
    Pow,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sqrt" => Func::Sqrt,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Sqrt => "sqrt",
            Func::Pow => "pow",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Pow => 2,
            _ => 1,
        }
    }
}

/// Syntax tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    /// Zero-based coordinate index (`x1` is 0).
    Coord(usize),
    Pi,
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression over a fixed number of coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    arity: usize,
}

impl Expr {
    pub fn parse(src: &str, arity: usize) -> Result<Expr, ExprError> {
        if src.trim().is_empty() {
            return Err(ExprError::Parse {
                offset: 0,
                message: "empty expression".into(),
            });
        }
        let tokens = lex(src)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            arity,
            end: src.len(),
        };
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ExprError::Parse {
                offset: tok.offset,
                message: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(Expr { root, arity })
    }

    pub fn from_node(root: Node, arity: usize) -> Expr {
        Expr { root, arity }
    }

    pub fn constant(value: f64, arity: usize) -> Expr {
        Expr {
            root: Node::Num(value),
            arity,
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Same tree, declared over a different coordinate count. Fails if the
    /// tree references a coordinate beyond the new arity.
    pub fn with_arity(&self, arity: usize) -> Result<Expr, ExprError> {
        if let Some(&max) = self.variables().iter().next_back() {
            if max >= arity {
                return Err(ExprError::UnknownSymbol {
                    offset: 0,
                    name: format!("x{}", max + 1),
                });
            }
        }
        Ok(Expr {
            root: self.root.clone(),
            arity,
        })
    }

    /// Zero-based indices of the coordinates the expression reads.
    pub fn variables(&self) -> BTreeSet<usize> {
        fn walk(node: &Node, out: &mut BTreeSet<usize>) {
            match node {
                Node::Coord(i) => {
                    out.insert(*i);
                }
                Node::Neg(a) => walk(a, out),
                Node::Binary(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Node::Call(_, args) => args.iter().for_each(|a| walk(a, out)),
                Node::Num(_) | Node::Pi => {}
            }
        }
        let mut out = BTreeSet::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn eval(&self, p: &[f64]) -> Result<f64, ExprError> {
        if p.len() != self.arity {
            return Err(ExprError::PointArity {
                expected: self.arity,
                got: p.len(),
            });
        }
        eval_node(&self.root, p)
    }

    /// Partial derivative with respect to coordinate `index` (zero-based) by
    /// central differences with step `DERIV_STEP * max(1, |p[index]|)`.
    pub fn deriv(&self, index: usize, p: &[f64]) -> Result<f64, ExprError> {
        if index >= self.arity {
            return Err(ExprError::PointArity {
                expected: self.arity,
                got: index + 1,
            });
        }
        let h = DERIV_STEP * p[index].abs().max(1.0);
        let mut q = p.to_vec();
        q[index] = p[index] + h;
        let fp = self.eval(&q)?;
        q[index] = p[index] - h;
        let fm = self.eval(&q)?;
        Ok((fp - fm) / (2.0 * h))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

/// Fully parenthesized rendering; reparses to the same tree.
impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) => write!(f, "{v:?}"),
            Node::Coord(i) => write!(f, "x{}", i + 1),
            Node::Pi => write!(f, "pi"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

fn domain(node: &Node, message: &str) -> ExprError {
    ExprError::Domain {
        subexpr: node.to_string(),
        message: message.to_string(),
    }
}

fn eval_node(node: &Node, p: &[f64]) -> Result<f64, ExprError> {
    let value = match node {
        Node::Num(v) => *v,
        Node::Coord(i) => p[*i],
        Node::Pi => std::f64::consts::PI,
        Node::Neg(a) => -eval_node(a, p)?,
        Node::Binary(op, a, b) => {
            let x = eval_node(a, p)?;
            let y = eval_node(b, p)?;
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => {
                    if y == 0.0 {
                        return Err(domain(node, "division by zero"));
                    }
                    x / y
                }
                BinOp::Pow => x.powf(y),
            }
        }
        Node::Call(func, args) => {
            let x = eval_node(&args[0], p)?;
            match func {
                Func::Exp => x.exp(),
                Func::Ln => {
                    if x <= 0.0 {
                        return Err(domain(node, "logarithm of a non-positive value"));
                    }
                    x.ln()
                }
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Sqrt => {
                    if x < 0.0 {
                        return Err(domain(node, "square root of a negative value"));
                    }
                    x.sqrt()
                }
                Func::Pow => x.powf(eval_node(&args[1], p)?),
            }
        }
    };
    if value.is_nan() {
        return Err(domain(node, "result is not a number"));
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
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

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Num(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Plus => "`+`".into(),
            TokenKind::Minus => "`-`".into(),
            TokenKind::Star => "`*`".into(),
            TokenKind::Slash => "`/`".into(),
            TokenKind::Caret => "`^`".into(),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
            TokenKind::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let single = match c {
            b'+' => Some(TokenKind::Plus),
            b'-' => Some(TokenKind::Minus),
            b'*' => Some(TokenKind::Star),
            b'/' => Some(TokenKind::Slash),
            b'^' => Some(TokenKind::Caret),
            b'(' => Some(TokenKind::LParen),
            b')' => Some(TokenKind::RParen),
            b',' => Some(TokenKind::Comma),
            _ => None,
        };
        if let Some(kind) = single {
            tokens.push(Token {
                kind,
                offset: start,
            });
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ExprError::Parse {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            tokens.push(Token {
                kind: TokenKind::Num(value),
                offset: start,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Ident(src[start..i].to_string()),
                offset: start,
            });
            continue;
        }
        let ch = src[start..].chars().next().unwrap_or('?');
        return Err(ExprError::Parse {
            offset: start,
            message: format!("unexpected character `{ch}`"),
        });
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    arity: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_kind(&self) -> Option<&TokenKind> {
        self.peek().map(|t| &t.kind)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn bump(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        tok
    }

    fn expect(&mut self, kind: TokenKind) -> Result<(), ExprError> {
        match self.peek_kind() {
            Some(k) if *k == kind => {
                self.pos += 1;
                Ok(())
            }
            Some(k) => Err(ExprError::Parse {
                offset: self.offset(),
                message: format!("expected {}, found {}", kind.describe(), k.describe()),
            }),
            None => Err(ExprError::Parse {
                offset: self.end,
                message: format!("expected {}, found end of input", kind.describe()),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek_kind() {
                Some(TokenKind::Plus) => BinOp::Add,
                Some(TokenKind::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek_kind() {
                Some(TokenKind::Star) => BinOp::Mul,
                Some(TokenKind::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if let Some(TokenKind::Minus) = self.peek_kind() {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if let Some(TokenKind::Caret) = self.peek_kind() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let offset = self.offset();
        let Some(tok) = self.bump() else {
            return Err(ExprError::Parse {
                offset,
                message: "unexpected end of input".into(),
            });
        };
        match tok.kind {
            TokenKind::Num(v) => Ok(Node::Num(v)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                let called = matches!(self.peek_kind(), Some(TokenKind::LParen));
                let args = if called {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while let Some(TokenKind::Comma) = self.peek_kind() {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(TokenKind::RParen)?;
                    Some(args)
                } else {
                    None
                };
                self.resolve(name, offset, args)
            }
            other => Err(ExprError::Parse {
                offset,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }

    fn resolve(
        &self,
        name: String,
        offset: usize,
        args: Option<Vec<Node>>,
    ) -> Result<Node, ExprError> {
        if let Some(func) = Func::lookup(&name) {
            let args = args.unwrap_or_default();
            if args.len() != func.arity() {
                return Err(ExprError::Arity {
                    offset,
                    name,
                    expected: func.arity(),
                    got: args.len(),
                });
            }
            return Ok(Node::Call(func, args));
        }
        let leaf = if name == "pi" {
            Some(Node::Pi)
        } else {
            coordinate_index(&name)
                .filter(|&k| k < self.arity)
                .map(Node::Coord)
        };
        match (leaf, args) {
            (Some(leaf), None) => Ok(leaf),
            (Some(_), Some(args)) => Err(ExprError::Arity {
                offset,
                name,
                expected: 0,
                got: args.len(),
            }),
            (None, _) => Err(ExprError::UnknownSymbol { offset, name }),
        }
    }
}

fn coordinate_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0')
    {
        return None;
    }
    digits.parse::<usize>().ok().map(|k| k - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn eval(src: &str, p: &[f64]) -> f64 {
        Expr::parse(src, p.len()).unwrap().eval(p).unwrap()
    }

    #[test]
    fn parses_function_application() {
        let e = Expr::parse("exp(x1)", 1).unwrap();
        assert_eq!(
            e.root(),
            &Node::Call(Func::Exp, vec![Node::Coord(0)])
        );
    }

    #[test]
    fn sin_squared_plus_one() {
        assert!((eval("sin(x1)^2 + 1", &[PI / 6.0]) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn unknown_function_is_rejected() {
        let err = Expr::parse("foo(x1)", 1).unwrap_err();
        assert!(matches!(err, ExprError::UnknownSymbol { offset: 0, ref name } if name == "foo"));
    }

    #[test]
    fn undeclared_coordinate_is_rejected() {
        assert!(matches!(
            Expr::parse("x1 + x3", 2),
            Err(ExprError::UnknownSymbol { offset: 5, .. })
        ));
        assert!(matches!(
            Expr::parse("x0", 2),
            Err(ExprError::UnknownSymbol { .. })
        ));
    }

    #[test]
    fn arity_is_checked_at_parse_time() {
        assert!(matches!(
            Expr::parse("sin(x1, x2)", 2),
            Err(ExprError::Arity { expected: 1, got: 2, .. })
        ));
        assert!(matches!(
            Expr::parse("pow(x1)", 1),
            Err(ExprError::Arity { expected: 2, got: 1, .. })
        ));
        assert!(matches!(
            Expr::parse("x1(2)", 1),
            Err(ExprError::Arity { expected: 0, .. })
        ));
    }

    #[test]
    fn product_of_coordinates() {
        assert_eq!(eval("x1*x2", &[3.0, 4.0]), 12.0);
    }

    #[test]
    fn derivative_of_exp_at_zero() {
        let e = Expr::parse("exp(x1)", 1).unwrap();
        assert!((e.deriv(0, &[0.0]).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn log_of_zero_is_a_domain_error() {
        let e = Expr::parse("ln(x1)", 1).unwrap();
        match e.eval(&[0.0]) {
            Err(ExprError::Domain { subexpr, .. }) => assert_eq!(subexpr, "ln(x1)"),
            other => panic!("expected domain error, got {other:?}"),
        }
        let d = Expr::parse("1/(x1 - 1)", 1).unwrap();
        assert!(matches!(d.eval(&[1.0]), Err(ExprError::Domain { .. })));
    }

    #[test]
    fn power_is_right_associative_and_tighter_than_negation() {
        assert_eq!(eval("2^3^2", &[]), 512.0);
        assert_eq!(eval("-2^2", &[]), -4.0);
        assert_eq!(eval("2^-1", &[]), 0.5);
        assert_eq!(eval("(-2)^2", &[]), 4.0);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval("1 - 2 - 3", &[]), -4.0);
        assert_eq!(eval("8 / 4 / 2", &[]), 1.0);
        assert_eq!(eval("1 + 2 * 3", &[]), 7.0);
        assert_eq!(eval("2 * -3", &[]), -6.0);
        assert!((eval("pi", &[]) - PI).abs() < 1e-15);
        assert_eq!(eval("1.5e2 + .5", &[]), 150.5);
    }

    #[test]
    fn implicit_multiplication_is_an_error() {
        match Expr::parse("2x1", 1) {
            Err(ExprError::Parse { offset, .. }) => assert_eq!(offset, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_report_offsets() {
        assert!(matches!(
            Expr::parse("(x1 + 1", 1),
            Err(ExprError::Parse { offset: 7, .. })
        ));
        assert!(matches!(
            Expr::parse("x1 $ 2", 1),
            Err(ExprError::Parse { offset: 3, .. })
        ));
        assert!(matches!(Expr::parse("   ", 1), Err(ExprError::Parse { .. })));
    }

    #[test]
    fn point_arity_is_enforced() {
        let e = Expr::parse("x1", 2).unwrap();
        assert!(matches!(
            e.eval(&[1.0]),
            Err(ExprError::PointArity { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn variables_are_collected() {
        let e = Expr::parse("sin(x1) * x3 + x1", 3).unwrap();
        assert_eq!(e.variables().into_iter().collect::<Vec<_>>(), vec![0, 2]);
    }
}
