//! Arithmetic expressions over `(t, x, v)` used to define coefficients.
//!
//! Grammar (whitespace is insignificant):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-'? power
//! power  := atom ('^' factor)?
//! atom   := number | ident | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ident  := t | x1..xn | v1..vm            (y1..yk where a scope allows it)
//! func   := min | max | abs | exp | log | sqrt | sin | cos | tanh | pos | neg
//! ```
//!
//! `pos(a) = max(a, 0)` and `neg(a) = max(−a, 0)`. `^` is right associative and
//! binds tighter than unary minus, so `-2^2 = -4`. The Unicode minus sign
//! (U+2212) is accepted as an alias for `-`.

use std::fmt;

use crate::error::ExprError;

/// The identifiers an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Scope {
    pub n: usize,
    pub m: usize,
    pub y: usize,
}

impl Scope {
    pub fn new(n: usize, m: usize) -> Self {
        Self { n, m, y: 0 }
    }

    /// Scope for functions of increments `y1..yk` only.
    pub fn increments(k: usize) -> Self {
        Self { n: 0, m: 0, y: k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    /// Zero-based state component.
    X(usize),
    /// Zero-based control component.
    V(usize),
    /// Zero-based increment component.
    Y(usize),
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
    Min,
    Max,
    Abs,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tanh,
    Pos,
    Neg,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "min" => Func::Min,
            "max" => Func::Max,
            "abs" => Func::Abs,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "pos" => Func::Pos,
            "neg" => Func::Neg,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Abs => "abs",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Pos => "pos",
            Func::Neg => "neg",
        }
    }

    fn is_variadic(self) -> bool {
        matches!(self, Func::Min | Func::Max)
    }
}

/// Expression tree node. `offset` is the byte position of the node's
/// leading token in the source text.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var {
        var: Var,
        offset: usize,
    },
    Neg {
        arg: Box<Node>,
        offset: usize,
    },
    Binary {
        op: BinOp,
        lhs: Box<Node>,
        rhs: Box<Node>,
        offset: usize,
    },
    Call {
        func: Func,
        args: Vec<Node>,
        offset: usize,
    },
}

/// A parsed expression together with its source text.
#[derive(Debug, Clone)]
pub struct Expr {
    root: Node,
    source: String,
    scope: Scope,
}

impl PartialEq for Expr {
    /// Structural equality of the trees; the source text is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.root.structurally_eq(&other.root)
    }
}

/// Variable bindings for evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Vars<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub v: &'a [f64],
    pub y: &'a [f64],
}

/// Parses `source` with identifiers `t`, `x1..xn`, `v1..vm`.
pub fn parse_expr(source: &str, n: usize, m: usize) -> Result<Expr, ExprError> {
    Expr::parse(source, Scope::new(n, m))
}

/// Evaluates `ast` at `(t, x, v)`.
pub fn eval_expr(ast: &Expr, t: f64, x: &[f64], v: &[f64]) -> Result<f64, ExprError> {
    ast.eval(t, x, v)
}

impl Expr {
    pub fn parse(source: &str, scope: Scope) -> Result<Self, ExprError> {
        let tokens = lex(source)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            scope,
            len: source.len(),
        };
        if p.tokens.is_empty() {
            return Err(ExprError::Syntax {
                offset: 0,
                message: "empty expression".into(),
            });
        }
        let root = p.expr()?;
        if let Some(tok) = p.peek() {
            return Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(Self {
            root,
            source: source.to_string(),
            scope,
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            root: Node::Const(value),
            source: format!("{value:?}"),
            scope: Scope::default(),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn eval(&self, t: f64, x: &[f64], v: &[f64]) -> Result<f64, ExprError> {
        self.eval_vars(&Vars { t, x, v, y: &[] })
    }

    pub fn eval_vars(&self, vars: &Vars<'_>) -> Result<f64, ExprError> {
        self.root.eval(vars)
    }

    /// True if the value can depend on `t`.
    pub fn depends_on_time(&self) -> bool {
        self.root.any_var(&|v| v == Var::T)
    }

    /// True if the value can depend on any control component.
    pub fn depends_on_control(&self) -> bool {
        self.root.any_var(&|v| matches!(v, Var::V(_)))
    }

    /// `Some(c)` when the tree is a bare constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized rendering that re-parses to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) => write!(f, "{c:?}"),
            Node::Var { var, .. } => match var {
                Var::T => write!(f, "t"),
                Var::X(i) => write!(f, "x{}", i + 1),
                Var::V(i) => write!(f, "v{}", i + 1),
                Var::Y(i) => write!(f, "y{}", i + 1),
            },
            Node::Neg { arg, .. } => write!(f, "(-{arg})"),
            Node::Binary { op, lhs, rhs, .. } => {
                let sym = match op {
                    BinOp::Add => '+',
                    BinOp::Sub => '-',
                    BinOp::Mul => '*',
                    BinOp::Div => '/',
                    BinOp::Pow => '^',
                };
                write!(f, "({lhs}{sym}{rhs})")
            }
            Node::Call { func, args, .. } => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl Node {
    pub fn offset(&self) -> usize {
        match self {
            Node::Const(_) => 0,
            Node::Var { offset, .. }
            | Node::Neg { offset, .. }
            | Node::Binary { offset, .. }
            | Node::Call { offset, .. } => *offset,
        }
    }

    /// Equality ignoring source offsets.
    pub fn structurally_eq(&self, other: &Node) -> bool {
        match (self, other) {
            (Node::Const(a), Node::Const(b)) => a.to_bits() == b.to_bits(),
            (Node::Var { var: a, .. }, Node::Var { var: b, .. }) => a == b,
            (Node::Neg { arg: a, .. }, Node::Neg { arg: b, .. }) => a.structurally_eq(b),
            (
                Node::Binary {
                    op: o1,
                    lhs: l1,
                    rhs: r1,
                    ..
                },
                Node::Binary {
                    op: o2,
                    lhs: l2,
                    rhs: r2,
                    ..
                },
            ) => o1 == o2 && l1.structurally_eq(l2) && r1.structurally_eq(r2),
            (
                Node::Call {
                    func: f1, args: a1, ..
                },
                Node::Call {
                    func: f2, args: a2, ..
                },
            ) => {
                f1 == f2
                    && a1.len() == a2.len()
                    && a1.iter().zip(a2).all(|(a, b)| a.structurally_eq(b))
            }
            _ => false,
        }
    }

    fn any_var(&self, pred: &dyn Fn(Var) -> bool) -> bool {
        match self {
            Node::Const(_) => false,
            Node::Var { var, .. } => pred(*var),
            Node::Neg { arg, .. } => arg.any_var(pred),
            Node::Binary { lhs, rhs, .. } => lhs.any_var(pred) || rhs.any_var(pred),
            Node::Call { args, .. } => args.iter().any(|a| a.any_var(pred)),
        }
    }

    fn eval(&self, vars: &Vars<'_>) -> Result<f64, ExprError> {
        let domain = |offset: usize, message: String| ExprError::Domain { offset, message };
        let value = match self {
            Node::Const(c) => return Ok(*c),
            Node::Var { var, offset } => {
                let (slot, i, name) = match *var {
                    Var::T => return Ok(vars.t),
                    Var::X(i) => (vars.x, i, 'x'),
                    Var::V(i) => (vars.v, i, 'v'),
                    Var::Y(i) => (vars.y, i, 'y'),
                };
                return slot
                    .get(i)
                    .copied()
                    .ok_or_else(|| domain(*offset, format!("no value bound for {name}{}", i + 1)));
            }
            Node::Neg { arg, .. } => -arg.eval(vars)?,
            Node::Binary {
                op,
                lhs,
                rhs,
                offset,
            } => {
                let a = lhs.eval(vars)?;
                let b = rhs.eval(vars)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(domain(*offset, "division by zero".into()));
                        }
                        a / b
                    }
                    BinOp::Pow => pow(a, b),
                }
            }
            Node::Call { func, args, offset } => {
                let a = args[0].eval(vars)?;
                match func {
                    Func::Min | Func::Max => {
                        let mut acc = a;
                        for arg in &args[1..] {
                            let b = arg.eval(vars)?;
                            acc = if *func == Func::Min { acc.min(b) } else { acc.max(b) };
                        }
                        acc
                    }
                    Func::Abs => a.abs(),
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if !(a > 0.0) {
                            return Err(domain(*offset, format!("log of nonpositive value {a}")));
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(domain(*offset, format!("sqrt of negative value {a}")));
                        }
                        a.sqrt()
                    }
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tanh => a.tanh(),
                    Func::Pos => a.max(0.0),
                    Func::Neg => (-a).max(0.0),
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(domain(self.offset(), format!("non-finite result {value}")))
        }
    }
}

/// `a^b`, using repeated multiplication for small integer exponents so that
/// `x^2` is exactly `x*x`.
fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
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
            TokenKind::Number(x) => format!("number {x}"),
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
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let simple = match c {
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
        if let Some(kind) = simple {
            out.push(Token { kind, offset: start });
            i += 1;
        } else if c.is_ascii_whitespace() {
            i += 1;
        } else if src[i..].starts_with('\u{2212}') {
            out.push(Token {
                kind: TokenKind::Minus,
                offset: start,
            });
            i += '\u{2212}'.len_utf8();
        } else if c.is_ascii_digit() || c == b'.' {
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
            let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            if !value.is_finite() {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("number `{text}` is out of range"),
                });
            }
            out.push(Token {
                kind: TokenKind::Number(value),
                offset: start,
            });
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokenKind::Ident(src[start..i].to_string()),
                offset: start,
            });
        } else {
            let ch = src[i..].chars().next().unwrap_or('?');
            return Err(ExprError::Syntax {
                offset: start,
                message: format!("unexpected character `{ch}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    scope: Scope,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_kind(&self) -> Option<&TokenKind> {
        self.peek().map(|t| &t.kind)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn end_offset(&self) -> usize {
        self.len
    }

    fn expect(&mut self, kind: TokenKind) -> Result<Token, ExprError> {
        match self.next() {
            Some(t) if t.kind == kind => Ok(t),
            Some(t) => Err(ExprError::Syntax {
                offset: t.offset,
                message: format!("expected {}, found {}", kind.describe(), t.kind.describe()),
            }),
            None => Err(ExprError::Syntax {
                offset: self.end_offset(),
                message: format!("expected {}, found end of input", kind.describe()),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op) = match self.peek_kind() {
            Some(TokenKind::Plus) => Some(BinOp::Add),
            Some(TokenKind::Minus) => Some(BinOp::Sub),
            _ => None,
        } {
            let offset = self.next().map(|t| t.offset).unwrap_or_default();
            let rhs = self.term()?;
            lhs = Node::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                offset,
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.factor()?;
        while let Some(op) = match self.peek_kind() {
            Some(TokenKind::Star) => Some(BinOp::Mul),
            Some(TokenKind::Slash) => Some(BinOp::Div),
            _ => None,
        } {
            let offset = self.next().map(|t| t.offset).unwrap_or_default();
            let rhs = self.factor()?;
            lhs = Node::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                offset,
            };
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Node, ExprError> {
        if let Some(TokenKind::Minus) = self.peek_kind() {
            let offset = self.next().map(|t| t.offset).unwrap_or_default();
            let arg = self.power()?;
            return Ok(Node::Neg {
                arg: Box::new(arg),
                offset,
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if let Some(TokenKind::Caret) = self.peek_kind() {
            let offset = self.next().map(|t| t.offset).unwrap_or_default();
            let exponent = self.factor()?;
            return Ok(Node::Binary {
                op: BinOp::Pow,
                lhs: Box::new(base),
                rhs: Box::new(exponent),
                offset,
            });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let tok = self.next().ok_or_else(|| ExprError::Syntax {
            offset: self.end_offset(),
            message: "unexpected end of input".into(),
        })?;
        match tok.kind {
            TokenKind::Number(x) => Ok(Node::Const(x)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                if let Some(func) = Func::lookup(&name) {
                    return self.call(func, &name, tok.offset);
                }
                let var = self.resolve(&name).ok_or(ExprError::UnknownIdentifier {
                    name,
                    offset: tok.offset,
                })?;
                Ok(Node::Var {
                    var,
                    offset: tok.offset,
                })
            }
            other => Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }

    fn call(&mut self, func: Func, name: &str, offset: usize) -> Result<Node, ExprError> {
        self.expect(TokenKind::LParen)?;
        let mut args = vec![self.expr()?];
        while let Some(TokenKind::Comma) = self.peek_kind() {
            self.next();
            args.push(self.expr()?);
        }
        self.expect(TokenKind::RParen)?;
        let ok = if func.is_variadic() {
            args.len() >= 2
        } else {
            args.len() == 1
        };
        if !ok {
            return Err(ExprError::Arity {
                name: name.to_string(),
                expected: if func.is_variadic() { "at least 2" } else { "1" },
                got: args.len(),
                offset,
            });
        }
        Ok(Node::Call { func, args, offset })
    }

    fn resolve(&self, name: &str) -> Option<Var> {
        if name == "t" {
            return Some(Var::T);
        }
        let (prefix, digits) = name.split_at(1);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
            return None;
        }
        let k: usize = digits.parse().ok()?;
        let (var, bound) = match prefix {
            "x" => (Var::X(k - 1), self.scope.n),
            "v" => (Var::V(k - 1), self.scope.m),
            "y" => (Var::Y(k - 1), self.scope.y),
            _ => return None,
        };
        (k <= bound).then_some(var)
    }
}
