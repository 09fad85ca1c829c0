use std::fmt;

use crate::number::Rendered;
use crate::value::Value;

/// Builtin functions. The set is closed: there is no way to define new ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Function {
    Any,
    All,
    Count,
    Sum,
    Min,
    Max,
    First,
    Last,
    Filter,
    Contains,
    StartsWith,
    Matches,
}

impl Function {
    pub const ALL: [Function; 12] = [
        Function::Any,
        Function::All,
        Function::Count,
        Function::Sum,
        Function::Min,
        Function::Max,
        Function::First,
        Function::Last,
        Function::Filter,
        Function::Contains,
        Function::StartsWith,
        Function::Matches,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Function::Any => "any",
            Function::All => "all",
            Function::Count => "count",
            Function::Sum => "sum",
            Function::Min => "min",
            Function::Max => "max",
            Function::First => "first",
            Function::Last => "last",
            Function::Filter => "filter",
            Function::Contains => "contains",
            Function::StartsWith => "starts_with",
            Function::Matches => "matches",
        }
    }

    pub fn from_name(name: &str) -> Option<Function> {
        Function::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn arity(&self) -> usize {
        match self {
            Function::Any | Function::All | Function::Filter => 2,
            Function::Contains | Function::StartsWith | Function::Matches => 2,
            _ => 1,
        }
    }

    /// any/all/filter evaluate their second argument once per element with
    /// `it` bound.
    pub fn takes_predicate(&self) -> bool {
        matches!(self, Function::Any | Function::All | Function::Filter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Rem => "%",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Gt => ">",
            BinaryOp::Le => "<=",
            BinaryOp::Ge => ">=",
            BinaryOp::And => "and",
            BinaryOp::Or => "or",
        }
    }

    pub(crate) fn precedence(&self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Gt | BinaryOp::Le | BinaryOp::Ge => 3,
            BinaryOp::Add | BinaryOp::Sub => 4,
            BinaryOp::Mul | BinaryOp::Div | BinaryOp::Rem => 5,
        }
    }

    pub fn is_comparison(&self) -> bool {
        self.precedence() == 3
    }

    pub fn is_arithmetic(&self) -> bool {
        self.precedence() >= 4
    }
}

const UNARY_PRECEDENCE: u8 = 6;
const POSTFIX_PRECEDENCE: u8 = 7;

/// A member-access chain rooted at an identifier: `tool_call.arguments.value`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    pub root: String,
    pub segments: Vec<String>,
}

impl Path {
    pub fn new(root: impl Into<String>, segments: &[&str]) -> Self {
        Path { root: root.into(), segments: segments.iter().map(|s| s.to_string()).collect() }
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.root)?;
        for seg in &self.segments {
            write!(f, ".{seg}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Literal(Value),
    Path(Path),
    /// Member access on a non-path expression, e.g. `last(operations).output`.
    Member(Box<Expr>, Vec<String>),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Call(Function, Vec<Expr>),
}

impl Expr {
    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn negate(inner: Expr) -> Expr {
        Expr::Unary(UnaryOp::Not, Box::new(inner))
    }

    pub fn path(root: &str, segments: &[&str]) -> Expr {
        Expr::Path(Path::new(root, segments))
    }

    pub fn lit(v: impl Into<Value>) -> Expr {
        Expr::Literal(v.into())
    }

    /// Node count; path segments count as nodes because each one may walk a
    /// collection.
    pub fn size(&self) -> usize {
        match self {
            Expr::Literal(_) => 1,
            Expr::Path(p) => 1 + p.segments.len(),
            Expr::Member(target, segs) => 1 + segs.len() + target.size(),
            Expr::Unary(_, inner) => 1 + inner.size(),
            Expr::Binary(_, l, r) => 1 + l.size() + r.size(),
            Expr::Call(_, args) => 1 + args.iter().map(Expr::size).sum::<usize>(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Literal(_) | Expr::Path(_) => 1,
            Expr::Member(target, _) => 1 + target.depth(),
            Expr::Unary(_, inner) => 1 + inner.depth(),
            Expr::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
            Expr::Call(_, args) => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    /// How many predicate arguments (any/all/filter bodies) are nested inside
    /// one another at the deepest point.
    pub fn predicate_nesting(&self) -> usize {
        match self {
            Expr::Literal(_) | Expr::Path(_) => 0,
            Expr::Member(target, _) => target.predicate_nesting(),
            Expr::Unary(_, inner) => inner.predicate_nesting(),
            Expr::Binary(_, l, r) => l.predicate_nesting().max(r.predicate_nesting()),
            Expr::Call(func, args) => args
                .iter()
                .enumerate()
                .map(|(i, a)| a.predicate_nesting() + usize::from(func.takes_predicate() && i == 1))
                .max()
                .unwrap_or(0),
        }
    }

    /// Visits every node, parents before children.
    pub fn walk<'a>(&'a self, visit: &mut impl FnMut(&'a Expr)) {
        visit(self);
        match self {
            Expr::Literal(_) | Expr::Path(_) => {}
            Expr::Member(target, _) => target.walk(visit),
            Expr::Unary(_, inner) => inner.walk(visit),
            Expr::Binary(_, l, r) => {
                l.walk(visit);
                r.walk(visit);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.walk(visit)),
        }
    }

    /// True when some path in the tree is rooted at `root`.
    pub fn references_root(&self, root: &str) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if let Expr::Path(p) = e {
                found |= p.root == root;
            }
        });
        found
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, _, _) => op.precedence(),
            Expr::Unary(..) => UNARY_PRECEDENCE,
            Expr::Literal(Value::Number(n)) if n.is_negative() => UNARY_PRECEDENCE,
            Expr::Literal(Value::Number(n)) if matches!(n.render(), Rendered::Fraction(_)) => 5,
            _ => POSTFIX_PRECEDENCE,
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn write_string_literal(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            '\r' => f.write_str("\\r")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

/// Source form with the minimum parentheses; parses back to an equal tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(Value::String(s)) => write_string_literal(f, s),
            Expr::Literal(Value::Number(n)) => match n.render() {
                Rendered::Decimal(d) => f.write_str(&d),
                Rendered::Fraction(_) => write!(f, "{} / {}", n.numer(), n.denom()),
            },
            Expr::Literal(v) => write!(f, "{v}"),
            Expr::Path(p) => write!(f, "{p}"),
            Expr::Member(target, segs) => {
                write_operand(f, target, !matches!(**target, Expr::Call(..)))?;
                for seg in segs {
                    write!(f, ".{seg}")?;
                }
                Ok(())
            }
            Expr::Unary(UnaryOp::Not, inner) => {
                f.write_str("not ")?;
                write_operand(f, inner, inner.precedence() < UNARY_PRECEDENCE)
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                let (lp, rp) = if op.is_comparison() {
                    (l.precedence() <= p, r.precedence() <= p)
                } else {
                    (l.precedence() < p, r.precedence() <= p)
                };
                write_operand(f, l, lp)?;
                write!(f, " {} ", op.symbol())?;
                write_operand(f, r, rp)
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
