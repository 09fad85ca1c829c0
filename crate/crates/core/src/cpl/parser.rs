//! Recursive-descent parser for policy expressions.
//!
//! Precedence, loosest first: `or`, `and`, comparisons (non-associative),
//! `+ -`, `* / %`, prefix `not`, member access. Offsets in errors are
//! character offsets into the source.

use thiserror::Error;

use super::ast::{BinaryOp, Expr, Function, Path};
use crate::number::Number;
use crate::value::Value;

/// Identifier bound to the current element inside predicate arguments.
pub const IT: &str = "it";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("at offset {offset}: {reason}")]
pub struct ExprError {
    pub offset: usize,
    pub reason: String,
}

impl ExprError {
    fn new(offset: usize, reason: impl Into<String>) -> Self {
        ExprError { offset, reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(String),
    Str(String),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Op(BinaryOp),
    Minus,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn lex(source: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '(' => {
                i += 1;
                Tok::LParen
            }
            ')' => {
                i += 1;
                Tok::RParen
            }
            ',' => {
                i += 1;
                Tok::Comma
            }
            '+' => {
                i += 1;
                Tok::Op(BinaryOp::Add)
            }
            '-' => {
                i += 1;
                Tok::Minus
            }
            '*' => {
                i += 1;
                Tok::Op(BinaryOp::Mul)
            }
            '/' => {
                i += 1;
                Tok::Op(BinaryOp::Div)
            }
            '%' => {
                i += 1;
                Tok::Op(BinaryOp::Rem)
            }
            '=' | '!' | '<' | '>' => {
                let next = chars.get(i + 1).copied();
                let (op, width) = match (c, next) {
                    ('=', Some('=')) => (BinaryOp::Eq, 2),
                    ('!', Some('=')) => (BinaryOp::Ne, 2),
                    ('<', Some('=')) => (BinaryOp::Le, 2),
                    ('>', Some('=')) => (BinaryOp::Ge, 2),
                    ('<', _) => (BinaryOp::Lt, 1),
                    ('>', _) => (BinaryOp::Gt, 1),
                    ('=', _) => return Err(ExprError::new(start, "unexpected '=' (use '==')")),
                    _ => return Err(ExprError::new(start, "unexpected '!' (use 'not' or '!=')")),
                };
                i += width;
                Tok::Op(op)
            }
            '"' | '\'' => {
                let quote = c;
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => return Err(ExprError::new(chars.len(), "unterminated string literal")),
                        Some(&ch) if ch == quote => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            let escaped = match chars.get(i + 1) {
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some('r') => '\r',
                                Some(&e @ ('\\' | '"' | '\'')) => e,
                                // Kept verbatim so regex escapes like `\s` read naturally.
                                Some(_) => {
                                    s.push('\\');
                                    i += 1;
                                    continue;
                                }
                                None => return Err(ExprError::new(chars.len(), "unterminated string literal")),
                            };
                            s.push(escaped);
                            i += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                Tok::Str(s)
            }
            '.' if !chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => {
                i += 1;
                Tok::Dot
            }
            c if c.is_ascii_digit() || c == '.' => {
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && matches!(chars[i], 'e' | 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && matches!(chars[j], '+' | '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                Tok::Number(chars[start..i].iter().collect())
            }
            c if c.is_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                match word.as_str() {
                    "and" => Tok::Op(BinaryOp::And),
                    "or" => Tok::Op(BinaryOp::Or),
                    _ => Tok::Ident(word),
                }
            }
            other => return Err(ExprError::new(start, format!("unexpected character '{other}'"))),
        };
        tokens.push(Token { tok, offset: start });
    }
    tokens.push(Token { tok: Tok::Eof, offset: chars.len() });
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    /// Number of enclosing predicate arguments; `it` is valid when > 0.
    predicate_depth: usize,
}

/// Parses one expression.
pub fn parse_expr(source: &str) -> Result<Expr, ExprError> {
    let mut parser = Parser { tokens: lex(source)?, pos: 0, predicate_depth: 0 };
    let expr = parser.or()?;
    let t = parser.peek();
    if t.tok != Tok::Eof {
        return Err(ExprError::new(t.offset, "unexpected trailing input"));
    }
    Ok(expr)
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self) -> ExprError {
        let t = self.peek();
        match &t.tok {
            Tok::Eof => ExprError::new(t.offset, "unexpected end of input"),
            other => ExprError::new(t.offset, format!("unexpected {}", describe(other))),
        }
    }

    fn expect(&mut self, want: Tok) -> Result<(), ExprError> {
        if self.peek().tok == want {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    fn eat_op(&mut self, ops: &[BinaryOp]) -> Option<BinaryOp> {
        match self.peek().tok {
            Tok::Op(op) if ops.contains(&op) => {
                self.bump();
                Some(op)
            }
            Tok::Minus if ops.contains(&BinaryOp::Sub) => {
                self.bump();
                Some(BinaryOp::Sub)
            }
            _ => None,
        }
    }

    fn or(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.and()?;
        while let Some(op) = self.eat_op(&[BinaryOp::Or]) {
            lhs = Expr::binary(op, lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.comparison()?;
        while let Some(op) = self.eat_op(&[BinaryOp::And]) {
            lhs = Expr::binary(op, lhs, self.comparison()?);
        }
        Ok(lhs)
    }

    fn comparison(&mut self) -> Result<Expr, ExprError> {
        const CMP: [BinaryOp; 6] = [BinaryOp::Eq, BinaryOp::Ne, BinaryOp::Lt, BinaryOp::Gt, BinaryOp::Le, BinaryOp::Ge];
        let lhs = self.additive()?;
        match self.eat_op(&CMP) {
            Some(op) => {
                let rhs = self.additive()?;
                if let Tok::Op(next) = self.peek().tok {
                    if CMP.contains(&next) {
                        return Err(ExprError::new(self.peek().offset, "comparison operators cannot be chained"));
                    }
                }
                Ok(Expr::binary(op, lhs, rhs))
            }
            None => Ok(lhs),
        }
    }

    fn additive(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.multiplicative()?;
        while let Some(op) = self.eat_op(&[BinaryOp::Add, BinaryOp::Sub]) {
            lhs = Expr::binary(op, lhs, self.multiplicative()?);
        }
        Ok(lhs)
    }

    fn multiplicative(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.eat_op(&[BinaryOp::Mul, BinaryOp::Div, BinaryOp::Rem]) {
            lhs = Expr::binary(op, lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Ident(word) if word == "not" => {
                self.bump();
                Ok(Expr::negate(self.unary()?))
            }
            Tok::Minus => {
                self.bump();
                let next = self.peek().clone();
                match next.tok {
                    Tok::Number(text) => {
                        self.bump();
                        let n = parse_number(&text, next.offset)?;
                        self.postfix(Expr::Literal(Value::Number(-n)))
                    }
                    _ => Err(ExprError::new(t.offset, "unary minus applies to numeric literals only")),
                }
            }
            _ => {
                let primary = self.primary()?;
                self.postfix(primary)
            }
        }
    }

    fn postfix(&mut self, mut expr: Expr) -> Result<Expr, ExprError> {
        let mut segments = Vec::new();
        while self.peek().tok == Tok::Dot {
            self.bump();
            let t = self.bump();
            match t.tok {
                Tok::Ident(name) => segments.push(name),
                Tok::Op(op @ (BinaryOp::And | BinaryOp::Or)) => segments.push(op.symbol().to_string()),
                Tok::Eof => return Err(ExprError::new(t.offset, "unexpected end of input")),
                other => {
                    return Err(ExprError::new(t.offset, format!("expected field name, found {}", describe(&other))))
                }
            }
        }
        if segments.is_empty() {
            return Ok(expr);
        }
        expr = match expr {
            Expr::Path(mut p) => {
                p.segments.extend(segments);
                Expr::Path(p)
            }
            Expr::Member(target, mut segs) => {
                segs.extend(segments);
                Expr::Member(target, segs)
            }
            other => Expr::Member(Box::new(other), segments),
        };
        Ok(expr)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Number(text) => {
                self.bump();
                Ok(Expr::Literal(Value::Number(parse_number(&text, t.offset)?)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Literal(Value::String(s)))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.or()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.bump();
                match name.as_str() {
                    "true" => return Ok(Expr::Literal(Value::Bool(true))),
                    "false" => return Ok(Expr::Literal(Value::Bool(false))),
                    "null" => return Ok(Expr::Literal(Value::Null)),
                    "not" => unreachable!("handled in unary"),
                    _ => {}
                }
                if self.peek().tok == Tok::LParen {
                    return self.call(&name, t.offset);
                }
                if name == IT && self.predicate_depth == 0 {
                    return Err(ExprError::new(t.offset, "'it' is only defined inside predicate arguments"));
                }
                Ok(Expr::Path(Path { root: name, segments: Vec::new() }))
            }
            _ => Err(self.unexpected()),
        }
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Expr, ExprError> {
        let func =
            Function::from_name(name).ok_or_else(|| ExprError::new(offset, format!("unknown function '{name}'")))?;
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        if self.peek().tok != Tok::RParen {
            loop {
                let is_predicate = func.takes_predicate() && args.len() == 1;
                if is_predicate {
                    self.predicate_depth += 1;
                }
                let arg = self.or();
                if is_predicate {
                    self.predicate_depth -= 1;
                }
                args.push(arg?);
                if self.peek().tok == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen)?;
        if args.len() != func.arity() {
            let plural = if func.arity() == 1 { "" } else { "s" };
            return Err(ExprError::new(
                offset,
                format!("{name}() takes {} argument{plural}, got {}", func.arity(), args.len()),
            ));
        }
        if func == Function::Matches {
            if let Expr::Literal(Value::String(pattern)) = &args[1] {
                super::eval::compile_pattern(pattern)
                    .map_err(|e| ExprError::new(offset, format!("invalid pattern: {e}")))?;
            }
        }
        Ok(Expr::Call(func, args))
    }
}

fn parse_number(text: &str, offset: usize) -> Result<Number, ExprError> {
    Number::parse_decimal(text).map_err(|e| ExprError::new(offset, e.to_string()))
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Number(n) => format!("number {n}"),
        Tok::Str(_) => "string literal".to_string(),
        Tok::Ident(name) => format!("identifier '{name}'"),
        Tok::LParen => "'('".to_string(),
        Tok::RParen => "')'".to_string(),
        Tok::Comma => "','".to_string(),
        Tok::Dot => "'.'".to_string(),
        Tok::Op(op) => format!("'{}'", op.symbol()),
        Tok::Minus => "'-'".to_string(),
        Tok::Eof => "end of input".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpl::ast::UnaryOp;

    #[test]
    fn count_comparison() {
        let e = parse_expr("count(operations) > 0").unwrap();
        assert_eq!(
            e,
            Expr::binary(BinaryOp::Gt, Expr::Call(Function::Count, vec![Expr::path("operations", &[])]), Expr::lit(0))
        );
    }

    #[test]
    fn not_call_form() {
        assert_eq!(parse_expr("not(false)").unwrap(), Expr::Unary(UnaryOp::Not, Box::new(Expr::lit(false))));
    }

    #[test]
    fn unexpected_end() {
        assert_eq!(parse_expr("sum(").unwrap_err(), ExprError::new(4, "unexpected end of input"));
    }

    #[test]
    fn calc_assert_shape() {
        let e = parse_expr("tool_call.arguments.value == last(operations).output").unwrap();
        let Expr::Binary(BinaryOp::Eq, lhs, rhs) = e else { panic!() };
        assert_eq!(*lhs, Expr::path("tool_call", &["arguments", "value"]));
        assert_eq!(
            *rhs,
            Expr::Member(
                Box::new(Expr::Call(Function::Last, vec![Expr::path("operations", &[])])),
                vec!["output".into()]
            )
        );
    }

    #[test]
    fn precedence_ladder() {
        let e = parse_expr("a or b and c == 1 + 2 * 3").unwrap();
        assert_eq!(e.to_string(), "a or b and c == 1 + 2 * 3");
        let Expr::Binary(BinaryOp::Or, _, rhs) = &e else { panic!() };
        let Expr::Binary(BinaryOp::And, _, cmp) = &**rhs else { panic!() };
        let Expr::Binary(BinaryOp::Eq, _, sum) = &**cmp else { panic!() };
        let Expr::Binary(BinaryOp::Add, _, prod) = &**sum else { panic!() };
        assert!(matches!(**prod, Expr::Binary(BinaryOp::Mul, _, _)));
        assert_eq!(parse_expr("not a == b").unwrap().to_string(), "not a == b");
        assert!(matches!(parse_expr("not a == b").unwrap(), Expr::Binary(BinaryOp::Eq, _, _)));
        assert_eq!(parse_expr("(1 - 2) - 3").unwrap().to_string(), "1 - 2 - 3");
        assert_eq!(parse_expr("1 - (2 - 3)").unwrap().to_string(), "1 - (2 - 3)");
    }

    #[test]
    fn literals() {
        assert_eq!(parse_expr("'it''s'").unwrap_err().offset, 4);
        assert_eq!(parse_expr(r#"'a\'b'"#).unwrap(), Expr::lit("a'b"));
        assert_eq!(parse_expr("-7.095").unwrap(), Expr::Literal(Value::Number("-7.095".parse().unwrap())));
        assert_eq!(parse_expr("null").unwrap(), Expr::Literal(Value::Null));
        assert_eq!(parse_expr(".5").unwrap(), Expr::Literal(Value::Number("0.5".parse().unwrap())));
    }

    #[test]
    fn error_cases() {
        let err = parse_expr("foo(1)").unwrap_err();
        assert_eq!(err, ExprError::new(0, "unknown function 'foo'"));
        assert_eq!(parse_expr("count(a, b)").unwrap_err().reason, "count() takes 1 argument, got 2");
        assert_eq!(parse_expr("(1 + 2").unwrap_err(), ExprError::new(6, "unexpected end of input"));
        assert_eq!(parse_expr("1 + 2)").unwrap_err().reason, "unexpected trailing input");
        assert!(parse_expr("1 < 2 < 3").unwrap_err().reason.contains("chained"));
        assert!(parse_expr("it.x > 1").unwrap_err().reason.contains("'it'"));
        assert!(parse_expr("matches(x, '(')").unwrap_err().reason.starts_with("invalid pattern"));
        assert!(parse_expr("- x").is_err());
        assert!(parse_expr("a = b").is_err());
    }

    #[test]
    fn it_scoping() {
        assert!(parse_expr("any(claims, count(it.citation_ids) > 0)").is_ok());
        assert!(parse_expr("any(it, true)").is_err());
        assert!(parse_expr("any(claims, any(it.citation_ids, it == 'c1'))").is_ok());
    }
}
