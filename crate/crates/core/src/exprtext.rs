//! Text grammar for reporter expressions, used by watch expressions.
//!
//! ```text
//! expr    := or
//! or      := and ("or" and)*
//! and     := not ("and" not)*
//! not     := "not" not | cmp
//! cmp     := sum (("<" | ">" | "=") sum)?
//! sum     := term (("+" | "-") term)*
//! term    := unary (("*" | "/" | "mod") unary)*
//! unary   := "-" unary | primary
//! primary := NUMBER | STRING | "true" | "false" | "(" expr ")"
//!          | "item" sum "of" NAME
//!          | "length" "of" "list" NAME | "length" "of" unary
//!          | "letter" sum "of" unary
//!          | "join" "(" expr "," expr ")"
//!          | "round" unary
//!          | NAME ("contains" sum)?
//! NAME    := identifier | "[" any text "]"
//! ```

use crate::error::ExprParseError;
use crate::program::{ArithOp, CompareOp, Expr};
use crate::value::Value;

const KEYWORDS: &[&str] = &[
    "and", "or", "not", "mod", "item", "of", "length", "list", "letter", "join", "round", "contains", "true",
    "false",
];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Str(String),
    Ident(String),
    /// Bracketed name; never a keyword.
    Name(String),
    Sym(char),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprParseError> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut i = 0;
    let err = |offset: usize, message: &str| ExprParseError { offset, message: message.to_owned() };
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|(_, d)| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                i += 1;
            }
            let end = chars.get(i).map_or(src.len(), |(p, _)| *p);
            let text = &src[pos..end];
            let n: f64 = text.parse().map_err(|_| err(chars[start].0, "malformed number"))?;
            out.push((pos, Tok::Num(n)));
        } else if c == '"' {
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(err(pos, "unterminated string")),
                    Some((_, '"')) => {
                        i += 1;
                        break;
                    }
                    Some((_, '\\')) => {
                        let (_, esc) = *chars.get(i + 1).ok_or_else(|| err(pos, "unterminated string"))?;
                        s.push(match esc {
                            'n' => '\n',
                            't' => '\t',
                            other => other,
                        });
                        i += 2;
                    }
                    Some((_, ch)) => {
                        s.push(*ch);
                        i += 1;
                    }
                }
            }
            out.push((pos, Tok::Str(s)));
        } else if c == '[' {
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(err(pos, "unterminated [name]")),
                    Some((_, ']')) => {
                        i += 1;
                        break;
                    }
                    Some((_, ch)) => {
                        s.push(*ch);
                        i += 1;
                    }
                }
            }
            out.push((pos, Tok::Name(s)));
        } else if c.is_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                s.push(chars[i].1);
                i += 1;
            }
            out.push((pos, Tok::Ident(s)));
        } else if "+-*/<>=(),".contains(c) {
            out.push((pos, Tok::Sym(c)));
            i += 1;
        } else {
            return Err(err(pos, &format!("unexpected character '{c}'")));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len, |(o, _)| *o)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprParseError> {
        Err(ExprParseError { offset: self.offset(), message: message.into() })
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ExprParseError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.err(format!("expected \"{kw}\""))
        }
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<(), ExprParseError> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            self.err(format!("expected '{c}'"))
        }
    }

    fn name(&mut self) -> Result<String, ExprParseError> {
        match self.peek().cloned() {
            Some(Tok::Name(n)) => {
                self.pos += 1;
                Ok(n)
            }
            Some(Tok::Ident(n)) if !KEYWORDS.contains(&n.as_str()) => {
                self.pos += 1;
                Ok(n)
            }
            _ => self.err("expected a name"),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprParseError> {
        let mut lhs = self.and()?;
        while self.eat_kw("or") {
            lhs = Expr::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ExprParseError> {
        let mut lhs = self.not()?;
        while self.eat_kw("and") {
            lhs = Expr::And(Box::new(lhs), Box::new(self.not()?));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr, ExprParseError> {
        if self.eat_kw("not") {
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expr, ExprParseError> {
        let lhs = self.sum()?;
        let op = match self.peek() {
            Some(Tok::Sym('<')) => CompareOp::Lt,
            Some(Tok::Sym('>')) => CompareOp::Gt,
            Some(Tok::Sym('=')) => CompareOp::Eq,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        Ok(Expr::compare(op, lhs, self.sum()?))
    }

    fn sum(&mut self) -> Result<Expr, ExprParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat_sym('+') {
                ArithOp::Add
            } else if self.eat_sym('-') {
                ArithOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::arith(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, ExprParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat_sym('*') {
                ArithOp::Mul
            } else if self.eat_sym('/') {
                ArithOp::Div
            } else if self.eat_kw("mod") {
                ArithOp::Mod
            } else {
                return Ok(lhs);
            };
            lhs = Expr::arith(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprParseError> {
        if self.eat_sym('-') {
            return Ok(match self.unary()? {
                Expr::Literal(Value::Number(n)) => Expr::Literal(Value::Number(-n)),
                e => Expr::arith(ArithOp::Sub, Expr::lit(0.0), e),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ExprParseError> {
        let tok = match self.peek().cloned() {
            Some(t) => t,
            None => return self.err("unexpected end of expression"),
        };
        match tok {
            Tok::Num(n) => {
                self.pos += 1;
                Ok(Expr::lit(n))
            }
            Tok::Str(s) => {
                self.pos += 1;
                Ok(Expr::Literal(Value::Text(s)))
            }
            Tok::Sym('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_sym(')')?;
                Ok(e)
            }
            Tok::Ident(kw) if KEYWORDS.contains(&kw.as_str()) => {
                self.pos += 1;
                match kw.as_str() {
                    "true" => Ok(Expr::lit(true)),
                    "false" => Ok(Expr::lit(false)),
                    "item" => {
                        let index = self.sum()?;
                        self.expect_kw("of")?;
                        let list = self.name()?;
                        Ok(Expr::ListItem { list, index: Box::new(index) })
                    }
                    "length" => {
                        self.expect_kw("of")?;
                        if self.eat_kw("list") {
                            Ok(Expr::ListLength(self.name()?))
                        } else {
                            Ok(Expr::StringLength(Box::new(self.unary()?)))
                        }
                    }
                    "letter" => {
                        let index = self.sum()?;
                        self.expect_kw("of")?;
                        let text = self.unary()?;
                        Ok(Expr::LetterOf { index: Box::new(index), text: Box::new(text) })
                    }
                    "join" => {
                        self.expect_sym('(')?;
                        let a = self.expr()?;
                        self.expect_sym(',')?;
                        let b = self.expr()?;
                        self.expect_sym(')')?;
                        Ok(Expr::Join(Box::new(a), Box::new(b)))
                    }
                    "round" => Ok(Expr::Round(Box::new(self.unary()?))),
                    _ => {
                        self.pos -= 1;
                        self.err(format!("unexpected \"{kw}\""))
                    }
                }
            }
            Tok::Ident(_) | Tok::Name(_) => {
                let name = self.name()?;
                if self.eat_kw("contains") {
                    let item = self.sum()?;
                    return Ok(Expr::ListContains { list: name, item: Box::new(item) });
                }
                Ok(Expr::Var(name))
            }
            Tok::Sym(c) => self.err(format!("unexpected '{c}'")),
        }
    }
}

/// Parses watch-expression text. Bare names parse as variable references.
pub fn parse_expr(src: &str) -> Result<Expr, ExprParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, len: src.len() };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(e)
}
