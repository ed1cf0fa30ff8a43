//! Recursive-descent parser for formulas.
//!
//! ```text
//! expr    = term { ("+" | "-") term }
//! term    = unary { ("*" | "/") unary }
//! unary   = "-" unary | power
//! power   = primary [ "^" unary ]          (right-associative)
//! primary = number | ident | ident "(" expr { "," expr } ")" | "(" expr ")"
//! number  = digits [ "." [digits] ] [ exponent ] | "." digits [ exponent ]
//! ```

use super::ast::{BinaryOp, ExprAst, Func};
use super::ExprError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.text[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    /// Next token and its starting byte offset.
    fn next(&mut self) -> Result<(Tok, usize), ExprError> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.text[start..];
        let Some(c) = rest.chars().next() else {
            return Ok((Tok::End, start));
        };
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => {
                self.pos += 1;
                Tok::Op(c)
            }
            '(' => {
                self.pos += 1;
                Tok::LParen
            }
            ')' => {
                self.pos += 1;
                Tok::RParen
            }
            ',' => {
                self.pos += 1;
                Tok::Comma
            }
            c if c.is_ascii_digit() || c == '.' => {
                let len = number_len(rest.as_bytes());
                let lit = &rest[..len];
                let v = lit.parse::<f64>().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number `{lit}`"),
                })?;
                self.pos += len;
                Tok::Num(v)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let len = rest
                    .bytes()
                    .position(|b| !(b.is_ascii_alphanumeric() || b == b'_'))
                    .unwrap_or(rest.len());
                self.pos += len;
                Tok::Ident(rest[..len].to_owned())
            }
            other => {
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        Ok((tok, start))
    }
}

fn number_len(b: &[u8]) -> usize {
    let mut i = 0;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    if i < b.len() && b[i] == b'.' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
            j += 1;
        }
        if j < b.len() && b[j].is_ascii_digit() {
            while j < b.len() && b[j].is_ascii_digit() {
                j += 1;
            }
            i = j;
        }
    }
    i
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    offset: usize,
    variables: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn bump(&mut self) -> Result<(), ExprError> {
        let (tok, offset) = self.lexer.next()?;
        self.tok = tok;
        self.offset = offset;
        Ok(())
    }

    fn unexpected(&self, what: &str) -> ExprError {
        let found = match &self.tok {
            Tok::End => "end of input".to_owned(),
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Op(c) => format!("`{c}`"),
            Tok::LParen => "`(`".to_owned(),
            Tok::RParen => "`)`".to_owned(),
            Tok::Comma => "`,`".to_owned(),
        };
        ExprError::Syntax {
            offset: self.offset,
            message: format!("expected {what}, found {found}"),
        }
    }

    fn expr(&mut self) -> Result<ExprAst, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Op('+') => BinaryOp::Add,
                Tok::Op('-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump()?;
            lhs = ExprAst::binary(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<ExprAst, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Op('*') => BinaryOp::Mul,
                Tok::Op('/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump()?;
            lhs = ExprAst::binary(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<ExprAst, ExprError> {
        if self.tok == Tok::Op('-') {
            self.bump()?;
            return Ok(ExprAst::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprAst, ExprError> {
        let base = self.primary()?;
        if self.tok == Tok::Op('^') {
            self.bump()?;
            return Ok(ExprAst::binary(BinaryOp::Pow, base, self.unary()?));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<ExprAst, ExprError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(ExprAst::Number(v))
            }
            Tok::LParen => {
                self.bump()?;
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let at = self.offset;
                self.bump()?;
                if self.tok == Tok::LParen {
                    let func = Func::from_name(&name).ok_or_else(|| ExprError::UnknownIdentifier {
                        name: name.clone(),
                        offset: at,
                    })?;
                    self.bump()?;
                    let mut args = vec![self.expr()?];
                    while self.tok == Tok::Comma {
                        self.bump()?;
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "`,` or `)`")?;
                    if args.len() != func.arity() {
                        return Err(ExprError::Arity {
                            function: func.name().to_owned(),
                            expected: func.arity(),
                            found: args.len(),
                        });
                    }
                    Ok(ExprAst::Call(func, args))
                } else if self.variables.contains(&name.as_str()) {
                    Ok(ExprAst::Var(name))
                } else {
                    Err(ExprError::UnknownIdentifier { name, offset: at })
                }
            }
            _ => Err(self.unexpected("a number, name or `(`")),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ExprError> {
        if self.tok == tok {
            self.bump()
        } else {
            Err(self.unexpected(what))
        }
    }
}

/// Parses `text`, accepting only the listed variable names.
pub fn parse(text: &str, variables: &[&str]) -> Result<ExprAst, ExprError> {
    let mut p = Parser {
        lexer: Lexer { text, pos: 0 },
        tok: Tok::End,
        offset: 0,
        variables,
    };
    p.bump()?;
    let ast = p.expr()?;
    if p.tok != Tok::End {
        return Err(p.unexpected("an operator or end of input"));
    }
    Ok(ast)
}
