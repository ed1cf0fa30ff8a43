//! String formulas compiled to a stack program that runs per entry or over whole columns.

mod ast;
mod parser;
mod program;

pub use ast::{BinaryOp, ExprAst, Func, UnaryOp};
pub use parser::parse;
pub use program::{compile, ExprProgram, Input, Instr};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{function}` takes {expected} argument(s), got {found}")]
    Arity {
        function: String,
        expected: usize,
        found: usize,
    },
    #[error("variable `{0}` is not bound")]
    Unbound(String),
    #[error("input `{name}` has {len} values, expected {expected}")]
    LengthMismatch { name: String, len: usize, expected: usize },
}
