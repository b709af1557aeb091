//! Lexer, parser, syntax tree, and canonical printer for the Pippi protocol
//! language: specification documents made of a preamble and protocol or
//! message declarations, with adorned parameters, qualifiers, constraints,
//! and Boolean parameter expressions.

pub mod ast;
pub mod expand;
mod lexer;
mod parser;
mod printer;

pub use ast::*;
pub use expand::{expand_names, ExpandError};
pub use parser::parse;
pub use printer::{param_expr as print_param_expr, parameter as print_parameter, print};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("syntax error at {line}:{col}: {message}")]
pub struct SyntaxError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl SyntaxError {
    pub fn new(line: u32, col: u32, message: impl Into<String>) -> Self {
        SyntaxError {
            line,
            col,
            message: message.into(),
        }
    }
}
