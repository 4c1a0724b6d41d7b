//! The mini-language: syntax tree, parser, printer, type checker and interpreter.

pub mod ast;
pub mod interp;
pub mod parser;
pub mod types;
pub mod unparse;

pub use ast::{Kind, Node, Span};
pub use interp::{coverage, execute, execute_with, passes_all, CoverageMatrix, ExecOutcome, Limits, RuntimeError, TestCase, TestCoverage, Value};
pub use parser::{parse, parse_statement, SyntaxError};
pub use types::{check, Type, TypeError};
pub use unparse::{header_text, unparse};
