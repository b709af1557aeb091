//! Diagnostics shared by the checker, resolver, and CLI.
//!
//! Serialized one per line as `LEVEL file:line:col CODE message`.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Level {
    Warning,
    Error,
}

pub mod codes {
    pub const SYNTAX: &str = "syntax";
    pub const UNKNOWN_PREFIX: &str = "unknown-prefix";
    pub const AMBIGUOUS_ALIAS: &str = "ambiguous-alias";
    pub const DUPLICATE_DECLARATION: &str = "duplicate-declaration";
    pub const DUPLICATE_PARAMETER: &str = "duplicate-parameter";
    pub const SHADOWED_PRIVATE: &str = "shadowed-private";
    pub const UNDECLARED_PARAMETER: &str = "undeclared-parameter";
    pub const SET_SINGULAR: &str = "set-singular";
    pub const UNKNOWN_REFERENCE: &str = "unknown-reference";
    pub const CYCLIC_REFERENCE: &str = "cyclic-reference";
    pub const ARITY_MISMATCH: &str = "arity-mismatch";
    pub const CLAUSE_SHAPE: &str = "clause-shape";
    pub const ADORNMENT_CONFLICT: &str = "adornment-conflict";
    pub const DEAD_DEPENDENCY: &str = "dead-dependency";
    pub const DOUBLE_BIND_RISK: &str = "double-bind-risk";
    pub const UNBINDABLE_PUBLIC: &str = "unbindable-public";
    pub const LOCAL_KEY_SCOPE: &str = "local-key-scope";
    pub const NO_KEY: &str = "no-key";
    pub const UNREACHABLE_ROLE: &str = "unreachable-role";
    pub const INITIATOR_NOT_CANDIDATE: &str = "initiator-not-candidate";
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub level: Level,
    pub file: String,
    pub line: u32,
    pub col: u32,
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(file: &str, line: u32, col: u32, code: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            level: Level::Error,
            file: file.into(),
            line,
            col,
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn warning(file: &str, line: u32, col: u32, code: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            level: Level::Warning,
            file: file.into(),
            line,
            col,
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.level == Level::Error
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let level = match self.level {
            Level::Error => "ERROR",
            Level::Warning => "WARNING",
        };
        write!(
            f,
            "{level} {}:{}:{} {} {}",
            self.file, self.line, self.col, self.code, self.message
        )
    }
}
