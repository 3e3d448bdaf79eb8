use std::fmt;
use std::process::ExitCode;

use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    /// Bad flags or flag combinations.
    Usage,
    /// Unreadable, malformed or inconsistent inputs.
    Data,
    /// A bug or an environment failure we cannot attribute to the inputs.
    Internal,
}

impl Category {
    fn name(self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Data => "data",
            Category::Internal => "internal",
        }
    }

    fn code(self) -> u8 {
        match self {
            Category::Usage => 2,
            Category::Data => 3,
            Category::Internal => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { category: Category::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { category: Category::Data, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { category: Category::Internal, message: message.into() }
    }

    /// Prefix the message with what was being done.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    /// Print the machine-readable error to stderr and pick the exit code.
    pub fn report(&self) -> ExitCode {
        let body = json!({
            "schema_version": 1,
            "error": {"category": self.category.name(), "message": self.message},
        });
        eprintln!("{body}");
        ExitCode::from(self.category.code())
    }
}

// Library errors describe bad inputs; anything else is wrapped explicitly.
impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::data(e.to_string())
    }
}

pub trait Context<T> {
    fn context(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn context(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| e.into().context(what))
    }
}
