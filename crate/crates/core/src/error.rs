use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in `{term}`{}", context_suffix(.context))]
    Numeric { term: String, context: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn context_suffix(ctx: &str) -> String {
    if ctx.is_empty() {
        String::new()
    } else {
        format!(" ({ctx})")
    }
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(term: impl Into<String>) -> Self {
        Error::Numeric { term: term.into(), context: String::new() }
    }

    /// Attach extra context (step index, iteration, column name) to a numeric error.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::Numeric { term, context } => {
                let ctx = ctx.into();
                let context = if context.is_empty() { ctx } else { format!("{ctx}; {context}") };
                Error::Numeric { term, context }
            }
            other => other,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
