use thiserror::Error;

pub type ToolResult<T> = Result<T, ToolError>;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] sos_core::Error),
}

impl ToolError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        let context = context.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            ToolError::MissingInput(format!("{context}: {source}"))
        } else {
            ToolError::Io { context, source }
        }
    }

    pub fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        ToolError::Format { what: what.into(), detail: detail.into() }
    }

    /// 2 configuration, 3 numerical or solver failure, 4 missing input.
    pub fn exit_code(&self) -> i32 {
        use sos_core::Error as E;
        match self {
            ToolError::Config(_) | ToolError::Io { .. } => 2,
            ToolError::MissingInput(_) | ToolError::Format { .. } => 4,
            ToolError::Core(E::Config(_) | E::InvalidArgument(_)) => 2,
            ToolError::Core(_) => 3,
        }
    }
}
