use std::fmt;

/// Errors carry their process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration: exit 1.
    Usage(String),
    /// Anything the library reports; see [`CliError::code`].
    Core(fcrx_core::Error),
    /// A required rewriter could not be reached: exit 4.
    RewriterRequired(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::RewriterRequired(_) => 4,
            CliError::Core(e) => match e {
                fcrx_core::Error::InvalidArgument(_) => 1,
                fcrx_core::Error::Numerical(_) => 3,
                fcrx_core::Error::Rewriter(_) => 4,
                _ => 2,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::RewriterRequired(m) => write!(f, "rewriter required but unavailable: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fcrx_core::Error> for CliError {
    fn from(e: fcrx_core::Error) -> Self {
        CliError::Core(e)
    }
}

/// I/O on output paths is reported as a data error.
pub fn io(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Core(fcrx_core::Error::Io { path: path.to_path_buf(), source: e })
}
