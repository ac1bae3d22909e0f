use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single offending input row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowIssue {
    /// 1-based line number in the source file (the header is line 1).
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for RowIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn join_issues(issues: &[RowIssue]) -> String {
    const SHOWN: usize = 10;
    let mut out: Vec<String> = issues.iter().take(SHOWN).map(ToString::to_string).collect();
    if issues.len() > SHOWN {
        out.push(format!("... and {} more", issues.len() - SHOWN));
    }
    out.join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation failed for {} row(s): {}", .0.len(), join_issues(.0))]
    Validation(Vec<RowIssue>),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("fit error (fold {fold}, {arm}): {message}")]
    Fit {
        fold: usize,
        arm: String,
        message: String,
    },

    #[error("degenerate group: {0}")]
    Degenerate(String),

    #[error("evaluation error at record {index}: {message}")]
    Evaluation { index: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("linear algebra error: {0}")]
    LinAlg(String),

    #[error(
        "solver did not converge in {iterations} iterations \
         (primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
    },

    #[error("inference error: {0}")]
    Inference(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Coarse error category, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::Json(_) | Error::Unsupported(_) => {
                Category::Config
            }
            Error::Schema(_)
            | Error::Validation(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Fit { .. }
            | Error::Degenerate(_)
            | Error::Dimension { .. } => Category::Data,
            Error::Evaluation { .. }
            | Error::LinAlg(_)
            | Error::NonConvergence { .. }
            | Error::Inference(_) => Category::Numerical,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            Category::Config => 2,
            Category::Data => 3,
            Category::Numerical => 4,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
