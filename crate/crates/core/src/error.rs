use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("unknown {kind} '{name}'; available: {}", available.join(", "))]
    Lookup {
        kind: &'static str,
        name: String,
        available: Vec<String>,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("tableau error: {0}")]
    Tableau(String),

    #[error("non-finite value from {0}")]
    Evaluation(String),

    #[error("singular matrix in {context} at iterate {iterate}")]
    Singular { context: String, iterate: usize },

    #[error("Newton did not converge in {context}: residual {residual:e} after {iterations} iterations")]
    NoConvergence {
        context: String,
        residual: f64,
        iterations: usize,
    },

    #[error("index reduction failed: best constraint residual {residual:e}")]
    Reduction { residual: f64 },

    #[error("index error: {0}")]
    Index(String),

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shooting diverged; residual history {history:?}")]
    Shooting { history: Vec<f64> },

    #[error("output error: {0}")]
    Output(String),

    #[error("audit error: {0}")]
    Audit(String),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn dim(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            got,
        }
    }
}
