use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point outside the ball: r*|x|^2 = {norm_sq_scaled} (must be < {limit})")]
    OutsideBall { norm_sq_scaled: f64, limit: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric positive definite{}", node_suffix(*.node))]
    NotPositiveDefinite { node: Option<usize> },

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "metric is {epsilon:.6}-close to the hyperbolic reference but at most {limit}-closeness is required; \
         {hint}"
    )]
    EpsilonGate {
        epsilon: f64,
        limit: f64,
        hint: &'static str,
    },

    #[error("flow became unstable at node {node} (t = {time}): {reason}")]
    Instability {
        node: usize,
        time: f64,
        reason: &'static str,
    },

    #[error("decay fit failed: {0}")]
    Fit(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence {
        epoch: usize,
        reason: String,
        /// Logs of the epochs completed before the failure.
        logs: Vec<crate::eucl2hyp2eucl::EpochLog>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn node_suffix(node: Option<usize>) -> String {
    match node {
        Some(n) => format!(" at node {n}"),
        None => String::new(),
    }
}
