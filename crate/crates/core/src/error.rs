//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. Variants are
//! grouped by the subsystem that raises them so callers (notably the CLI) can
//! map them onto coarse exit codes: configuration problems, runtime problems,
//! and bad input data.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // -- contract violations in the reward algebra ---------------------------
    /// A rollout group was empty where at least one rollout is required.
    #[error("empty rollout group: {context}")]
    EmptyRollouts { context: &'static str },

    /// Length targets were requested for a sample whose gate never opened.
    #[error("length targets require at least one correct rollout (gate not open)")]
    GateNotOpen,

    /// A nonzero length penalty was combined with a closed gate.
    #[error("shaped reward contract violated: gate closed but penalty = {penalty}")]
    GateViolation { penalty: f64 },

    /// Global penalty bounds must satisfy start < max.
    #[error("global penalty bounds invalid: start {start} must be below max {max}")]
    BadGlobalBounds { start: u64, max: u64 },

    // -- optimizer -----------------------------------------------------------
    /// Advantage computation needs at least two rollouts per group.
    #[error("advantage group too small: got {got}, need at least 2")]
    GroupTooSmall { got: usize },

    /// A batch entry referenced a sample the policy does not know.
    #[error("unknown sample id in batch: {id}")]
    UnknownSample { id: String },

    /// A gradient came out non-finite; the diagnostic names the culprit.
    #[error("non-finite gradient for sample {id}: {detail}")]
    NonFiniteGradient { id: String, detail: String },

    // -- configuration -------------------------------------------------------
    /// A configuration field failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// The config file could not be parsed.
    #[error("config parse error in {path}: {detail}")]
    ConfigParse { path: PathBuf, detail: String },

    // -- trace ingestion and reports -----------------------------------------
    /// A trace line violated the JSONL schema. Messages carry 1-based line
    /// numbers so the offending record can be found by eye.
    #[error("line {line}: {detail}")]
    Trace { line: usize, detail: String },

    /// A report was requested over an empty series.
    #[error("cannot build a report from an empty series")]
    EmptyReport,

    /// Relative change against a zero-length baseline is undefined.
    #[error("relative change undefined: baseline mean length is zero")]
    ZeroBaseline,

    /// The requested baseline step does not occur in the trace.
    #[error("baseline step {step} not present in trace")]
    MissingBaselineStep { step: u64 },

    // -- batching and runs ---------------------------------------------------
    /// The candidate pools cannot fill a batch.
    #[error("cannot draw batch of {batch} from {available} candidates")]
    PoolExhausted { batch: usize, available: usize },

    /// A checkpoint file was malformed or from an incompatible version.
    #[error("bad checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    /// A checkpoint's embedded config hash disagrees with the active config.
    #[error("checkpoint config hash {found} does not match active config {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a path to a raw IO error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
