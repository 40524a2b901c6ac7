//! Crate-wide error type and result alias.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("object label is empty after trimming")]
    EmptyLabel,
    #[error("duplicate episode id `{0}`")]
    DuplicateEpisodeId(String),
    #[error("episode object set is empty")]
    EmptyObjectSet,
    #[error("rollout buffer is empty")]
    EmptyBuffer,
    #[error("success table is empty")]
    EmptyTable,
    #[error("no table entry has at least {min_trials} trials")]
    NoEligibleSets { min_trials: u64 },
    #[error("no successful rollout recorded for any object set")]
    NoSuccessEvidence,
    #[error("primitive target `{0}` is not present in the scene")]
    TargetAbsent(String),
    #[error("nesting count {count} exceeds distractor pool size {pool}")]
    CountExceedsPool { count: usize, pool: usize },
    #[error("nesting counts must be non-decreasing")]
    NestingNotMonotonic,
    #[error("{field} must lie in [0, 1], got {value}")]
    ProbabilityOutOfRange { field: &'static str, value: f64 },
    #[error("scene has no task-relevant objects")]
    EmptyRelevantSet,
    #[error("label `{0}` appears as both relevant and distractor")]
    SceneOverlap(String),
    #[error("no machine-parseable removal block found in the response")]
    Unparseable,
    #[error("plan lists have different lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("plan lists are empty")]
    EmptyInput,
    #[error("experiment arms are not comparable: {0}")]
    ArmsNotComparable(String),
    #[error("unknown scene template `{0}`")]
    UnknownTemplate(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("line {line}: {message}")]
    MalformedLog { line: usize, message: String },
    #[error("no replay entry for prompt hash {0}")]
    ReplayMiss(String),
    #[error("completion backend failure: {0}")]
    Backend(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Stable process exit code for this error. Configuration and parse
    /// problems exit 3, I/O problems 4; planner refusals and backend
    /// failures each get a distinct code so scripts can branch on them.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptyBuffer => 10,
            Error::EmptyTable => 11,
            Error::NoEligibleSets { .. } => 12,
            Error::NoSuccessEvidence => 13,
            Error::Unparseable => 20,
            Error::ReplayMiss(_) => 21,
            Error::Backend(_) => 22,
            Error::TargetAbsent(_) => 23,
            Error::Io(_) => 4,
            Error::EmptyLabel
            | Error::DuplicateEpisodeId(_)
            | Error::EmptyObjectSet
            | Error::CountExceedsPool { .. }
            | Error::NestingNotMonotonic
            | Error::ProbabilityOutOfRange { .. }
            | Error::EmptyRelevantSet
            | Error::SceneOverlap(_)
            | Error::LengthMismatch { .. }
            | Error::EmptyInput
            | Error::ArmsNotComparable(_)
            | Error::UnknownTemplate(_)
            | Error::UnknownScenario(_)
            | Error::Config { .. }
            | Error::MalformedLog { .. }
            | Error::Json(_) => 3,
        }
    }
}
