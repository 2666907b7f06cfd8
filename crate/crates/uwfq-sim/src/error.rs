use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid workload: {0}")]
    Validation(String),

    #[error("clock moved backwards: t = {t} but t_previous = {t_previous}")]
    NonMonotonicClock { t: f64, t_previous: f64 },

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("user `{0}` has no queued jobs")]
    EmptyUser(String),

    #[error("no deadline registered for `{0}`")]
    MissingDeadline(String),

    #[error("job `{0}` never completed in the trace")]
    IncompleteJob(String),

    #[error("trace parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("no trace rows fall inside the ingest window")]
    EmptyWindow,

    #[error("fairness bound violated for job `{job}`: exceeds bound by {excess:.9} s")]
    BoundViolation { job: String, excess: f64 },

    #[error("scheduler deadlocked at t = {0}: queued work but nothing runnable")]
    Deadlock(f64),

    #[error("output directory `{0}` already holds results; pass --force to overwrite")]
    OutputExists(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
