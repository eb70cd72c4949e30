use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnoError {
    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("unknown task {0}")]
    UnknownTask(u64),

    #[error("judgment {judgment:?} is not legal for {kind} tasks")]
    IllegalJudgment { kind: &'static str, judgment: String },

    #[error("session {session} already judged task {task}")]
    Duplicate { task: u64, session: String },

    #[error("task {0} already has its answer")]
    QuotaReached(u64),

    #[error("malformed request body: {0}")]
    BadRequest(String),

    #[error("journal line {line}: {message}")]
    Journal { line: usize, message: String },

    #[error("{0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Pairs(#[from] prefalign::error::Error),
}

pub type Result<T> = std::result::Result<T, AnnoError>;
