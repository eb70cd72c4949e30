//! Annotation service: task creation, a journaled store, aggregates and an
//! HTTP API for human judgments of preference pairs.

pub mod aggregate;
pub mod error;
pub mod http;
pub mod journal;
pub mod model;
pub mod store;
pub mod tasks;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{AnnoError, Result};
pub use model::{AnnotationRecord, AnnotationTask, Judgment, PairSide, TaskKind};
pub use store::{AnnoService, Catalog, SubmitBody};
