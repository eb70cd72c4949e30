//! Preference alignment for toy text-to-speech models.
//!
//! The crate covers three generative paradigms over a small synthetic
//! text-to-speech domain: an autoregressive token model, a flow-matching
//! velocity field and a masked generative token predictor. Each of them gets
//! a DPO-style objective with hand-derived gradients, and the surrounding
//! machinery builds WER-ranked preference pairs, trains and evaluates models,
//! and runs iterative alignment rounds.
//!
//! Module map:
//!
//! - [`numerics`]: dense arrays, stable log-probability helpers, AdamW and the
//!   inverse square root schedule, seeded random streams, finite differences.
//! - [`toymodels`]: the synthetic channel and the three toy models.
//! - [`dpo`]: reward-model, DPO, flow-matching and masked-model objectives.
//! - [`pairgen`]: WER, intra/inter/perturbed pair construction and the arena.
//! - [`pipeline`]: corpus construction, training loops, evaluation,
//!   iterative alignment, configuration and dataset persistence.

pub mod dpo;
pub mod error;
pub mod numerics;
pub mod pairgen;
pub mod pipeline;
pub mod toymodels;

pub use error::{Error, Result};
