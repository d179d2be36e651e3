//! File-backed streaming inference.
//!
//! Input events (transactions, account sign-ups) are read from JSON-lines
//! topics, cached per account by the [`Watcher`], held by the count-or-age
//! [`Batcher`], and scored once the account satisfies its
//! [`ReadinessRule`]. Each scored transaction yields one prediction event.

mod batcher;
mod clock;
mod inference;
mod predictor;
mod topic;
mod watcher;

pub use batcher::{Batcher, BatcherPolicy};
pub use clock::{Clock, ManualClock, SystemClock};
pub use inference::{InferenceLoop, PollOutcome, StreamConfig};
pub use predictor::Predictor;
pub use topic::{format_probability, Event, EventKind, PredictionPayload, SignupPayload, TopicDir};
pub use watcher::{AccountState, Ingested, ReadinessRule, Watcher};
