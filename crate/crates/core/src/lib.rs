//! Inference engine for masked diffusion language models.
//!
//! A decode session starts from a canvas of masked cells, queries a
//! [`models::ConditionalModel`] for the conditional distribution of every
//! masked cell, lets a scheduler pick which cells to fill, and repeats until
//! nothing is masked. Every step is recorded in a [`trace::DecodeTrace`].

pub mod canvas;
pub mod engine;
pub mod info;
pub mod metrics;
pub mod models;
pub mod policy;
pub mod schedulers;
pub mod scoring;
pub mod seed;
pub mod serde_ext;
pub mod template;
pub mod trace;

pub use engine::{EngineError, Session};
pub use canvas::{CanvasError, MaskedSequence, Position, Span, TokenId, Vocab};
pub use policy::{DecodePolicy, OrderPolicy, PolicyError, TokenChoice};
pub use template::{new_canvas, Template};
pub use trace::{DecodeTrace, DecodedCell, ExitReason, StepRecord};
