//! Step-by-step decode records.

use crate::canvas::{Position, TokenId};
use crate::serde_ext::{float, float_opt};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// One cell filled during a step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedCell {
    pub position: Position,
    pub token: TokenId,
    /// Model log-probability of `token` at this step (untempered).
    #[serde(with = "float")]
    pub logprob: f64,
    pub entropy: f64,
}

/// Everything decided by one model call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Sorted by position.
    pub decoded: Vec<DecodedCell>,
    /// Sum of masked answer-cell entropies seen by this call.
    #[serde(default, with = "float_opt", skip_serializing_if = "Option::is_none")]
    pub answer_hub: Option<f64>,
    pub block_index: usize,
}

impl StepRecord {
    pub fn positions(&self) -> impl Iterator<Item = Position> + '_ {
        self.decoded.iter().map(|c| c.position)
    }

    pub fn entropy_sum(&self) -> f64 {
        self.decoded.iter().map(|c| c.entropy).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    Completed,
    /// The answer-entropy bound fell below gamma at this step index.
    EarlyExit(usize),
    MaxSteps,
}

/// Complete record of a decode session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub steps: Vec<StepRecord>,
    /// Model calls made; equals `steps.len()`.
    pub nfe: usize,
    pub exit: ExitReason,
    /// Σ log-probs of chosen tokens, factorized within a step.
    #[serde(with = "float")]
    pub schedule_logprob: f64,
    /// Reasoning cells filled with the pad token after an early exit.
    #[serde(default)]
    pub skipped: Vec<Position>,
}

impl DecodeTrace {
    pub fn new() -> Self {
        Self {
            steps: Vec::new(),
            nfe: 0,
            exit: ExitReason::Completed,
            schedule_logprob: 0.0,
            skipped: Vec::new(),
        }
    }

    pub fn push(&mut self, step: StepRecord) {
        self.schedule_logprob += step.decoded.iter().map(|c| c.logprob).sum::<f64>();
        self.steps.push(step);
        self.nfe += 1;
    }

    /// Every decoded position in decode order.
    pub fn decoded_positions(&self) -> impl Iterator<Item = Position> + '_ {
        self.steps.iter().flat_map(|s| s.positions())
    }

    pub fn decoded_count(&self) -> usize {
        self.steps.iter().map(|s| s.decoded.len()).sum()
    }

    /// Writes the trace as one JSON line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")
    }
}

impl Default for DecodeTrace {
    fn default() -> Self {
        Self::new()
    }
}
