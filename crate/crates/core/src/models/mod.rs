//! Conditional models: the contract the engine drives, plus reference
//! implementations.
//!
//! A model answers one kind of query: given a canvas, report the
//! distribution of every masked cell conditioned on the filled cells and
//! the context. One call is one function evaluation (NFE).

pub mod exact;
pub mod remote;
pub mod tabular;
pub mod wire;

use crate::canvas::{CanvasError, MaskedSequence, Position, TokenId};
use crate::info;
use crate::serde_ext::{float, float_map, token_logprobs};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub use exact::{exact_conditionals, exact_joint_conditional, ExactJointModel, JointAssignment, JointSource, SupportJointModel};
pub use remote::{Endpoint, RemoteModel};
pub use tabular::{train_tabular_mdlm, TabularMDLM, TrainConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence length {got} does not match model length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("token {token} is outside the model vocabulary of size {vocab}")]
    VocabMismatch { token: TokenId, vocab: usize },
    #[error("conditionals undefined: the filled cells have zero probability")]
    DegenerateConditional,
    #[error("enumeration of {size} outcomes exceeds the cap of {cap}")]
    CapExceeded { size: u128, cap: u128 },
    #[error("position {0} is not masked")]
    NotMasked(Position),
    #[error("no distribution for context {0:?}")]
    UnknownContext(Vec<TokenId>),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("training data is empty")]
    EmptyData,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("timed out waiting for the model server")]
    Timeout,
    #[error("model server error: {0}")]
    Server(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Canvas(#[from] CanvasError),
}

/// Server-side sampling request.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    #[serde(with = "float")]
    pub temperature: f64,
    pub seed: u64,
}

/// What a caller wants back from one model call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub top_k: usize,
    /// Tokens whose log-probs must be reported at a position, whether or not
    /// they make the top list.
    #[serde(default)]
    pub query_tokens: BTreeMap<Position, Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleSpec>,
}

impl QuerySpec {
    pub fn top(top_k: usize) -> Self {
        Self {
            top_k,
            query_tokens: BTreeMap::new(),
            sample: None,
        }
    }

    pub fn with_query(mut self, position: Position, tokens: Vec<TokenId>) -> Self {
        self.query_tokens.insert(position, tokens);
        self
    }
}

impl Default for QuerySpec {
    fn default() -> Self {
        Self::top(crate::policy::DEFAULT_TOP_K)
    }
}

/// Model output for one masked cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionReport {
    pub position: Position,
    /// Entropy of the full distribution, in nats.
    pub entropy: f64,
    /// `(token, log-prob)` in descending probability, ties by token id.
    #[serde(with = "token_logprobs")]
    pub top: Vec<(TokenId, f64)>,
    #[serde(default, with = "float_map")]
    pub queried: BTreeMap<TokenId, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled: Option<TokenId>,
}

impl PositionReport {
    /// Builds a report from a full normalized distribution over token ids.
    pub fn from_distribution(
        position: Position,
        probs: &[f64],
        top_k: usize,
        query: Option<&[TokenId]>,
    ) -> Result<Self, ModelError> {
        let mut ranked: Vec<(TokenId, f64)> = probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(t, &p)| (t as TokenId, p))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        let top = ranked.into_iter().map(|(t, p)| (t, p.ln())).collect();
        let mut queried = BTreeMap::new();
        for &t in query.unwrap_or(&[]) {
            let p = *probs.get(t as usize).ok_or(ModelError::VocabMismatch {
                token: t,
                vocab: probs.len(),
            })?;
            queried.insert(t, if p > 0.0 { p.ln() } else { f64::NEG_INFINITY });
        }
        Ok(Self {
            position,
            entropy: info::entropy(probs),
            top,
            queried,
            sampled: None,
        })
    }

    /// Log-prob of `token` if the report carries it.
    pub fn logprob_of(&self, token: TokenId) -> Option<f64> {
        self.top
            .iter()
            .find(|(t, _)| *t == token)
            .map(|&(_, lp)| lp)
            .or_else(|| self.queried.get(&token).copied())
    }

    /// Most probable token; ties go to the smaller id.
    pub fn argmax(&self) -> Option<TokenId> {
        self.top
            .iter()
            .copied()
            .reduce(|best, cand| {
                if cand.1 > best.1 || (cand.1 == best.1 && cand.0 < best.0) {
                    cand
                } else {
                    best
                }
            })
            .map(|(t, _)| t)
    }

    /// Probability mass covered by the top list.
    pub fn top_mass(&self) -> f64 {
        self.top.iter().map(|&(_, lp)| lp.exp()).sum()
    }

    /// Checks the report invariants; `tolerance` bounds normalization slack.
    pub fn validate(&self, tolerance: f64) -> Result<(), String> {
        if !(self.entropy >= -tolerance) || !self.entropy.is_finite() {
            return Err(format!("position {}: entropy {} is negative or non-finite", self.position, self.entropy));
        }
        if self.top.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(format!("position {}: top list is not sorted descending", self.position));
        }
        if self.top.iter().any(|&(_, lp)| lp.is_nan() || lp > tolerance) {
            return Err(format!("position {}: top log-prob above zero", self.position));
        }
        let mass = self.top_mass();
        if mass > 1.0 + tolerance {
            return Err(format!("position {}: top list mass {mass} exceeds 1", self.position));
        }
        if let Some((t, lp)) = self.queried.iter().find(|(_, lp)| lp.is_nan() || **lp > tolerance) {
            return Err(format!("position {}: queried token {t} has log-prob {lp} > 0", self.position));
        }
        Ok(())
    }
}

/// Draws a token from the report's top list at `temperature`, by inverse
/// CDF over the list in its stored order. `None` when the list is empty.
pub fn draw_token<R: Rng + ?Sized>(report: &PositionReport, temperature: f64, rng: &mut R) -> Option<TokenId> {
    let probs: Vec<f64> = report.top.iter().map(|&(_, lp)| lp.exp()).collect();
    let probs = info::temper(&probs, temperature);
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (&(t, _), &p) in report.top.iter().zip(&probs) {
        acc += p;
        if u < acc {
            return Some(t);
        }
    }
    report.top.iter().zip(&probs).rev().find(|(_, &p)| p > 0.0).map(|(&(t, _), _)| t)
}

/// The one capability a decoder needs from a model.
pub trait ConditionalModel: Send + Sync {
    /// Number of token ids the model distributes over.
    fn vocab_size(&self) -> usize;

    /// Reports for every masked cell of `seq`, ascending by position.
    fn conditionals(&self, seq: &MaskedSequence, query: &QuerySpec) -> Result<Vec<PositionReport>, ModelError>;

    /// Whether the model samples tokens itself when `query.sample` is set.
    fn samples_server_side(&self) -> bool {
        false
    }
}

impl<M: ConditionalModel + ?Sized> ConditionalModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn conditionals(&self, seq: &MaskedSequence, query: &QuerySpec) -> Result<Vec<PositionReport>, ModelError> {
        (**self).conditionals(seq, query)
    }

    fn samples_server_side(&self) -> bool {
        (**self).samples_server_side()
    }
}

impl<M: ConditionalModel + ?Sized> ConditionalModel for std::sync::Arc<M> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn conditionals(&self, seq: &MaskedSequence, query: &QuerySpec) -> Result<Vec<PositionReport>, ModelError> {
        (**self).conditionals(seq, query)
    }

    fn samples_server_side(&self) -> bool {
        (**self).samples_server_side()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_from_distribution_orders_and_queries() {
        let r = PositionReport::from_distribution(3, &[0.2, 0.0, 0.4, 0.4], 2, Some(&[1, 0])).unwrap();
        assert_eq!(r.top.iter().map(|t| t.0).collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(r.argmax(), Some(2));
        assert_eq!(r.queried[&1], f64::NEG_INFINITY);
        assert!((r.queried[&0] - 0.2f64.ln()).abs() < 1e-15);
        assert!(r.validate(1e-9).is_ok());
        assert!(PositionReport::from_distribution(0, &[1.0], 1, Some(&[5])).is_err());
    }

    #[test]
    fn validate_rejects_overfull_top() {
        let r = PositionReport {
            position: 0,
            entropy: 0.5,
            top: vec![(0, 0.7f64.ln()), (1, 0.6f64.ln())],
            queried: BTreeMap::new(),
            sampled: None,
        };
        assert!(r.validate(1e-6).is_err());
    }

    #[test]
    fn draw_follows_the_distribution() {
        let r = PositionReport::from_distribution(0, &[0.25, 0.75], 2, None).unwrap();
        let mut rng = crate::seed::rng(4);
        let ones = (0..20_000).filter(|_| draw_token(&r, 1.0, &mut rng) == Some(1)).count();
        assert!((ones as f64 / 20_000.0 - 0.75).abs() < 0.02);
        let sharp = (0..2_000).filter(|_| draw_token(&r, 0.05, &mut rng) == Some(1)).count();
        assert_eq!(sharp, 2_000);
    }

    #[test]
    fn report_json_carries_neg_inf() {
        let r = PositionReport::from_distribution(0, &[1.0, 0.0], 4, Some(&[1])).unwrap();
        let j = serde_json::to_string(&r).unwrap();
        let back: PositionReport = serde_json::from_str(&j).unwrap();
        assert_eq!(back, r);
    }
}
