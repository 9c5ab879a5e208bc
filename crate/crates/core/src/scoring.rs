//! Answer-aware trace scoring and KL diagnostics between schedules.

use crate::canvas::{CanvasError, MaskedSequence, Position, TokenId, Vocab};
use crate::engine::{induced_distribution, EngineError};
use crate::models::exact::{exact_joint_conditional, JointSource, DEFAULT_ENUMERATION_CAP};
use crate::models::{ConditionalModel, ModelError, QuerySpec};
use crate::policy::DecodePolicy;
use crate::template::{new_canvas, Template};
use crate::trace::{DecodeTrace, StepRecord};
use crate::serde_ext::{float, float_vec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("gold answer has {got} tokens, answer span holds {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("answer cell {0} is not masked")]
    AnswerNotMasked(Position),
    #[error("reasoning chain has {got} tokens, reasoning span holds {expected}")]
    ChainLength { expected: usize, got: usize },
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("first schedule puts mass {mass} on an outcome the second never produces")]
    SupportMismatch { mass: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Canvas(#[from] CanvasError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// φ and H_UB for one partial reasoning trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceScore {
    /// Σ_j log p(a_j = a*_j | revealed reasoning, context), in nats.
    #[serde(with = "float")]
    pub phi: f64,
    /// Σ_j H(a_j | revealed reasoning, context), in nats.
    pub hub: f64,
    /// Number of revealed reasoning cells.
    pub step_index: usize,
    pub fraction_unmasked: f64,
}

/// Scores the canvas against the gold answer with one model call.
pub fn phi_score(
    model: &dyn ConditionalModel,
    canvas: &MaskedSequence,
    template: &Template,
    gold: &[TokenId],
) -> Result<TraceScore, ScoringError> {
    let span = template.answer_span;
    if gold.len() != span.len() {
        return Err(ScoringError::LengthMismatch {
            expected: span.len(),
            got: gold.len(),
        });
    }
    let mut query = QuerySpec::top(1);
    for (p, &g) in span.positions().zip(gold) {
        if !canvas.is_masked(p) {
            return Err(ScoringError::AnswerNotMasked(p));
        }
        query = query.with_query(p, vec![g]);
    }
    let reports = model.conditionals(canvas, &query)?;
    let mut phi = 0.0;
    let mut hub = 0.0;
    for (p, g) in span.positions().zip(gold) {
        let r = reports
            .iter()
            .find(|r| r.position == p)
            .ok_or_else(|| ModelError::Protocol(format!("no report for answer cell {p}")))?;
        phi += r.queried.get(g).copied().unwrap_or(f64::NEG_INFINITY);
        hub += r.entropy;
    }
    let rs = template.reasoning_span;
    let revealed = rs.positions().filter(|&p| !canvas.is_masked(p)).count();
    Ok(TraceScore {
        phi,
        hub,
        step_index: revealed,
        fraction_unmasked: if rs.is_empty() { 1.0 } else { revealed as f64 / rs.len() as f64 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainScore {
    #[serde(with = "float_vec")]
    pub phi_curve: Vec<f64>,
    pub hub_curve: Vec<f64>,
    /// Mean of `phi_curve`.
    #[serde(with = "float")]
    pub mean_score: f64,
}

/// Reveals the chain left to right, `t = 0, stride, 2·stride, …, ≤ |r|`,
/// scoring φ at each prefix, and averages.
pub fn chain_filter_score(
    model: &dyn ConditionalModel,
    context: &[TokenId],
    template: &Template,
    length: usize,
    reasoning: &[TokenId],
    gold: &[TokenId],
    stride: usize,
) -> Result<ChainScore, ScoringError> {
    if stride == 0 {
        return Err(ScoringError::ZeroStride);
    }
    let rs = template.reasoning_span;
    if reasoning.len() != rs.len() {
        return Err(ScoringError::ChainLength {
            expected: rs.len(),
            got: reasoning.len(),
        });
    }
    let mut layout = template.clone();
    layout.prefilled_answer = None;
    let base = new_canvas(context.to_vec(), &layout, length)?;
    let mut phi_curve = Vec::new();
    let mut hub_curve = Vec::new();
    for t in (0..=reasoning.len()).step_by(stride) {
        let mut canvas = base.clone();
        for (p, &tok) in rs.positions().zip(reasoning).take(t) {
            canvas.fill(p, tok)?;
        }
        let s = phi_score(model, &canvas, &layout, gold)?;
        phi_curve.push(s.phi);
        hub_curve.push(s.hub);
    }
    let mean_score = phi_curve.iter().sum::<f64>() / phi_curve.len() as f64;
    Ok(ChainScore {
        phi_curve,
        hub_curve,
        mean_score,
    })
}

/// KL(induced_a ‖ induced_b) between the output distributions of two
/// policies, by exhaustive enumeration of both decision trees.
#[allow(clippy::too_many_arguments)]
pub fn schedule_kl_exact(
    model: &dyn ConditionalModel,
    canvas: &MaskedSequence,
    template: Option<&Template>,
    policy_a: &DecodePolicy,
    policy_b: &DecodePolicy,
    vocab: &Vocab,
    cap: usize,
) -> Result<f64, ScoringError> {
    let a = induced_distribution(model, canvas, template, policy_a, vocab, cap)?;
    let b = induced_distribution(model, canvas, template, policy_b, vocab, cap)?;
    let mut kl = 0.0;
    for (x, &pa) in &a {
        if pa <= 0.0 {
            continue;
        }
        match b.get(x) {
            Some(&pb) if pb > 0.0 => kl += pa * (pa / pb).ln(),
            _ => return Err(ScoringError::SupportMismatch { mass: pa }),
        }
    }
    Ok(kl.max(0.0))
}

/// Entropy budget of one step: Σ entropies of its decoded cells. Bounds
/// the KL between the step's true joint and the factorized draw.
pub fn per_step_kl_bound(step: &StepRecord) -> f64 {
    step.entropy_sum()
}

/// Exact KL(joint over `positions` ‖ product of marginals) on `canvas`.
pub fn step_kl_exact<J: JointSource + ?Sized>(
    joint: &J,
    canvas: &MaskedSequence,
    positions: &[Position],
) -> Result<f64, ScoringError> {
    Ok(exact_joint_conditional(joint, canvas, positions, DEFAULT_ENUMERATION_CAP)?.kl_to_product())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepKl {
    pub step: usize,
    pub size: usize,
    pub bound: f64,
    pub exact: f64,
}

/// Exact KL and entropy budget for every step of a trace on an exact model.
pub fn trace_kl<J: JointSource + ?Sized>(
    joint: &J,
    initial: &MaskedSequence,
    trace: &DecodeTrace,
) -> Result<Vec<StepKl>, ScoringError> {
    let mut seq = initial.clone();
    let mut out = Vec::with_capacity(trace.steps.len());
    for (i, step) in trace.steps.iter().enumerate() {
        let positions: Vec<Position> = step.positions().collect();
        out.push(StepKl {
            step: i,
            size: positions.len(),
            bound: per_step_kl_bound(step),
            exact: step_kl_exact(joint, &seq, &positions)?,
        });
        for c in &step.decoded {
            seq.fill(c.position, c.token)?;
        }
    }
    Ok(out)
}

/// Area under the ROC curve for scores where higher means positive. Ties
/// count one half.
pub fn auc(positives: &[f64], negatives: &[f64]) -> f64 {
    if positives.is_empty() || negatives.is_empty() {
        return f64::NAN;
    }
    let mut wins = 0.0;
    for &p in positives {
        for &n in negatives {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (positives.len() * negatives.len()) as f64
}
