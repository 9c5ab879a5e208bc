//! Re-applying recorded traces.

use super::EngineError;
use crate::canvas::{MaskedSequence, Vocab};
use crate::models::{ConditionalModel, QuerySpec};
use crate::trace::DecodeTrace;

const LOGPROB_TOLERANCE: f64 = 1e-9;

fn check_structure(trace: &DecodeTrace) -> Result<(), EngineError> {
    if trace.nfe != trace.steps.len() {
        return Err(EngineError::InconsistentTrace(format!(
            "nfe {} but {} steps",
            trace.nfe,
            trace.steps.len()
        )));
    }
    for (i, step) in trace.steps.iter().enumerate() {
        if step.decoded.is_empty() {
            return Err(EngineError::InconsistentTrace(format!("step {i} decodes nothing")));
        }
        if step.decoded.windows(2).any(|w| w[0].position >= w[1].position) {
            return Err(EngineError::InconsistentTrace(format!("step {i} positions are not strictly ascending")));
        }
    }
    let total: f64 = trace.steps.iter().flat_map(|s| &s.decoded).map(|c| c.logprob).sum();
    let close = total == trace.schedule_logprob || (total - trace.schedule_logprob).abs() <= 1e-9 * (1.0 + total.abs());
    if !close {
        return Err(EngineError::InconsistentTrace(format!(
            "schedule log-prob {} but steps sum to {total}",
            trace.schedule_logprob
        )));
    }
    Ok(())
}

/// Applies the recorded fills to `initial`, then pads the skipped cells.
/// Fails if a step touches a filled cell.
pub fn replay(trace: &DecodeTrace, initial: &MaskedSequence, vocab: &Vocab) -> Result<MaskedSequence, EngineError> {
    check_structure(trace)?;
    let mut seq = initial.clone();
    for (i, step) in trace.steps.iter().enumerate() {
        for c in &step.decoded {
            if !vocab.contains(c.token) {
                return Err(EngineError::InconsistentTrace(format!("step {i}: token {} outside the vocabulary", c.token)));
            }
            seq.fill(c.position, c.token)
                .map_err(|e| EngineError::InconsistentTrace(format!("step {i}: {e}")))?;
        }
    }
    for &p in &trace.skipped {
        seq.fill(p, vocab.pad_id)
            .map_err(|e| EngineError::InconsistentTrace(format!("skipped cell: {e}")))?;
    }
    Ok(seq)
}

/// Like [`replay`], but re-queries `model` before every step and checks the
/// recorded log-probs and entropies against it.
pub fn replay_verified(
    trace: &DecodeTrace,
    initial: &MaskedSequence,
    vocab: &Vocab,
    model: &dyn ConditionalModel,
) -> Result<MaskedSequence, EngineError> {
    check_structure(trace)?;
    let mut seq = initial.clone();
    for (i, step) in trace.steps.iter().enumerate() {
        let mut query = QuerySpec::top(1);
        for c in &step.decoded {
            if !seq.is_masked(c.position) {
                return Err(EngineError::InconsistentTrace(format!("step {i}: position {} is not masked", c.position)));
            }
            query = query.with_query(c.position, vec![c.token]);
        }
        let reports = model.conditionals(&seq, &query)?;
        for c in &step.decoded {
            let r = reports
                .iter()
                .find(|r| r.position == c.position)
                .ok_or_else(|| EngineError::InconsistentTrace(format!("step {i}: no report for {}", c.position)))?;
            let lp = r.queried.get(&c.token).copied().unwrap_or(f64::NEG_INFINITY);
            if (lp - c.logprob).abs() > LOGPROB_TOLERANCE || (r.entropy - c.entropy).abs() > LOGPROB_TOLERANCE {
                return Err(EngineError::InconsistentTrace(format!(
                    "step {i}: token {} at {} has log-prob {lp}, trace says {}",
                    c.token, c.position, c.logprob
                )));
            }
        }
        for c in &step.decoded {
            seq.fill(c.position, c.token)?;
        }
    }
    for &p in &trace.skipped {
        seq.fill(p, vocab.pad_id)
            .map_err(|e| EngineError::InconsistentTrace(format!("skipped cell: {e}")))?;
    }
    Ok(seq)
}
