//! Decoding-behavior statistics: how far from the leftmost masked cell each
//! token is decoded, and when the answer first appears.

use crate::canvas::{Position, Vocab};
use crate::template::Template;
use crate::trace::DecodeTrace;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorStats {
    /// Fraction of non-EOS decode events at the leftmost masked cell.
    pub pct_leftmost: f64,
    /// Mean of `position - leftmost masked position` over non-EOS events.
    pub mean_dist_left: f64,
    /// Decoded tokens other than EOS.
    pub non_eos_tokens: usize,
    /// First step that fills an answer cell.
    pub answer_step: Option<usize>,
    pub nfe: usize,
}

/// Statistics of a finished trace. The leftmost masked cell at step `t` is
/// the smallest position decoded at step `t` or later, or skipped.
/// Traces with no non-EOS events report `pct_leftmost = 1`.
pub fn behavior_stats(trace: &DecodeTrace, vocab: &Vocab, template: Option<&Template>) -> BehaviorStats {
    let n = trace.steps.len();
    let skipped_min = trace.skipped.iter().copied().min().unwrap_or(Position::MAX);
    let mut leftmost = vec![skipped_min; n + 1];
    for t in (0..n).rev() {
        let here = trace.steps[t].positions().min().unwrap_or(Position::MAX);
        leftmost[t] = leftmost[t + 1].min(here);
    }
    let mut events = 0usize;
    let mut at_left = 0usize;
    let mut dist = 0usize;
    for (t, step) in trace.steps.iter().enumerate() {
        for c in step.decoded.iter().filter(|c| c.token != vocab.eos_id) {
            events += 1;
            let d = c.position - leftmost[t];
            if d == 0 {
                at_left += 1;
            }
            dist += d;
        }
    }
    let answer_step = template.and_then(|tpl| {
        trace
            .steps
            .iter()
            .position(|s| s.positions().any(|p| tpl.answer_span.contains(p)))
    });
    BehaviorStats {
        pct_leftmost: if events == 0 { 1.0 } else { at_left as f64 / events as f64 },
        mean_dist_left: if events == 0 { 0.0 } else { dist as f64 / events as f64 },
        non_eos_tokens: events,
        answer_step,
        nfe: trace.nfe,
    }
}
