//! Position-selection rules. Each takes the reports of the current
//! candidate cells and returns the set to decode this step.
//!
//! Equal entropies always resolve toward the smaller position.

use crate::canvas::{MaskedSequence, Position, Span};
use crate::models::PositionReport;
use crate::policy::OrderPolicy;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("no candidate positions")]
    EmptyCandidates,
    #[error("selection size must be at least 1")]
    ZeroCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rationale {
    Leftmost,
    MinEntropy,
    FixedK,
    UnderThreshold,
    FallbackMinEntropy,
    FallbackLeftmost,
}

impl Rationale {
    pub fn is_fallback(self) -> bool {
        matches!(self, Rationale::FallbackMinEntropy | Rationale::FallbackLeftmost)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// Ascending, non-empty.
    pub positions: Vec<Position>,
    pub rationale: Rationale,
}

impl Selection {
    fn new(mut positions: Vec<Position>, rationale: Rationale) -> Self {
        positions.sort_unstable();
        Self { positions, rationale }
    }
}

fn by_entropy(a: &&PositionReport, b: &&PositionReport) -> Ordering {
    a.entropy.total_cmp(&b.entropy).then(a.position.cmp(&b.position))
}

fn sorted_by_entropy(candidates: &[PositionReport]) -> Vec<&PositionReport> {
    let mut v: Vec<&PositionReport> = candidates.iter().collect();
    v.sort_by(by_entropy);
    v
}

fn sorted_by_position(candidates: &[PositionReport]) -> Vec<&PositionReport> {
    let mut v: Vec<&PositionReport> = candidates.iter().collect();
    v.sort_by_key(|r| r.position);
    v
}

pub fn select_left_to_right(candidates: &[PositionReport]) -> Result<Selection, SchedulerError> {
    let p = candidates.iter().map(|r| r.position).min().ok_or(SchedulerError::EmptyCandidates)?;
    Ok(Selection::new(vec![p], Rationale::Leftmost))
}

/// The `min(k, n)` lowest-entropy candidates.
pub fn select_min_entropy(candidates: &[PositionReport], k: usize) -> Result<Selection, SchedulerError> {
    if candidates.is_empty() {
        return Err(SchedulerError::EmptyCandidates);
    }
    if k == 0 {
        return Err(SchedulerError::ZeroCount);
    }
    let chosen = sorted_by_entropy(candidates).into_iter().take(k).map(|r| r.position).collect();
    let rationale = if k == 1 { Rationale::MinEntropy } else { Rationale::FixedK };
    Ok(Selection::new(chosen, rationale))
}

/// Every candidate with entropy strictly under `lambda`, lowest first, at
/// most `k_max`; otherwise the single lowest-entropy candidate.
pub fn select_med(candidates: &[PositionReport], lambda: f64, k_max: usize) -> Result<Selection, SchedulerError> {
    if candidates.is_empty() {
        return Err(SchedulerError::EmptyCandidates);
    }
    if k_max == 0 {
        return Err(SchedulerError::ZeroCount);
    }
    let sorted = sorted_by_entropy(candidates);
    let under: Vec<Position> = sorted
        .iter()
        .take_while(|r| r.entropy < lambda)
        .take(k_max)
        .map(|r| r.position)
        .collect();
    if under.is_empty() {
        Ok(Selection::new(vec![sorted[0].position], Rationale::FallbackMinEntropy))
    } else {
        Ok(Selection::new(under, Rationale::UnderThreshold))
    }
}

/// A run of adjacent positions from the leftmost candidate, each with
/// entropy strictly under `lambda`, at most `k_max`. A gap or a cell at or
/// above `lambda` ends the run; if the leftmost fails, it is chosen alone.
pub fn select_ar_med(candidates: &[PositionReport], lambda: f64, k_max: usize) -> Result<Selection, SchedulerError> {
    if candidates.is_empty() {
        return Err(SchedulerError::EmptyCandidates);
    }
    if k_max == 0 {
        return Err(SchedulerError::ZeroCount);
    }
    let sorted = sorted_by_position(candidates);
    let first = sorted[0];
    if !(first.entropy < lambda) {
        return Ok(Selection::new(vec![first.position], Rationale::FallbackLeftmost));
    }
    let mut run = vec![first.position];
    for r in &sorted[1..] {
        if run.len() >= k_max || r.position != run[run.len() - 1] + 1 || !(r.entropy < lambda) {
            break;
        }
        run.push(r.position);
    }
    Ok(Selection::new(run, Rationale::UnderThreshold))
}

/// Applies an order policy to the candidates.
pub fn select(order: &OrderPolicy, candidates: &[PositionReport]) -> Result<Selection, SchedulerError> {
    match *order {
        OrderPolicy::LeftToRight => select_left_to_right(candidates),
        OrderPolicy::AnyOrderMinEntropy => select_min_entropy(candidates, 1),
        OrderPolicy::FixedK(k) => select_min_entropy(candidates, k),
        OrderPolicy::Med { lambda, k_max } => select_med(candidates, lambda, k_max),
        OrderPolicy::ArMed { lambda, k_max } => select_ar_med(candidates, lambda, k_max),
    }
}

/// Earliest block of `region`, aligned from `region.start`, holding a
/// masked cell outside `exclude`. Empty at `region.end` when none remains.
pub fn block_window_in(seq: &MaskedSequence, region: Span, block_size: usize, exclude: Option<Span>) -> Span {
    let block_size = block_size.max(1);
    let region = region.intersect(&Span::new(0, seq.len()));
    let first = region
        .positions()
        .find(|&p| seq.is_masked(p) && !exclude.is_some_and(|e| e.contains(p)));
    match first {
        None => Span::empty_at(region.end),
        Some(p) => {
            let start = region.start + (p - region.start) / block_size * block_size;
            Span::new(start, start.saturating_add(block_size).min(region.end))
        }
    }
}

/// Block window over the whole canvas.
pub fn block_window(seq: &MaskedSequence, block_size: usize) -> Span {
    block_window_in(seq, Span::new(0, seq.len()), block_size, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn reports(entropies: &[(Position, f64)]) -> Vec<PositionReport> {
        entropies
            .iter()
            .map(|&(position, entropy)| PositionReport {
                position,
                entropy,
                top: vec![],
                queried: BTreeMap::new(),
                sampled: None,
            })
            .collect()
    }

    #[test]
    fn left_to_right() {
        assert_eq!(select_left_to_right(&reports(&[(7, 0.0), (4, 1.0), (9, 0.0)])).unwrap().positions, vec![4]);
        assert_eq!(select_left_to_right(&reports(&[(11, 0.3)])).unwrap().positions, vec![11]);
        assert_eq!(select_left_to_right(&[]), Err(SchedulerError::EmptyCandidates));
    }

    #[test]
    fn min_entropy() {
        let c = reports(&[(4, 0.9), (7, 0.1), (9, 0.3)]);
        assert_eq!(select_min_entropy(&c, 1).unwrap().positions, vec![7]);
        assert_eq!(select_min_entropy(&c, 2).unwrap().positions, vec![7, 9]);
        assert_eq!(select_min_entropy(&c, 3).unwrap().positions, vec![4, 7, 9]);
        assert_eq!(select_min_entropy(&reports(&[(7, 0.2), (4, 0.2)]), 1).unwrap().positions, vec![4]);
        assert_eq!(select_min_entropy(&[], 1), Err(SchedulerError::EmptyCandidates));
    }

    #[test]
    fn med() {
        let c = reports(&[(3, 0.01), (5, 0.15), (7, 0.5), (9, 0.05)]);
        let s = select_med(&c, 0.2, 2).unwrap();
        assert_eq!(s.positions, vec![3, 9]);
        assert_eq!(s.rationale, Rationale::UnderThreshold);
        let s = select_med(&reports(&[(3, 0.9), (5, 0.4)]), 0.2, 4).unwrap();
        assert_eq!(s.positions, vec![5]);
        assert_eq!(s.rationale, Rationale::FallbackMinEntropy);
        assert_eq!(select_med(&c, f64::INFINITY, 4).unwrap().positions, vec![3, 5, 7, 9]);
    }

    #[test]
    fn ar_med() {
        let c = reports(&[(4, 0.1), (5, 0.15), (6, 0.3), (7, 0.05), (8, 0.0), (9, 0.0)]);
        assert_eq!(select_ar_med(&c, 0.2, 4).unwrap().positions, vec![4, 5]);
        let s = select_ar_med(&reports(&[(4, 0.9), (5, 0.0)]), 0.2, 4).unwrap();
        assert_eq!(s.positions, vec![4]);
        assert_eq!(s.rationale, Rationale::FallbackLeftmost);
        let gap = reports(&[(4, 0.0), (5, 0.0), (8, 0.0), (9, 0.0)]);
        assert_eq!(select_ar_med(&gap, 0.2, 4).unwrap().positions, vec![4, 5]);
        assert_eq!(select_ar_med(&gap, 0.2, 1).unwrap().positions, vec![4]);
    }

    #[test]
    fn windows() {
        let mut s = MaskedSequence::new(128, vec![]).unwrap();
        for p in 0..32 {
            s.fill(p, 0).unwrap();
        }
        assert_eq!(block_window(&s, 32), Span::new(32, 64));
        assert_eq!(block_window(&s, 128), Span::new(0, 128));
        assert_eq!(block_window(&s, 1), Span::new(32, 33));
        let full = MaskedSequence::from_cells(vec![Some(1); 4], vec![]).unwrap();
        assert!(block_window(&full, 2).is_empty());
    }

    #[test]
    fn windows_align_to_the_region_and_skip_excluded_cells() {
        let s = MaskedSequence::new(10, vec![]).unwrap();
        assert_eq!(block_window_in(&s, Span::new(6, 10), 3, None), Span::new(6, 9));
        assert_eq!(block_window_in(&s, Span::new(0, 10), 4, Some(Span::new(0, 5))), Span::new(4, 8));
    }
}
