//! Exact joint models small enough to enumerate.
//!
//! Conditionals come from summing the joint over every completion of the
//! masked cells, so these models are consistent by construction and serve as
//! the oracle everything else is checked against.

use super::{ConditionalModel, ModelError, PositionReport, QuerySpec};
use crate::canvas::{MaskedSequence, Position, TokenId};
use crate::info;
use crate::serde_ext::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const MAX_EXACT_LENGTH: usize = 8;
pub const MAX_EXACT_VOCAB: usize = 8;
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// A joint distribution that can enumerate the outcomes consistent with a
/// partially filled canvas.
pub trait JointSource: Send + Sync {
    fn length(&self) -> usize;
    fn vocab(&self) -> usize;

    /// Calls `visit(outcome, mass)` for every full outcome agreeing with the
    /// filled cells of `seq`. Masses are unnormalized with respect to the
    /// conditioning.
    fn visit_consistent(&self, seq: &MaskedSequence, visit: &mut dyn FnMut(&[TokenId], f64)) -> Result<(), ModelError>;

    fn check(&self, seq: &MaskedSequence) -> Result<(), ModelError> {
        if seq.len() != self.length() {
            return Err(ModelError::LengthMismatch {
                expected: self.length(),
                got: seq.len(),
            });
        }
        for &t in seq.cells().iter().flatten() {
            if t as usize >= self.vocab() {
                return Err(ModelError::VocabMismatch {
                    token: t,
                    vocab: self.vocab(),
                });
            }
        }
        Ok(())
    }
}

/// Per-masked-cell conditional distributions: `(position, probs)` ascending.
pub fn exact_marginals<J: JointSource + ?Sized>(
    joint: &J,
    seq: &MaskedSequence,
) -> Result<Vec<(Position, Vec<f64>)>, ModelError> {
    joint.check(seq)?;
    let masked = seq.masked_positions(None);
    let v = joint.vocab();
    let mut acc = vec![vec![0.0; v]; masked.len()];
    let mut total = 0.0;
    joint.visit_consistent(seq, &mut |x, w| {
        if w > 0.0 {
            total += w;
            for (row, &p) in acc.iter_mut().zip(&masked) {
                row[x[p] as usize] += w;
            }
        }
    })?;
    if !(total > 0.0) {
        return Err(ModelError::DegenerateConditional);
    }
    for row in &mut acc {
        for p in row.iter_mut() {
            *p /= total;
        }
    }
    Ok(masked.into_iter().zip(acc).collect())
}

/// Reports for every masked cell, from exact marginalization.
pub fn exact_conditionals<J: JointSource + ?Sized>(
    joint: &J,
    seq: &MaskedSequence,
    query: &QuerySpec,
) -> Result<Vec<PositionReport>, ModelError> {
    let marginals = exact_marginals(joint, seq)?;
    for &p in query.query_tokens.keys() {
        if !seq.is_masked(p) {
            return Err(ModelError::NotMasked(p));
        }
    }
    marginals
        .iter()
        .map(|(p, probs)| {
            PositionReport::from_distribution(*p, probs, query.top_k, query.query_tokens.get(p).map(|v| v.as_slice()))
        })
        .collect()
}

/// Joint distribution over assignments to a set of masked positions.
#[derive(Clone, Debug, PartialEq)]
pub struct JointAssignment {
    /// Ascending.
    pub positions: Vec<Position>,
    pub vocab: usize,
    /// Row-major over `positions`, first position most significant.
    pub probs: Vec<f64>,
}

impl JointAssignment {
    /// Probability of one assignment, in `positions` order.
    pub fn prob(&self, tokens: &[TokenId]) -> f64 {
        let idx = tokens.iter().fold(0usize, |acc, &t| acc * self.vocab + t as usize);
        self.probs[idx]
    }

    /// Marginal of the `i`-th position.
    pub fn marginal(&self, i: usize) -> Vec<f64> {
        let k = self.positions.len();
        let stride = self.vocab.pow((k - 1 - i) as u32);
        let mut m = vec![0.0; self.vocab];
        for (idx, &p) in self.probs.iter().enumerate() {
            m[(idx / stride) % self.vocab] += p;
        }
        m
    }

    pub fn entropy(&self) -> f64 {
        info::entropy(&self.probs)
    }

    pub fn marginal_entropy_sum(&self) -> f64 {
        (0..self.positions.len()).map(|i| info::entropy(&self.marginal(i))).sum()
    }

    /// Product of the per-position marginals, same layout as `probs`.
    pub fn product_of_marginals(&self) -> Vec<f64> {
        let k = self.positions.len();
        let marginals: Vec<Vec<f64>> = (0..k).map(|i| self.marginal(i)).collect();
        (0..self.probs.len())
            .map(|mut idx| {
                let mut p = 1.0;
                for m in marginals.iter().rev() {
                    p *= m[idx % self.vocab];
                    idx /= self.vocab;
                }
                p
            })
            .collect()
    }

    /// KL(joint ‖ product of marginals). Always finite: the product covers
    /// the joint's support.
    pub fn kl_to_product(&self) -> f64 {
        info::kl_divergence(&self.probs, &self.product_of_marginals()).unwrap_or(f64::INFINITY)
    }
}

/// Normalized joint over assignments to `positions`, marginalizing every
/// other masked cell.
pub fn exact_joint_conditional<J: JointSource + ?Sized>(
    joint: &J,
    seq: &MaskedSequence,
    positions: &[Position],
    cap: u128,
) -> Result<JointAssignment, ModelError> {
    joint.check(seq)?;
    let mut positions = positions.to_vec();
    positions.sort_unstable();
    positions.dedup();
    for &p in &positions {
        if !seq.is_masked(p) {
            return Err(ModelError::NotMasked(p));
        }
    }
    let v = joint.vocab();
    let size = (v as u128).checked_pow(positions.len() as u32).unwrap_or(u128::MAX);
    if size > cap {
        return Err(ModelError::CapExceeded { size, cap });
    }
    let mut probs = vec![0.0; size as usize];
    let mut total = 0.0;
    joint.visit_consistent(seq, &mut |x, w| {
        if w > 0.0 {
            total += w;
            let idx = positions.iter().fold(0usize, |acc, &p| acc * v + x[p] as usize);
            probs[idx] += w;
        }
    })?;
    if !(total > 0.0) {
        return Err(ModelError::DegenerateConditional);
    }
    for p in &mut probs {
        *p /= total;
    }
    Ok(JointAssignment {
        positions,
        vocab: v,
        probs,
    })
}

/// Dense joint table over `vocab^length` outcomes, optionally one per
/// context.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactJointModel {
    length: usize,
    vocab: usize,
    default: Option<Vec<f64>>,
    by_context: BTreeMap<Vec<TokenId>, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJoint {
    length: usize,
    vocab: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits: Option<Vec<Float>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    by_context: Vec<RawContextTable>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawContextTable {
    context: Vec<TokenId>,
    logits: Vec<Float>,
}

fn check_shape(length: usize, vocab: usize) -> Result<usize, ModelError> {
    if length == 0 || length > MAX_EXACT_LENGTH {
        return Err(ModelError::InvalidModel(format!(
            "length must be in 1..={MAX_EXACT_LENGTH}, got {length}"
        )));
    }
    if !(1..=MAX_EXACT_VOCAB).contains(&vocab) {
        return Err(ModelError::InvalidModel(format!(
            "vocab must be in 1..={MAX_EXACT_VOCAB}, got {vocab}"
        )));
    }
    Ok(vocab.pow(length as u32))
}

fn normalize_table(mut probs: Vec<f64>, expected: usize) -> Result<Vec<f64>, ModelError> {
    if probs.len() != expected {
        return Err(ModelError::InvalidModel(format!(
            "table has {} entries, expected {expected}",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(ModelError::InvalidModel("probabilities must be finite and non-negative".into()));
    }
    if info::normalize(&mut probs) <= 0.0 {
        return Err(ModelError::InvalidModel("table has zero total mass".into()));
    }
    Ok(probs)
}

fn probs_from_logits(logits: &[f64]) -> Result<Vec<f64>, ModelError> {
    if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(ModelError::InvalidModel("logits must be finite or -inf".into()));
    }
    if logits.iter().all(|l| *l == f64::NEG_INFINITY) {
        return Err(ModelError::InvalidModel("table has zero total mass".into()));
    }
    Ok(info::softmax(logits))
}

impl ExactJointModel {
    /// Context-free model from (unnormalized) probabilities.
    pub fn from_probs(length: usize, vocab: usize, probs: Vec<f64>) -> Result<Self, ModelError> {
        let n = check_shape(length, vocab)?;
        Ok(Self {
            length,
            vocab,
            default: Some(normalize_table(probs, n)?),
            by_context: BTreeMap::new(),
        })
    }

    /// Context-free model from log-weights; `-inf` marks zero mass.
    pub fn from_logits(length: usize, vocab: usize, logits: &[f64]) -> Result<Self, ModelError> {
        let n = check_shape(length, vocab)?;
        let probs = probs_from_logits(logits)?;
        Self::from_probs(length, vocab, normalize_table(probs, n)?)
    }

    /// Adds or replaces the table used for `context`.
    pub fn with_context(mut self, context: Vec<TokenId>, probs: Vec<f64>) -> Result<Self, ModelError> {
        let n = self.vocab.pow(self.length as u32);
        self.by_context.insert(context, normalize_table(probs, n)?);
        Ok(self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: RawJoint = serde_json::from_str(text)?;
        let n = check_shape(raw.length, raw.vocab)?;
        let unwrap = |v: Vec<Float>| v.into_iter().map(|f| f.0).collect::<Vec<f64>>();
        let default = match raw.logits {
            Some(l) => Some(normalize_table(probs_from_logits(&unwrap(l))?, n)?),
            None => None,
        };
        let mut by_context = BTreeMap::new();
        for t in raw.by_context {
            by_context.insert(t.context, normalize_table(probs_from_logits(&unwrap(t.logits))?, n)?);
        }
        if default.is_none() && by_context.is_empty() {
            return Err(ModelError::InvalidModel("no logits given".into()));
        }
        Ok(Self {
            length: raw.length,
            vocab: raw.vocab,
            default,
            by_context,
        })
    }

    pub fn to_json(&self) -> String {
        let logits = |p: &Vec<f64>| p.iter().map(|&x| Float(if x > 0.0 { x.ln() } else { f64::NEG_INFINITY })).collect();
        let raw = RawJoint {
            length: self.length,
            vocab: self.vocab,
            logits: self.default.as_ref().map(logits),
            by_context: self
                .by_context
                .iter()
                .map(|(c, p)| RawContextTable {
                    context: c.clone(),
                    logits: logits(p),
                })
                .collect(),
        };
        serde_json::to_string(&raw).expect("joint serializes")
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// The normalized table used for `context`.
    pub fn table(&self, context: &[TokenId]) -> Result<&[f64], ModelError> {
        self.by_context
            .get(context)
            .or(self.default.as_ref())
            .map(|v| v.as_slice())
            .ok_or_else(|| ModelError::UnknownContext(context.to_vec()))
    }

    /// Probability of a full outcome under `context`.
    pub fn prob(&self, context: &[TokenId], x: &[TokenId]) -> Result<f64, ModelError> {
        let idx = x.iter().fold(0usize, |acc, &t| acc * self.vocab + t as usize);
        Ok(self.table(context)?[idx])
    }

    /// Draws `n` i.i.d. outcomes under `context`.
    pub fn sample<R: Rng + ?Sized>(&self, context: &[TokenId], n: usize, rng: &mut R) -> Result<Vec<Vec<TokenId>>, ModelError> {
        let table = self.table(context)?;
        let mut cdf = Vec::with_capacity(table.len());
        let mut acc = 0.0;
        for &p in table {
            acc += p;
            cdf.push(acc);
        }
        let last = table.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        Ok((0..n)
            .map(|_| {
                let u = rng.gen::<f64>() * acc;
                let idx = cdf.partition_point(|&c| c <= u).min(last);
                self.decode_index(idx)
            })
            .collect())
    }

    /// Outcome at a row-major table index.
    pub fn decode_index(&self, mut idx: usize) -> Vec<TokenId> {
        let mut x = vec![0; self.length];
        for cell in x.iter_mut().rev() {
            *cell = (idx % self.vocab) as TokenId;
            idx /= self.vocab;
        }
        x
    }

    /// Random model for tests and benchmarks. `sharpness` > 1 makes the joint
    /// peakier; `zero_fraction` of outcomes get no mass (at least one keeps
    /// mass).
    pub fn random<R: Rng + ?Sized>(
        length: usize,
        vocab: usize,
        sharpness: f64,
        zero_fraction: f64,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let n = check_shape(length, vocab)?;
        let mut probs: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < zero_fraction {
                    0.0
                } else {
                    rng.gen::<f64>().powf(sharpness) + 1e-12
                }
            })
            .collect();
        if probs.iter().all(|&p| p == 0.0) {
            let i = rng.gen_range(0..n);
            probs[i] = 1.0;
        }
        Self::from_probs(length, vocab, probs)
    }
}

/// Enumerates the completions of the masked cells of `cells` over a dense
/// row-major table.
fn visit_dense(table: &[f64], vocab: usize, cells: &[Option<TokenId>], visit: &mut dyn FnMut(&[TokenId], f64)) {
    let l = cells.len();
    let strides: Vec<usize> = (0..l).map(|i| vocab.pow((l - 1 - i) as u32)).collect();
    let mut x: Vec<TokenId> = cells.iter().map(|c| c.unwrap_or(0)).collect();
    let masked: Vec<usize> = (0..l).filter(|&i| cells[i].is_none()).collect();
    let mut idx: usize = x.iter().zip(&strides).map(|(&t, s)| t as usize * s).sum();
    loop {
        visit(&x, table[idx]);
        let mut k = masked.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            let p = masked[k];
            if (x[p] as usize) + 1 < vocab {
                x[p] += 1;
                idx += strides[p];
                break;
            }
            idx -= x[p] as usize * strides[p];
            x[p] = 0;
        }
    }
}

impl JointSource for ExactJointModel {
    fn length(&self) -> usize {
        self.length
    }

    fn vocab(&self) -> usize {
        self.vocab
    }

    fn visit_consistent(&self, seq: &MaskedSequence, visit: &mut dyn FnMut(&[TokenId], f64)) -> Result<(), ModelError> {
        let table = self.table(seq.context())?;
        visit_dense(table, self.vocab, seq.cells(), visit);
        Ok(())
    }
}

impl ConditionalModel for ExactJointModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn conditionals(&self, seq: &MaskedSequence, query: &QuerySpec) -> Result<Vec<PositionReport>, ModelError> {
        exact_conditionals(self, seq, query)
    }
}

/// Sparse joint: an explicit list of outcomes with weights. Suits tasks
/// whose support is tiny compared with `vocab^length`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportJointModel {
    length: usize,
    vocab: usize,
    support: Vec<(Vec<TokenId>, f64)>,
}

impl SupportJointModel {
    pub fn new(length: usize, vocab: usize, support: Vec<(Vec<TokenId>, f64)>) -> Result<Self, ModelError> {
        if length == 0 || vocab == 0 {
            return Err(ModelError::InvalidModel("length and vocab must be positive".into()));
        }
        let mut total = 0.0;
        for (x, w) in &support {
            if x.len() != length || x.iter().any(|&t| t as usize >= vocab) {
                return Err(ModelError::InvalidModel(format!("outcome {x:?} does not fit length {length}, vocab {vocab}")));
            }
            if !(w.is_finite() && *w >= 0.0) {
                return Err(ModelError::InvalidModel(format!("weight {w} is not a finite non-negative number")));
            }
            total += w;
        }
        if !(total > 0.0) {
            return Err(ModelError::InvalidModel("support has zero total mass".into()));
        }
        let support = support.into_iter().map(|(x, w)| (x, w / total)).collect();
        Ok(Self { length, vocab, support })
    }

    pub fn support(&self) -> &[(Vec<TokenId>, f64)] {
        &self.support
    }

    /// Most probable outcome consistent with the filled cells; ties go to the
    /// lexicographically smallest.
    pub fn map_completion(&self, seq: &MaskedSequence) -> Option<Vec<TokenId>> {
        let mut best: Option<(&Vec<TokenId>, f64)> = None;
        for (x, w) in &self.support {
            if *w <= 0.0 || !consistent(seq.cells(), x) {
                continue;
            }
            best = match best {
                Some((bx, bw)) if bw > *w || (bw == *w && bx <= x) => Some((bx, bw)),
                _ => Some((x, *w)),
            };
        }
        best.map(|(x, _)| x.clone())
    }
}

fn consistent(cells: &[Option<TokenId>], x: &[TokenId]) -> bool {
    cells.iter().zip(x).all(|(c, &t)| c.map_or(true, |c| c == t))
}

impl JointSource for SupportJointModel {
    fn length(&self) -> usize {
        self.length
    }

    fn vocab(&self) -> usize {
        self.vocab
    }

    fn visit_consistent(&self, seq: &MaskedSequence, visit: &mut dyn FnMut(&[TokenId], f64)) -> Result<(), ModelError> {
        for (x, w) in &self.support {
            if consistent(seq.cells(), x) {
                visit(x, *w);
            }
        }
        Ok(())
    }
}

impl ConditionalModel for SupportJointModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn conditionals(&self, seq: &MaskedSequence, query: &QuerySpec) -> Result<Vec<PositionReport>, ModelError> {
        exact_conditionals(self, seq, query)
    }
}
