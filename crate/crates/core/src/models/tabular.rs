//! Tabular masked diffusion model trained on the masked log-likelihood
//! objective.
//!
//! Each masked cell is predicted from a categorical table keyed by its
//! position and the pattern of the other cells (filled tokens and mask
//! marks). When that pattern space is too large the key falls back to the
//! position and the token immediately to its left. Unseen keys predict the
//! uniform distribution. The conditioning context is ignored.
//!
//! Training draws a uniform non-empty mask per sample and accumulates
//! counts of masked tokens under their keys. For fixed counts the objective
//! is maximized in closed form by the normalized counts, so each epoch moves
//! every table toward that maximizer by `learning_rate` (1.0 jumps to it).
//! A small pseudo-count keeps tokens absent from a key's counts at nonzero
//! probability, so the objective stays finite on the training data.

use super::{ConditionalModel, ModelError, PositionReport, QuerySpec};
use crate::canvas::{MaskedSequence, Position, TokenId};
use crate::info;
use crate::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const CHECKPOINT_VERSION: &str = "tabular-mdlm/1";

/// Pattern spaces larger than this fall back to previous-token keys.
pub const PATTERN_CAP: u128 = 1 << 20;

/// Masks are enumerated exactly for objective evaluation up to this length.
pub const EXACT_OBJECTIVE_MAX_LENGTH: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keying {
    Pattern,
    PreviousToken,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Pseudo-count added to every token of every table.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
}

pub const DEFAULT_SMOOTHING: f64 = 1e-3;

fn default_lr() -> f64 {
    1.0
}

fn default_smoothing() -> f64 {
    DEFAULT_SMOOTHING
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            seed,
            learning_rate: 1.0,
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularMDLM {
    length: usize,
    vocab: usize,
    keying: Keying,
    tables: BTreeMap<(Position, Vec<u32>), Vec<f64>>,
    step_count: usize,
    learning_rate: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    version: String,
    length: usize,
    vocab: usize,
    keying: Keying,
    step_count: usize,
    learning_rate: f64,
    tables: Vec<CheckpointTable>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointTable {
    position: Position,
    key: Vec<u32>,
    probs: Vec<f64>,
}

impl TabularMDLM {
    /// Untrained model: every conditional is uniform.
    pub fn new(length: usize, vocab: usize) -> Result<Self, ModelError> {
        if length == 0 || vocab < 2 {
            return Err(ModelError::InvalidModel(format!(
                "need length ≥ 1 and vocab ≥ 2, got {length} and {vocab}"
            )));
        }
        let patterns = (vocab as u128 + 1)
            .checked_pow(length as u32 - 1)
            .and_then(|n| n.checked_mul(length as u128));
        let keying = match patterns {
            Some(n) if n <= PATTERN_CAP => Keying::Pattern,
            _ => Keying::PreviousToken,
        };
        Ok(Self {
            length,
            vocab,
            keying,
            tables: BTreeMap::new(),
            step_count: 0,
            learning_rate: 1.0,
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn keying(&self) -> Keying {
        self.keying
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    /// Number of keys with a learned table.
    pub fn table_count(&self) -> usize {
        self.tables.len()
    }

    /// Table key for predicting `p` from `cells`; masked cells are `vocab`.
    fn key(&self, cells: &[Option<TokenId>], p: Position) -> Vec<u32> {
        let mask = self.vocab as u32;
        match self.keying {
            Keying::Pattern => cells
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != p)
                .map(|(_, c)| c.unwrap_or(mask))
                .collect(),
            Keying::PreviousToken => {
                let prev = if p == 0 { mask + 1 } else { cells[p - 1].unwrap_or(mask) };
                vec![prev]
            }
        }
    }

    /// Predicted distribution of cell `p` given the rest of `cells`.
    pub fn conditional(&self, cells: &[Option<TokenId>], p: Position) -> Vec<f64> {
        match self.tables.get(&(p, self.key(cells, p))) {
            Some(t) => t.clone(),
            None => vec![1.0 / self.vocab as f64; self.vocab],
        }
    }

    /// Mean over samples of Σ log p(x_i | unmasked) over masked cells,
    /// averaged over uniform non-empty masks. Exact over masks for short
    /// sequences, otherwise estimated from `draws` masks per sample.
    pub fn objective(&self, data: &[Vec<TokenId>], draws: usize, seed: u64) -> Result<f64, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyData);
        }
        self.check_data(data)?;
        let l = self.length;
        let mut total = 0.0;
        if l <= EXACT_OBJECTIVE_MAX_LENGTH {
            let masks = (1u64 << l) - 1;
            for x in data {
                let mut s = 0.0;
                for m in 1..=masks {
                    s += self.masked_loglik(x, m);
                }
                total += s / masks as f64;
            }
        } else {
            let mut rng = seed::rng(seed);
            for x in data {
                let mut s = 0.0;
                for _ in 0..draws.max(1) {
                    let m = draw_mask(l, &mut rng);
                    s += self.masked_loglik_bits(x, &m);
                }
                total += s / draws.max(1) as f64;
            }
        }
        Ok(total / data.len() as f64)
    }

    fn masked_loglik(&self, x: &[TokenId], mask: u64) -> f64 {
        let bits: Vec<bool> = (0..self.length).map(|i| mask >> i & 1 == 1).collect();
        self.masked_loglik_bits(x, &bits)
    }

    fn masked_loglik_bits(&self, x: &[TokenId], masked: &[bool]) -> f64 {
        let cells: Vec<Option<TokenId>> = x.iter().zip(masked).map(|(&t, &m)| (!m).then_some(t)).collect();
        (0..self.length)
            .filter(|&i| masked[i])
            .map(|i| {
                let p = self.conditional(&cells, i)[x[i] as usize];
                if p > 0.0 {
                    p.ln()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .sum()
    }

    fn check_data(&self, data: &[Vec<TokenId>]) -> Result<(), ModelError> {
        for x in data {
            if x.len() != self.length {
                return Err(ModelError::LengthMismatch {
                    expected: self.length,
                    got: x.len(),
                });
            }
            if let Some(&t) = x.iter().find(|&&t| t as usize >= self.vocab) {
                return Err(ModelError::VocabMismatch { token: t, vocab: self.vocab });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            length: self.length,
            vocab: self.vocab,
            keying: self.keying,
            step_count: self.step_count,
            learning_rate: self.learning_rate,
            tables: self
                .tables
                .iter()
                .map(|((p, k), t)| CheckpointTable {
                    position: *p,
                    key: k.clone(),
                    probs: t.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::InvalidModel(format!(
                "unsupported checkpoint version {:?}",
                ck.version
            )));
        }
        let mut m = Self::new(ck.length, ck.vocab)?;
        if m.keying != ck.keying {
            return Err(ModelError::InvalidModel("keying does not match model size".into()));
        }
        m.step_count = ck.step_count;
        m.learning_rate = ck.learning_rate;
        let key_len = match m.keying {
            Keying::Pattern => m.length - 1,
            Keying::PreviousToken => 1,
        };
        for t in ck.tables {
            let sum: f64 = t.probs.iter().sum();
            if t.position >= m.length
                || t.key.len() != key_len
                || t.probs.len() != m.vocab
                || t.probs.iter().any(|p| !(*p >= 0.0))
                || (sum - 1.0).abs() > 1e-9
            {
                return Err(ModelError::InvalidModel(format!(
                    "malformed table at position {}",
                    t.position
                )));
            }
            m.tables.insert((t.position, t.key), t.probs);
        }
        Ok(m)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Uniform non-empty subset of `0..l` as a membership vector.
fn draw_mask<R: Rng + ?Sized>(l: usize, rng: &mut R) -> Vec<bool> {
    if l < 64 {
        let m = rng.gen_range(1..(1u64 << l));
        (0..l).map(|i| m >> i & 1 == 1).collect()
    } else {
        loop {
            let bits: Vec<bool> = (0..l).map(|_| rng.gen()).collect();
            if bits.iter().any(|&b| b) {
                return bits;
            }
        }
    }
}

/// Trains a tabular model on `data` for `config.epochs` passes.
pub fn train_tabular_mdlm(data: &[Vec<TokenId>], vocab: usize, config: &TrainConfig) -> Result<TabularMDLM, ModelError> {
    let first = data.first().ok_or(ModelError::EmptyData)?;
    if !(config.learning_rate > 0.0 && config.learning_rate <= 1.0) {
        return Err(ModelError::InvalidModel(format!(
            "learning rate must be in (0, 1], got {}",
            config.learning_rate
        )));
    }
    if !(config.smoothing >= 0.0 && config.smoothing.is_finite()) {
        return Err(ModelError::InvalidModel(format!("smoothing must be ≥ 0, got {}", config.smoothing)));
    }
    let mut model = TabularMDLM::new(first.len(), vocab)?;
    model.check_data(data)?;
    model.learning_rate = config.learning_rate;
    let mut rng = seed::rng(config.seed);
    let mut counts: BTreeMap<(Position, Vec<u32>), Vec<f64>> = BTreeMap::new();
    for epoch in 0..config.epochs {
        for x in data {
            let mask = draw_mask(model.length, &mut rng);
            let cells: Vec<Option<TokenId>> = x.iter().zip(&mask).map(|(&t, &m)| (!m).then_some(t)).collect();
            for i in (0..model.length).filter(|&i| mask[i]) {
                let row = counts.entry((i, model.key(&cells, i))).or_insert_with(|| vec![0.0; vocab]);
                row[x[i] as usize] += 1.0;
            }
        }
        let lr = config.learning_rate;
        for (key, row) in &counts {
            let mut target: Vec<f64> = row.iter().map(|c| c + config.smoothing).collect();
            info::normalize(&mut target);
            let table = model
                .tables
                .entry(key.clone())
                .or_insert_with(|| vec![1.0 / vocab as f64; vocab]);
            for (p, t) in table.iter_mut().zip(&target) {
                *p = (1.0 - lr) * *p + lr * t;
            }
        }
        model.step_count += 1;
        log::debug!("epoch {epoch}: {} tables", model.tables.len());
    }
    Ok(model)
}

impl ConditionalModel for TabularMDLM {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn conditionals(&self, seq: &MaskedSequence, query: &QuerySpec) -> Result<Vec<PositionReport>, ModelError> {
        if seq.len() != self.length {
            return Err(ModelError::LengthMismatch {
                expected: self.length,
                got: seq.len(),
            });
        }
        for &p in query.query_tokens.keys() {
            if !seq.is_masked(p) {
                return Err(ModelError::NotMasked(p));
            }
        }
        seq.masked_positions(None)
            .into_iter()
            .map(|p| {
                let probs = self.conditional(seq.cells(), p);
                PositionReport::from_distribution(p, &probs, query.top_k, query.query_tokens.get(&p).map(|v| v.as_slice()))
            })
            .collect()
    }
}
