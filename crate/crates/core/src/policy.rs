//! Scheduler configuration.

use crate::serde_ext::{float, float_opt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("block_size must be at least 1")]
    ZeroBlock,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k_max must be at least 1")]
    ZeroKMax,
    #[error("lambda must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("early-exit gamma must be non-negative, got {0}")]
    NegativeGamma(f64),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("max_steps must be at least 1")]
    ZeroMaxSteps,
    #[error("top_k must be at least 1")]
    ZeroTopK,
}

/// Which positions to unmask at each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    /// The leftmost masked cell of the window.
    LeftToRight,
    /// The single lowest-entropy cell.
    AnyOrderMinEntropy,
    /// The `k` lowest-entropy cells.
    FixedK(usize),
    /// Every cell under `lambda`, lowest entropy first, at most `k_max`.
    Med {
        #[serde(with = "float")]
        lambda: f64,
        k_max: usize,
    },
    /// A contiguous run from the leftmost cell while each is under `lambda`.
    ArMed {
        #[serde(with = "float")]
        lambda: f64,
        k_max: usize,
    },
}

impl OrderPolicy {
    /// Short label in the style of benchmark tables, e.g. `entropy,k=1`.
    pub fn label(&self) -> String {
        match *self {
            OrderPolicy::LeftToRight => "left-to-right".to_string(),
            OrderPolicy::AnyOrderMinEntropy => "entropy,k=1".to_string(),
            OrderPolicy::FixedK(k) => format!("entropy,k={k}"),
            OrderPolicy::Med { lambda, k_max } => format!("med,lambda={lambda},k_max={k_max}"),
            OrderPolicy::ArMed { lambda, k_max } => format!("ar-med,lambda={lambda},k_max={k_max}"),
        }
    }

    /// Upper bound on cells decoded per step, when the policy has one.
    pub fn max_parallel(&self) -> Option<usize> {
        match *self {
            OrderPolicy::LeftToRight | OrderPolicy::AnyOrderMinEntropy => Some(1),
            OrderPolicy::FixedK(k) => Some(k),
            OrderPolicy::Med { k_max, .. } | OrderPolicy::ArMed { k_max, .. } => Some(k_max),
        }
    }

    /// Entropy threshold of the MED family.
    pub fn lambda(&self) -> Option<f64> {
        match *self {
            OrderPolicy::Med { lambda, .. } | OrderPolicy::ArMed { lambda, .. } => Some(lambda),
            _ => None,
        }
    }
}

/// How a token is chosen at a selected position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenChoice {
    /// Argmax of the position's marginal; ties go to the smaller token id.
    Greedy,
    /// Categorical draw at `temperature` from a stream seeded by `seed`.
    Sampled {
        #[serde(with = "float")]
        temperature: f64,
        seed: u64,
    },
}

impl TokenChoice {
    pub fn seed(&self) -> u64 {
        match *self {
            TokenChoice::Greedy => 0,
            TokenChoice::Sampled { seed, .. } => seed,
        }
    }
}

pub const DEFAULT_TOP_K: usize = 16;

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn default_block() -> usize {
    usize::MAX
}

fn default_token_choice() -> TokenChoice {
    TokenChoice::Greedy
}

/// Full scheduler configuration for a decode session.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodePolicy {
    pub order: OrderPolicy,
    /// Width of the left-to-right blocks. `usize::MAX` means one block.
    #[serde(default = "default_block")]
    pub block_size: usize,
    #[serde(default = "default_token_choice")]
    pub token_choice: TokenChoice,
    /// Exit once the answer-entropy bound drops strictly below this (nats).
    #[serde(default, with = "float_opt", skip_serializing_if = "Option::is_none")]
    pub early_exit_gamma: Option<f64>,
    /// Step budget; defaults to the number of initially masked cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Candidates requested per position from models that truncate.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

impl DecodePolicy {
    pub fn new(order: OrderPolicy) -> Self {
        Self {
            order,
            block_size: usize::MAX,
            token_choice: TokenChoice::Greedy,
            early_exit_gamma: None,
            max_steps: None,
            top_k: DEFAULT_TOP_K,
        }
    }

    pub fn with_block(mut self, block_size: usize) -> Self {
        self.block_size = block_size;
        self
    }

    pub fn sampled(mut self, temperature: f64, seed: u64) -> Self {
        self.token_choice = TokenChoice::Sampled { temperature, seed };
        self
    }

    pub fn greedy(mut self) -> Self {
        self.token_choice = TokenChoice::Greedy;
        self
    }

    pub fn with_early_exit(mut self, gamma: f64) -> Self {
        self.early_exit_gamma = Some(gamma);
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = Some(max_steps);
        self
    }

    pub fn label(&self) -> String {
        let mut label = self.order.label();
        if self.block_size != usize::MAX {
            label.push_str(&format!(",block={}", self.block_size));
        }
        if let Some(g) = self.early_exit_gamma {
            label.push_str(&format!(",gamma={g}"));
        }
        label
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.block_size == 0 {
            return Err(PolicyError::ZeroBlock);
        }
        if self.top_k == 0 {
            return Err(PolicyError::ZeroTopK);
        }
        match self.order {
            OrderPolicy::FixedK(0) => return Err(PolicyError::ZeroK),
            OrderPolicy::Med { lambda, k_max } | OrderPolicy::ArMed { lambda, k_max } => {
                if k_max == 0 {
                    return Err(PolicyError::ZeroKMax);
                }
                if lambda.is_nan() || lambda < 0.0 {
                    return Err(PolicyError::NegativeLambda(lambda));
                }
            }
            _ => {}
        }
        if let Some(g) = self.early_exit_gamma {
            if g.is_nan() || g < 0.0 {
                return Err(PolicyError::NegativeGamma(g));
            }
        }
        if let TokenChoice::Sampled { temperature, .. } = self.token_choice {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(PolicyError::BadTemperature(temperature));
            }
        }
        if self.max_steps == Some(0) {
            return Err(PolicyError::ZeroMaxSteps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_with_infinite_lambda() {
        let p = DecodePolicy::new(OrderPolicy::Med {
            lambda: f64::INFINITY,
            k_max: 4,
        })
        .with_block(32)
        .sampled(1.0, 9)
        .with_early_exit(0.1);
        let j = serde_json::to_string(&p).unwrap();
        assert!(j.contains(r#""lambda":"inf""#), "{j}");
        let back: DecodePolicy = serde_json::from_str(&j).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn defaults_fill_in() {
        let p: DecodePolicy = serde_json::from_str(r#"{"order":"left_to_right"}"#).unwrap();
        assert_eq!(p.block_size, usize::MAX);
        assert_eq!(p.token_choice, TokenChoice::Greedy);
        assert_eq!(p.top_k, DEFAULT_TOP_K);
        let p: DecodePolicy = serde_json::from_str(r#"{"order":{"fixed_k":2}}"#).unwrap();
        assert_eq!(p.order, OrderPolicy::FixedK(2));
        assert!(serde_json::from_str::<DecodePolicy>(r#"{"order":"left_to_right","bogus":1}"#).is_err());
    }

    #[test]
    fn validation() {
        assert_eq!(
            DecodePolicy::new(OrderPolicy::Med { lambda: -0.1, k_max: 2 }).validate(),
            Err(PolicyError::NegativeLambda(-0.1))
        );
        assert_eq!(
            DecodePolicy::new(OrderPolicy::ArMed { lambda: 0.1, k_max: 0 }).validate(),
            Err(PolicyError::ZeroKMax)
        );
        assert_eq!(DecodePolicy::new(OrderPolicy::FixedK(0)).validate(), Err(PolicyError::ZeroK));
        assert_eq!(
            DecodePolicy::new(OrderPolicy::LeftToRight).with_block(0).validate(),
            Err(PolicyError::ZeroBlock)
        );
        assert!(DecodePolicy::new(OrderPolicy::LeftToRight)
            .sampled(0.0, 1)
            .validate()
            .is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(OrderPolicy::AnyOrderMinEntropy.label(), "entropy,k=1");
        assert_eq!(OrderPolicy::FixedK(2).label(), "entropy,k=2");
        assert_eq!(
            OrderPolicy::Med { lambda: 0.2, k_max: 8 }.label(),
            "med,lambda=0.2,k_max=8"
        );
    }
}
