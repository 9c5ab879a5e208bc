//! Run configuration: a JSON document, with command-line flags applied on
//! top. Unknown fields are rejected.

use crate::error::CliError;
use clap::Args;
use mdlm_core::metrics::TaskKind;
use mdlm_core::models::{ConditionalModel, Endpoint, ExactJointModel, RemoteModel, TabularMDLM};
use mdlm_core::{DecodePolicy, OrderPolicy, Template, TokenChoice, TokenId, Vocab};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Exact(PathBuf),
    Tabular(PathBuf),
    Remote(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSpec {
    pub size: u32,
    pub eos_id: TokenId,
    pub pad_id: TokenId,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policies: Option<Vec<DecodePolicy>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<usize>,
    /// Optional per-instance JSONL dump.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainToyConfig {
    /// Exact joint the training and held-out samples are drawn from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<VocabSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<Template>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<DecodePolicy>,
    #[serde(default)]
    pub seed: u64,
    /// One decode session per context (times `repeats`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contexts: Option<Vec<Vec<TokenId>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chains: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainToyConfig>,
}

const DEFAULT_TIMEOUT_MS: u64 = 30_000;

impl RunConfig {
    /// Reads `path`, or starts empty when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn model_spec(&self) -> Result<&ModelSpec, CliError> {
        self.model.as_ref().ok_or_else(|| missing("model"))
    }

    pub fn vocab(&self) -> Result<Vocab, CliError> {
        let v = self.vocab.ok_or_else(|| missing("vocab"))?;
        Vocab::new(v.size, v.eos_id, v.pad_id).map_err(|e| CliError::config(format!("vocab: {e}")))
    }

    pub fn length(&self) -> Result<usize, CliError> {
        self.length.ok_or_else(|| missing("length"))
    }

    pub fn template(&self) -> Result<&Template, CliError> {
        self.template.as_ref().ok_or_else(|| missing("template"))
    }

    pub fn policy(&self) -> DecodePolicy {
        self.policy.unwrap_or_else(|| DecodePolicy::new(OrderPolicy::AnyOrderMinEntropy))
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or(1).max(1)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms.unwrap_or(DEFAULT_TIMEOUT_MS))
    }

    /// Loads the configured model and checks it against the vocabulary.
    pub fn open_model(&self) -> Result<Box<dyn ConditionalModel>, CliError> {
        let vocab = self.vocab()?;
        let model: Box<dyn ConditionalModel> = match self.model_spec()? {
            ModelSpec::Exact(p) => Box::new(
                ExactJointModel::load(p).map_err(|e| CliError::config(format!("model.exact: {}: {e}", p.display())))?,
            ),
            ModelSpec::Tabular(p) => Box::new(
                TabularMDLM::load(p).map_err(|e| CliError::config(format!("model.tabular: {}: {e}", p.display())))?,
            ),
            ModelSpec::Remote(s) => {
                let ep: Endpoint = s.parse().map_err(|e| CliError::config(format!("model.remote: {e}")))?;
                Box::new(RemoteModel::connect(&ep, vocab.size as usize, self.timeout())?)
            }
        };
        if model.vocab_size() != vocab.size as usize {
            return Err(CliError::config(format!(
                "vocab.size is {} but the model has {} tokens",
                vocab.size,
                model.vocab_size()
            )));
        }
        Ok(model)
    }

    /// Serialized effective configuration for output headers.
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn missing(field: &str) -> CliError {
    CliError::config(format!("config field `{field}` is required"))
}

/// Flags shared by commands that run decode sessions. Each one replaces the
/// matching config field.
#[derive(Args, Debug, Default, Clone)]
pub struct PolicyFlags {
    /// Order policy: left-to-right, entropy, fixed-k, med or ar-med
    #[arg(long, value_name = "NAME")]
    pub policy: Option<String>,
    /// Entropy threshold in nats (med, ar-med)
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Most cells unmasked per step (med, ar-med)
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Cells unmasked per step (fixed-k)
    #[arg(long)]
    pub k: Option<usize>,
    /// Block width for semi-autoregressive decoding
    #[arg(long)]
    pub block: Option<usize>,
    /// Early-exit threshold on the answer entropy bound, in nats
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Sample tokens at this temperature instead of taking the argmax
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Take the argmax token
    #[arg(long, conflicts_with = "temperature")]
    pub greedy: bool,
    /// Step budget per session
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Candidates requested per position from remote models
    #[arg(long)]
    pub top_k: Option<usize>,
}

/// Flags every command accepts.
#[derive(Args, Debug, Default, Clone)]
pub struct CommonFlags {
    /// Run configuration (JSON)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; per-session seeds are split from it
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (stdout when omitted)
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

impl CommonFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
    }
}

impl PolicyFlags {
    /// Applies the flags to the configured policy. When sampling, the
    /// token seed is the master seed; sessions split it further.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        let mut p = cfg.policy();
        let current = p.order;
        let lambda = |name: &str| {
            self.lambda
                .or(current_lambda(current))
                .ok_or_else(|| CliError::config(format!("policy {name} needs --lambda")))
        };
        let k_max = self.kmax.or(current_kmax(current)).unwrap_or(usize::MAX);
        if let Some(name) = &self.policy {
            p.order = match name.as_str() {
                "left-to-right" | "l2r" => OrderPolicy::LeftToRight,
                "entropy" => OrderPolicy::AnyOrderMinEntropy,
                "fixed-k" => match self.k.or(match current {
                    OrderPolicy::FixedK(k) => Some(k),
                    _ => None,
                }) {
                    Some(k) => OrderPolicy::FixedK(k),
                    None => return Err(CliError::config("policy fixed-k needs --k")),
                },
                "med" => OrderPolicy::Med {
                    lambda: lambda("med")?,
                    k_max,
                },
                "ar-med" => OrderPolicy::ArMed {
                    lambda: lambda("ar-med")?,
                    k_max,
                },
                other => {
                    return Err(CliError::config(format!(
                        "unknown policy {other:?}; expected left-to-right, entropy, fixed-k, med or ar-med"
                    )))
                }
            };
        } else {
            p.order = match current {
                OrderPolicy::FixedK(k) => OrderPolicy::FixedK(self.k.unwrap_or(k)),
                OrderPolicy::Med { lambda, k_max } => OrderPolicy::Med {
                    lambda: self.lambda.unwrap_or(lambda),
                    k_max: self.kmax.unwrap_or(k_max),
                },
                OrderPolicy::ArMed { lambda, k_max } => OrderPolicy::ArMed {
                    lambda: self.lambda.unwrap_or(lambda),
                    k_max: self.kmax.unwrap_or(k_max),
                },
                o => o,
            };
        }
        let applies = |flag: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(CliError::config(format!("--{flag} does not apply to policy {}", p.order.label())))
            }
        };
        let thresholded = matches!(p.order, OrderPolicy::Med { .. } | OrderPolicy::ArMed { .. });
        if self.lambda.is_some() {
            applies("lambda", thresholded)?;
        }
        if self.kmax.is_some() {
            applies("kmax", thresholded)?;
        }
        if self.k.is_some() {
            applies("k", matches!(p.order, OrderPolicy::FixedK(_)))?;
        }
        if let Some(b) = self.block {
            p.block_size = b;
        }
        if let Some(g) = self.gamma {
            p.early_exit_gamma = Some(g);
        }
        if let Some(t) = self.max_steps {
            p.max_steps = Some(t);
        }
        if let Some(k) = self.top_k {
            p.top_k = k;
        }
        if self.greedy {
            p.token_choice = TokenChoice::Greedy;
        }
        if let Some(t) = self.temperature {
            p.token_choice = TokenChoice::Sampled { temperature: t, seed: 0 };
        }
        if let TokenChoice::Sampled { temperature, .. } = p.token_choice {
            p.token_choice = TokenChoice::Sampled {
                temperature,
                seed: cfg.seed,
            };
        }
        p.validate().map_err(|e| CliError::config(format!("policy: {e}")))?;
        cfg.policy = Some(p);
        Ok(())
    }
}

fn current_lambda(o: OrderPolicy) -> Option<f64> {
    match o {
        OrderPolicy::Med { lambda, .. } | OrderPolicy::ArMed { lambda, .. } => Some(lambda),
        _ => None,
    }
}

fn current_kmax(o: OrderPolicy) -> Option<usize> {
    match o {
        OrderPolicy::Med { k_max, .. } | OrderPolicy::ArMed { k_max, .. } => Some(k_max),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: &str) -> RunConfig {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn flags_beat_the_file() {
        let mut c = cfg(r#"{"policy":{"order":{"fixed_k":2},"block_size":8},"seed":3}"#);
        let flags = PolicyFlags {
            policy: Some("med".into()),
            lambda: Some(0.2),
            kmax: Some(32),
            block: Some(32),
            ..Default::default()
        };
        flags.apply(&mut c).unwrap();
        let p = c.policy.unwrap();
        assert_eq!(p.order, OrderPolicy::Med { lambda: 0.2, k_max: 32 });
        assert_eq!(p.block_size, 32);
    }

    #[test]
    fn threshold_flags_tune_the_configured_policy() {
        let mut c = cfg(r#"{"policy":{"order":{"med":{"lambda":0.5,"k_max":4}}}}"#);
        PolicyFlags {
            lambda: Some(0.1),
            ..Default::default()
        }
        .apply(&mut c)
        .unwrap();
        assert_eq!(c.policy.unwrap().order, OrderPolicy::Med { lambda: 0.1, k_max: 4 });
    }

    #[test]
    fn misplaced_flags_are_config_errors() {
        let mut c = RunConfig::default();
        let e = PolicyFlags {
            lambda: Some(0.1),
            ..Default::default()
        }
        .apply(&mut c)
        .unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let e = PolicyFlags {
            policy: Some("med".into()),
            ..Default::default()
        }
        .apply(&mut RunConfig::default())
        .unwrap_err();
        assert!(e.to_string().contains("--lambda"));
        assert!(PolicyFlags {
            policy: Some("beam".into()),
            ..Default::default()
        }
        .apply(&mut RunConfig::default())
        .is_err());
    }

    #[test]
    fn sampling_seed_is_the_master_seed() {
        let mut c = cfg(r#"{"seed":11,"policy":{"order":"left_to_right","token_choice":{"sampled":{"temperature":1.0,"seed":99}}}}"#);
        PolicyFlags::default().apply(&mut c).unwrap();
        assert_eq!(c.policy.unwrap().token_choice, TokenChoice::Sampled { temperature: 1.0, seed: 11 });
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"modle":{"exact":"x"}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"model":{"exact":"x","extra":1}}"#).is_err());
    }

    #[test]
    fn missing_fields_name_themselves() {
        let c = RunConfig::default();
        assert!(c.model_spec().unwrap_err().to_string().contains("`model`"));
        assert!(c.vocab().unwrap_err().to_string().contains("`vocab`"));
    }

    #[test]
    fn model_spec_format() {
        let c = cfg(r#"{"model":{"remote":"tcp://127.0.0.1:1"}}"#);
        assert_eq!(c.model, Some(ModelSpec::Remote("tcp://127.0.0.1:1".into())));
        let c = cfg(r#"{"model":{"exact":"joint.json"}}"#);
        assert_eq!(c.model, Some(ModelSpec::Exact("joint.json".into())));
    }
}
