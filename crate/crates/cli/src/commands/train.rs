//! `train-toy`: fits a TabularMDLM to samples of an exact joint.

use crate::config::{CommonFlags, RunConfig, TrainToyConfig};
use crate::error::CliError;
use crate::output::{summary, Output};
use clap::Args;
use mdlm_core::models::exact::exact_marginals;
use mdlm_core::models::{train_tabular_mdlm, ExactJointModel, TabularMDLM, TrainConfig};
use mdlm_core::{seed, MaskedSequence, TokenId};
use serde::Serialize;
use std::collections::BTreeSet;
use std::path::PathBuf;

const DEFAULT_SAMPLES: usize = 100_000;
const DEFAULT_HELD_OUT: usize = 1_000;
const DEFAULT_EPOCHS: usize = 1;
/// Mask draws per sample when the sequence is too long to enumerate masks.
const OBJECTIVE_DRAWS: usize = 16;
/// Longest sequence whose mask patterns are all compared against the joint.
const ERROR_MAX_LENGTH: usize = 10;

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    /// Exact joint (JSON) to draw training and held-out samples from
    #[arg(long, value_name = "PATH")]
    pub joint: Option<PathBuf>,
    /// Training samples
    #[arg(long)]
    pub samples: Option<usize>,
    /// Held-out samples
    #[arg(long)]
    pub held_out: Option<usize>,
    /// Training passes over the data
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Step size of each table update, in (0, 1]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Pseudo-count added to every table entry
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Where to write the trained model
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report {
    checkpoint: PathBuf,
    train_samples: usize,
    held_out_samples: usize,
    epochs: usize,
    train_objective: f64,
    held_out_objective: f64,
    /// Largest absolute difference between a learned and an exact
    /// conditional probability over held-out sequences and mask patterns.
    max_conditional_error: f64,
    mean_conditional_error: f64,
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    args.common.apply(&mut cfg);
    let mut t = cfg.train.take().unwrap_or_default();
    macro_rules! take {
        ($($f:ident),*) => {$(if let Some(v) = &args.$f { t.$f = Some(v.clone()); })*};
    }
    take!(joint, samples, held_out, epochs, learning_rate, smoothing, checkpoint);
    let joint_path = t.joint.clone().ok_or_else(|| CliError::config("config field `train.joint` is required"))?;
    let checkpoint = t
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::config("config field `train.checkpoint` is required"))?;
    let samples = t.samples.unwrap_or(DEFAULT_SAMPLES);
    let held_out = t.held_out.unwrap_or(DEFAULT_HELD_OUT);
    if samples == 0 || held_out == 0 {
        return Err(CliError::config("train.samples and train.held_out must be at least 1"));
    }
    let mut train = TrainConfig::new(t.epochs.unwrap_or(DEFAULT_EPOCHS), seed::session_seed(cfg.seed, 2));
    if let Some(lr) = t.learning_rate {
        train.learning_rate = lr;
    }
    if let Some(s) = t.smoothing {
        train.smoothing = s;
    }
    cfg.train = Some(TrainToyConfig {
        joint: Some(joint_path.clone()),
        samples: Some(samples),
        held_out: Some(held_out),
        epochs: Some(train.epochs),
        learning_rate: Some(train.learning_rate),
        smoothing: Some(train.smoothing),
        checkpoint: Some(checkpoint.clone()),
    });

    let joint = ExactJointModel::load(&joint_path)
        .map_err(|e| CliError::config(format!("train.joint: {}: {e}", joint_path.display())))?;
    let vocab = mdlm_core::models::ConditionalModel::vocab_size(&joint);
    let data = joint.sample(&[], samples, &mut seed::rng(seed::session_seed(cfg.seed, 0)))?;
    let test = joint.sample(&[], held_out, &mut seed::rng(seed::session_seed(cfg.seed, 1)))?;
    let model = train_tabular_mdlm(&data, vocab, &train).map_err(|e| CliError::config(format!("train: {e}")))?;
    std::fs::write(&checkpoint, model.to_json()).map_err(|e| CliError::io(&checkpoint, e))?;

    let (max_err, mean_err) = conditional_error(&model, &joint, &test)?;
    let report = Report {
        checkpoint,
        train_samples: samples,
        held_out_samples: held_out,
        epochs: train.epochs,
        train_objective: model.objective(&data, OBJECTIVE_DRAWS, seed::session_seed(cfg.seed, 3))?,
        held_out_objective: model.objective(&test, OBJECTIVE_DRAWS, seed::session_seed(cfg.seed, 4))?,
        max_conditional_error: max_err,
        mean_conditional_error: mean_err,
    };
    let mut out = Output::open(cfg.out.as_deref())?;
    out.json_header(&cfg)?;
    out.line(&report)?;
    let to_stdout = out.is_stdout();
    out.finish()?;
    summary(
        to_stdout,
        &format!(
            "held-out objective {:.6} nats, conditional error max {:.4} mean {:.4}",
            report.held_out_objective, max_err, mean_err
        ),
    );
    Ok(())
}

/// Compares learned and exact conditionals on every mask pattern of every
/// distinct held-out sequence.
fn conditional_error(model: &TabularMDLM, joint: &ExactJointModel, test: &[Vec<TokenId>]) -> Result<(f64, f64), CliError> {
    let l = model.length();
    if l > ERROR_MAX_LENGTH {
        return Err(CliError::config(format!(
            "conditional error is only computed up to length {ERROR_MAX_LENGTH}, the joint has length {l}"
        )));
    }
    let distinct: BTreeSet<&Vec<TokenId>> = test.iter().collect();
    let (mut max, mut sum, mut n) = (0.0f64, 0.0, 0usize);
    for x in distinct {
        for mask in 1u32..(1 << l) {
            let cells: Vec<Option<TokenId>> = (0..l).map(|i| (mask >> i & 1 == 0).then_some(x[i])).collect();
            let seq = MaskedSequence::from_cells(cells.clone(), Vec::new()).map_err(|e| CliError::Model(e.to_string()))?;
            for (p, exact) in exact_marginals(joint, &seq)? {
                for (a, b) in model.conditional(&cells, p).iter().zip(&exact) {
                    let d = (a - b).abs();
                    max = max.max(d);
                    sum += d;
                    n += 1;
                }
            }
        }
    }
    Ok((max, if n == 0 { 0.0 } else { sum / n as f64 }))
}
