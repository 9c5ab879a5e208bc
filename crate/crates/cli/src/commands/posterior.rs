//! `posterior`: reasoning sampled with the answer pre-filled.

use super::{read_jsonl, run_indexed};
use crate::config::{CommonFlags, PolicyFlags, RunConfig};
use crate::error::CliError;
use crate::output::{summary, Output};
use clap::Args;
use mdlm_core::engine::EngineError;
use mdlm_core::{seed, DecodeTrace, Session, TokenChoice, TokenId};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct PosteriorArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    #[command(flatten)]
    pub policy: PolicyFlags,
    /// JSONL of {"context": [...], "answer": [...]}
    #[arg(long, value_name = "PATH")]
    pub answers: Option<PathBuf>,
    /// Posterior draws per answer row, each with its own seed
    #[arg(long)]
    pub samples: Option<usize>,
    /// Sessions run concurrently
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerRow {
    #[serde(default)]
    context: Vec<TokenId>,
    answer: Vec<TokenId>,
}

#[derive(Serialize)]
struct Row {
    row: usize,
    sample: usize,
    context: Vec<TokenId>,
    answer: Vec<TokenId>,
    reasoning: Vec<TokenId>,
    nfe: usize,
    trace: DecodeTrace,
}

pub fn run(args: &PosteriorArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    args.common.apply(&mut cfg);
    if let Some(p) = &args.answers {
        cfg.answers = Some(p.clone());
    }
    if let Some(s) = args.samples {
        cfg.samples = Some(s);
    }
    if let Some(j) = args.jobs {
        cfg.jobs = Some(j);
    }
    // Posterior draws need sampled tokens; greedy configs sample at T = 1.
    if args.policy.temperature.is_none() && !args.policy.greedy {
        let mut p = cfg.policy();
        if p.token_choice == TokenChoice::Greedy {
            p.token_choice = TokenChoice::Sampled { temperature: 1.0, seed: 0 };
        }
        cfg.policy = Some(p);
    }
    args.policy.apply(&mut cfg)?;
    if cfg.policy().token_choice == TokenChoice::Greedy {
        return Err(CliError::config("posterior draws need sampled tokens; drop --greedy"));
    }
    let vocab = cfg.vocab()?;
    let length = cfg.length()?;
    let template = cfg.template()?.clone();
    let answers_path = cfg.answers.clone().ok_or_else(|| CliError::config("config field `answers` is required"))?;
    let rows: Vec<AnswerRow> = read_jsonl(&answers_path, "answers")?;
    let samples = cfg.samples.unwrap_or(1);
    if samples == 0 {
        return Err(CliError::config("samples must be at least 1"));
    }
    let model = cfg.open_model()?;
    let policy = cfg.policy();
    let n = rows.len() * samples;

    let results = run_indexed(n, cfg.jobs(), |i| -> Result<Option<Row>, CliError> {
        let (r, s) = (i / samples, i % samples);
        let row = &rows[r];
        let mut p = policy;
        if let TokenChoice::Sampled { temperature, .. } = p.token_choice {
            p.token_choice = TokenChoice::Sampled {
                temperature,
                seed: seed::session_seed(cfg.seed, i as u64),
            };
        }
        let t = template.clone().with_answer(row.answer.clone());
        let session = Session::from_template(model.as_ref(), row.context.clone(), t, length, p, vocab)
            .map_err(|e| CliError::config(format!("answers row {}: {e}", r + 1)))?;
        match session.decode_posterior() {
            Ok((reasoning, trace)) => Ok(Some(Row {
                row: r,
                sample: s,
                context: row.context.clone(),
                answer: row.answer.clone(),
                reasoning,
                nfe: trace.nfe,
                trace,
            })),
            Err(EngineError::DegenerateConditional) => {
                log::warn!("answers row {}: answer has zero probability, skipped", r + 1);
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    });

    let mut out = Output::open(cfg.out.as_deref())?;
    out.json_header(&cfg)?;
    let (mut written, mut warnings) = (0, 0);
    for r in results {
        match r? {
            Some(row) => {
                out.line(&row)?;
                written += 1;
            }
            None => warnings += 1,
        }
    }
    let to_stdout = out.is_stdout();
    out.finish()?;
    summary(to_stdout, &format!("posterior: {written} rows written, {warnings} warnings"));
    Ok(())
}
