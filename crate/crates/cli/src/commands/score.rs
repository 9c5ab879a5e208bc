//! `score`: answer-aware chain filtering scores.

use super::{read_jsonl, run_indexed};
use crate::config::{CommonFlags, RunConfig};
use crate::error::CliError;
use crate::output::{summary, Output};
use clap::Args;
use mdlm_core::scoring::{chain_filter_score, ChainScore};
use mdlm_core::TokenId;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    /// JSONL of {"context": [...], "reasoning": [...], "gold_answer": [...]}
    #[arg(long, value_name = "PATH")]
    pub chains: Option<PathBuf>,
    /// Reveal this many reasoning cells between scored prefixes
    #[arg(long)]
    pub stride: Option<usize>,
    /// Rows scored concurrently
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainRow {
    #[serde(default)]
    context: Vec<TokenId>,
    reasoning: Vec<TokenId>,
    gold_answer: Vec<TokenId>,
}

#[derive(Serialize)]
struct Row {
    row: usize,
    #[serde(flatten)]
    score: ChainScore,
}

pub fn run(args: &ScoreArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    args.common.apply(&mut cfg);
    if let Some(p) = &args.chains {
        cfg.chains = Some(p.clone());
    }
    if let Some(s) = args.stride {
        cfg.stride = Some(s);
    }
    if let Some(j) = args.jobs {
        cfg.jobs = Some(j);
    }
    let length = cfg.length()?;
    let template = cfg.template()?.clone();
    template.validate(length).map_err(|e| CliError::config(format!("template: {e}")))?;
    let stride = cfg.stride.unwrap_or(1);
    if stride == 0 {
        return Err(CliError::config("stride must be at least 1"));
    }
    let chains_path = cfg.chains.clone().ok_or_else(|| CliError::config("config field `chains` is required"))?;
    let rows: Vec<ChainRow> = read_jsonl(&chains_path, "chains")?;
    let model = cfg.open_model()?;

    let scores = run_indexed(rows.len(), cfg.jobs(), |i| {
        let r = &rows[i];
        chain_filter_score(model.as_ref(), &r.context, &template, length, &r.reasoning, &r.gold_answer, stride)
            .map_err(|e| match CliError::from(e) {
                CliError::Config(m) => CliError::config(format!("chains row {}: {m}", i + 1)),
                other => other,
            })
    });

    let mut out = Output::open(cfg.out.as_deref())?;
    out.json_header(&cfg)?;
    for (i, s) in scores.into_iter().enumerate() {
        out.line(&Row { row: i, score: s? })?;
    }
    let to_stdout = out.is_stdout();
    out.finish()?;
    summary(to_stdout, &format!("scored {} chains", rows.len()));
    Ok(())
}
