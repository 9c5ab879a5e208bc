//! `decode`: one session per configured context.

use super::run_indexed;
use crate::config::{CommonFlags, PolicyFlags, RunConfig};
use crate::error::CliError;
use crate::output::{summary, Output};
use clap::Args;
use mdlm_core::{seed, DecodeTrace, ExitReason, MaskedSequence, Session, TokenChoice, TokenId};
use serde::Serialize;

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    #[command(flatten)]
    pub policy: PolicyFlags,
    /// Sessions run concurrently
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Serialize)]
struct Row {
    session: usize,
    context: Vec<TokenId>,
    output: Vec<Option<TokenId>>,
    nfe: usize,
    exit: ExitReason,
    trace: DecodeTrace,
}

pub fn run(args: &DecodeArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    args.common.apply(&mut cfg);
    if let Some(j) = args.jobs {
        cfg.jobs = Some(j);
    }
    args.policy.apply(&mut cfg)?;
    let vocab = cfg.vocab()?;
    let length = cfg.length()?;
    if let Some(t) = &cfg.template {
        t.validate(length).map_err(|e| CliError::config(format!("template: {e}")))?;
    }
    let model = cfg.open_model()?;
    let contexts = cfg.contexts.clone().unwrap_or_else(|| vec![Vec::new()]);
    let repeats = cfg.repeats.unwrap_or(1);
    let n = contexts.len() * repeats;
    let policy = cfg.policy();

    let rows = run_indexed(n, cfg.jobs(), |i| -> Result<Row, CliError> {
        let context = contexts[i / repeats].clone();
        let mut p = policy;
        if let TokenChoice::Sampled { temperature, .. } = p.token_choice {
            p.token_choice = TokenChoice::Sampled {
                temperature,
                seed: seed::session_seed(cfg.seed, i as u64),
            };
        }
        let session = match &cfg.template {
            Some(t) => Session::from_template(model.as_ref(), context.clone(), t.clone(), length, p, vocab)?,
            None => {
                let canvas = MaskedSequence::new(length, context.clone()).map_err(|e| CliError::config(e.to_string()))?;
                Session::new(model.as_ref(), canvas, None, p, vocab)?
            }
        };
        let (out, trace) = session.decode()?;
        Ok(Row {
            session: i,
            context,
            output: out.cells().to_vec(),
            nfe: trace.nfe,
            exit: trace.exit,
            trace,
        })
    });

    let mut out = Output::open(cfg.out.as_deref())?;
    out.json_header(&cfg)?;
    let mut lines = Vec::new();
    let mut total = 0;
    for row in rows {
        let row = row?;
        total += row.nfe;
        lines.push(format!("session {}: nfe {}, exit {}", row.session, row.nfe, exit_label(row.exit)));
        out.line(&row)?;
    }
    let to_stdout = out.is_stdout();
    out.finish()?;
    for l in &lines {
        summary(to_stdout, l);
    }
    summary(to_stdout, &format!("{n} sessions, {total} model calls"));
    Ok(())
}

pub fn exit_label(e: ExitReason) -> String {
    match e {
        ExitReason::Completed => "completed".into(),
        ExitReason::EarlyExit(s) => format!("early exit at step {s}"),
        ExitReason::MaxSteps => "step budget".into(),
    }
}
