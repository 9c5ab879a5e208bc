//! `bench`: accuracy, NFE and KL budget per policy on a synthetic task.

use crate::config::{BenchConfig, CommonFlags, RunConfig};
use crate::error::CliError;
use crate::output::{summary, Output};
use clap::{Args, ValueEnum};
use mdlm_core::metrics::{benchmark, SyntheticTask, TaskKind};
use mdlm_core::{DecodePolicy, OrderPolicy};
use std::path::PathBuf;

const DEFAULT_INSTANCES: usize = 100;

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    /// Synthetic task
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Instances per policy
    #[arg(long)]
    pub instances: Option<usize>,
    /// Worker threads
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Report format
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Also write every instance with its trace as JSONL here
    #[arg(long, value_name = "PATH")]
    pub traces: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    Markov,
    Copy,
    Sudoku,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Markov => TaskKind::MarkovSuffix,
            TaskArg::Copy => TaskKind::NoisyCopy,
            TaskArg::Sudoku => TaskKind::Sudoku,
        }
    }
}

/// k = 1, k = 2 and MED at λ = 0.2.
pub fn default_policies() -> Vec<DecodePolicy> {
    vec![
        DecodePolicy::new(OrderPolicy::FixedK(1)),
        DecodePolicy::new(OrderPolicy::FixedK(2)),
        DecodePolicy::new(OrderPolicy::Med { lambda: 0.2, k_max: 8 }),
    ]
}

pub fn run(args: &BenchArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    args.common.apply(&mut cfg);
    if let Some(j) = args.jobs {
        cfg.jobs = Some(j);
    }
    let mut bench = cfg.bench.take().unwrap_or_default();
    if let Some(t) = args.task {
        bench.task = Some(t.into());
    }
    if let Some(n) = args.instances {
        bench.instances = Some(n);
    }
    if let Some(p) = &args.traces {
        bench.traces = Some(p.clone());
    }
    let task = bench.task.unwrap_or(TaskKind::MarkovSuffix);
    let policies = bench.policies.clone().unwrap_or_else(default_policies);
    for p in &policies {
        p.validate().map_err(|e| CliError::config(format!("bench.policies: {}: {e}", p.label())))?;
    }
    let instances = bench.instances.unwrap_or(DEFAULT_INSTANCES);
    cfg.bench = Some(BenchConfig {
        task: Some(task),
        policies: Some(policies.clone()),
        instances: Some(instances),
        traces: bench.traces.clone(),
    });

    let (report, results) = benchmark(&SyntheticTask::new(task), &policies, instances, cfg.seed, cfg.jobs())?;

    let mut out = Output::open(cfg.out.as_deref())?;
    match args.format {
        Format::Csv => {
            out.csv_header(&cfg)?;
            out.raw(&report.to_csv().map_err(|e| CliError::Model(format!("csv: {e}")))?)?;
        }
        Format::Json => {
            out.json_header(&cfg)?;
            out.line(&report)?;
        }
    }
    let to_stdout = out.is_stdout();
    out.finish()?;

    if let Some(path) = &bench.traces {
        let mut t = Output::open(Some(path))?;
        t.json_header(&cfg)?;
        for r in results.iter().flatten() {
            t.line(r)?;
        }
        t.finish()?;
    }
    for row in &report.rows {
        summary(
            to_stdout,
            &format!("{}: acc {:.3}, nfe {:.2}, kl {:.4}", row.policy, row.acc, row.nfe, row.kl),
        );
    }
    Ok(())
}
