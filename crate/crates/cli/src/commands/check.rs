//! `serve-protocol-check`: wire-protocol conformance against a server.

use crate::error::CliError;
use crate::output::{summary, Output};
use clap::Args;
use mdlm_core::models::remote::{protocol_check, CheckTarget};
use mdlm_core::models::wire::spawn_tcp_server;
use mdlm_core::models::{ConditionalModel, Endpoint, ExactJointModel};
use mdlm_core::TokenId;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("server").required(true).args(["endpoint", "mock"]))]
pub struct CheckArgs {
    /// Server to check: tcp://host:port or stdio:<command>
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Serve this exact joint in-process and check that instead
    #[arg(long, value_name = "JOINT")]
    pub mock: Option<PathBuf>,
    /// Exact joint the reports must match within 1e-6 (defaults to --mock)
    #[arg(long, value_name = "JOINT")]
    pub reference: Option<PathBuf>,
    /// Canvas length to probe with (defaults to the reference length)
    #[arg(long)]
    pub length: Option<usize>,
    /// Vocabulary size (defaults to the reference vocabulary)
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Context tokens, comma separated
    #[arg(long, value_delimiter = ',')]
    pub context: Vec<TokenId>,
    /// Per-request timeout
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
    /// Write the report as JSON here
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn load(path: &Path, flag: &str) -> Result<ExactJointModel, CliError> {
    ExactJointModel::load(path).map_err(|e| CliError::config(format!("--{flag}: {}: {e}", path.display())))
}

pub fn run(args: &CheckArgs) -> Result<(), CliError> {
    let mock = args.mock.as_deref().map(|p| load(p, "mock")).transpose()?;
    let reference = match &args.reference {
        Some(p) => Some(load(p, "reference")?),
        None => mock.clone(),
    };
    let endpoint: Endpoint = match (&args.endpoint, &mock) {
        (Some(e), _) => e.parse().map_err(|e| CliError::config(format!("--endpoint: {e}")))?,
        (None, Some(m)) => {
            let addr = spawn_tcp_server(Arc::new(m.clone())).map_err(|e| CliError::Model(format!("mock server: {e}")))?;
            Endpoint::Tcp(addr.to_string())
        }
        (None, None) => return Err(CliError::config("one of --endpoint or --mock is required")),
    };
    let length = args
        .length
        .or(reference.as_ref().map(|r| r.length()))
        .ok_or_else(|| CliError::config("--length is required without a reference joint"))?;
    let vocab = args
        .vocab
        .or(reference.as_ref().map(|r| r.vocab_size()))
        .ok_or_else(|| CliError::config("--vocab is required without a reference joint"))?;
    let target = CheckTarget {
        length,
        vocab,
        context: args.context.clone(),
        reference,
    };
    let report = protocol_check(&endpoint, &target, Duration::from_millis(args.timeout_ms));

    let to_stdout = args.out.is_none();
    if let Some(p) = &args.out {
        let mut out = Output::open(Some(p))?;
        out.line(&report)?;
        out.finish()?;
    }
    for c in &report.checks {
        let line = if c.passed {
            format!("PASS {}", c.name)
        } else {
            format!("FAIL {}: {}", c.name, c.detail)
        };
        if to_stdout {
            println!("{line}");
        } else {
            summary(false, &line);
        }
    }
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.failed().map(|c| c.name).collect();
        Err(CliError::Model(format!("protocol check failed: {}", failed.join(", "))))
    }
}
