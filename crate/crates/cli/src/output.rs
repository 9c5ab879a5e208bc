//! Output sinks. Every file starts with the effective configuration:
//! `{"header":{"config":...}}` for JSONL and `# config: ...` for CSV.

use crate::config::RunConfig;
use crate::error::CliError;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub struct Output {
    w: Box<dyn Write>,
    path: PathBuf,
}

impl Output {
    /// A file at `path`, or stdout.
    pub fn open(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => {
                let f = File::create(p).map_err(|e| CliError::io(p, e))?;
                Ok(Self {
                    w: Box::new(BufWriter::new(f)),
                    path: p.to_path_buf(),
                })
            }
            None => Ok(Self {
                w: Box::new(BufWriter::new(std::io::stdout())),
                path: PathBuf::from("<stdout>"),
            }),
        }
    }

    pub fn is_stdout(&self) -> bool {
        self.path.as_os_str() == "<stdout>"
    }

    fn err(&self, e: std::io::Error) -> CliError {
        CliError::io(&self.path, e)
    }

    pub fn json_header(&mut self, cfg: &RunConfig) -> Result<(), CliError> {
        self.line(&serde_json::json!({ "header": { "config": cfg.to_value() } }))
    }

    pub fn csv_header(&mut self, cfg: &RunConfig) -> Result<(), CliError> {
        let text = format!("# config: {}\n", cfg.to_value());
        self.raw(&text)
    }

    pub fn line<T: Serialize>(&mut self, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string(value).map_err(|e| CliError::Model(e.to_string()))?;
        self.raw(&text)?;
        self.raw("\n")
    }

    pub fn raw(&mut self, text: &str) -> Result<(), CliError> {
        self.w.write_all(text.as_bytes()).map_err(|e| self.err(e))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.w.flush().map_err(|e| self.err(e))
    }
}

/// Progress and summaries go to stdout when the data went to a file, and
/// to stderr otherwise.
pub fn summary(out_is_stdout: bool, text: &str) {
    if out_is_stdout {
        eprintln!("{text}");
    } else {
        println!("{text}");
    }
}
