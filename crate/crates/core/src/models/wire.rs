//! Newline-delimited JSON wire protocol between the engine and a model
//! server, plus an in-process reference server.
//!
//! Request:
//! `{"id": 3, "context": [..], "cells": [5, null, ..], "query": {"top_k": 16,
//! "query_tokens": {"12": [5, 9]}, "sample": {"temperature": 1.0, "seed": 7}}}`
//!
//! Response:
//! `{"id": 3, "reports": [{"position": 1, "entropy_nats": 0.5, "top": [[0, -0.2], ..],
//! "queried": {"5": -3.1}, "sampled": 0}]}` or `{"id": 3, "error": "..."}`.
//!
//! A request with empty `cells` is the handshake and gets an empty report
//! list. When sampling is requested the server reports the log-prob of each
//! sampled token, in `top` or in `queried`.

use super::{draw_token, ConditionalModel, ModelError, PositionReport, QuerySpec};
use crate::canvas::{MaskedSequence, Position, TokenId};
use crate::seed;
use crate::serde_ext::{float, float_map, token_logprobs};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;

/// Largest frame either side accepts.
pub const MAX_FRAME_BYTES: usize = 16 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRequest {
    pub id: u64,
    #[serde(default)]
    pub context: Vec<TokenId>,
    pub cells: Vec<Option<TokenId>>,
    pub query: QuerySpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireReport {
    pub position: Position,
    #[serde(with = "float")]
    pub entropy_nats: f64,
    #[serde(with = "token_logprobs")]
    pub top: Vec<(TokenId, f64)>,
    #[serde(default, with = "float_map")]
    pub queried: BTreeMap<TokenId, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled: Option<TokenId>,
}

impl From<PositionReport> for WireReport {
    fn from(r: PositionReport) -> Self {
        Self {
            position: r.position,
            entropy_nats: r.entropy,
            top: r.top,
            queried: r.queried,
            sampled: r.sampled,
        }
    }
}

impl From<WireReport> for PositionReport {
    fn from(r: WireReport) -> Self {
        Self {
            position: r.position,
            entropy: r.entropy_nats,
            top: r.top,
            queried: r.queried,
            sampled: r.sampled,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reports: Option<Vec<WireReport>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl WireResponse {
    pub fn error(id: Option<u64>, message: impl Into<String>) -> Self {
        Self {
            id,
            reports: None,
            error: Some(message.into()),
        }
    }
}

/// Answers one request with `model`. Sampling uses one stream seeded by the
/// request seed, drawn in ascending position order.
pub fn answer(model: &dyn ConditionalModel, req: &WireRequest) -> Result<Vec<WireReport>, ModelError> {
    if req.cells.is_empty() {
        return Ok(Vec::new());
    }
    let seq = MaskedSequence::from_cells(req.cells.clone(), req.context.clone())?;
    let Some(sample) = req.query.sample else {
        return Ok(model.conditionals(&seq, &req.query)?.into_iter().map(Into::into).collect());
    };
    let mut full = req.query.clone();
    full.top_k = full.top_k.max(model.vocab_size());
    let mut rng = seed::rng(sample.seed);
    let mut out = Vec::new();
    for mut r in model.conditionals(&seq, &full)? {
        let token = draw_token(&r, sample.temperature, &mut rng).ok_or(ModelError::DegenerateConditional)?;
        let lp = r.logprob_of(token).unwrap_or(f64::NEG_INFINITY);
        r.top.truncate(req.query.top_k);
        if r.top.iter().all(|&(t, _)| t != token) {
            r.queried.insert(token, lp);
        }
        r.sampled = Some(token);
        out.push(r.into());
    }
    Ok(out)
}

fn respond_line(model: &dyn ConditionalModel, line: &str) -> WireResponse {
    if line.len() > MAX_FRAME_BYTES {
        return WireResponse::error(None, format!("frame exceeds {MAX_FRAME_BYTES} bytes"));
    }
    let value: serde_json::Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return WireResponse::error(None, format!("malformed frame: {e}")),
    };
    let id = value.get("id").and_then(|v| v.as_u64());
    let req: WireRequest = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return WireResponse::error(id, format!("invalid request: {e}")),
    };
    match answer(model, &req) {
        Ok(reports) => WireResponse {
            id: Some(req.id),
            reports: Some(reports),
            error: None,
        },
        Err(e) => WireResponse::error(Some(req.id), e.to_string()),
    }
}

/// Serves requests line by line until EOF. Malformed frames get an error
/// response and the loop continues.
pub fn serve_lines<R: BufRead, W: Write>(model: &dyn ConditionalModel, reader: R, mut writer: W) -> std::io::Result<usize> {
    let mut served = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = respond_line(model, &line);
        serde_json::to_writer(&mut writer, &resp)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        served += 1;
    }
    Ok(served)
}

/// Binds `127.0.0.1:0` and serves every connection on its own thread.
/// Returns the bound address; the server lives until the process exits.
pub fn spawn_tcp_server(model: Arc<dyn ConditionalModel>) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let model = Arc::clone(&model);
            std::thread::spawn(move || {
                let Ok(read_half) = stream.try_clone() else { return };
                if let Err(e) = serve_lines(model.as_ref(), std::io::BufReader::new(read_half), stream) {
                    log::debug!("connection closed: {e}");
                }
            });
        }
    });
    Ok(addr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ExactJointModel;

    fn joint() -> ExactJointModel {
        ExactJointModel::from_probs(2, 2, vec![0.4, 0.1, 0.2, 0.3]).unwrap()
    }

    fn run(lines: &str) -> Vec<WireResponse> {
        let mut out = Vec::new();
        serve_lines(&joint(), lines.as_bytes(), &mut out).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn malformed_frame_then_recovery() {
        let r = run("{nope\n{\"id\":1,\"cells\":[0,null],\"query\":{\"top_k\":2}}\n");
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].id, None);
        assert!(r[0].error.is_some());
        assert_eq!(r[1].id, Some(1));
        let reports = r[1].reports.as_ref().unwrap();
        assert_eq!(reports.len(), 1);
        assert!((reports[0].top[0].1.exp() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn filled_request_and_handshake_have_no_reports() {
        let r = run("{\"id\":0,\"cells\":[],\"query\":{\"top_k\":1}}\n{\"id\":1,\"cells\":[0,1],\"query\":{\"top_k\":1}}\n");
        assert!(r.iter().all(|r| r.reports.as_deref() == Some(&[][..])));
    }

    #[test]
    fn model_errors_echo_the_id() {
        let r = run("{\"id\":4,\"cells\":[0],\"query\":{\"top_k\":1}}\n");
        assert_eq!(r[0].id, Some(4));
        assert!(r[0].error.as_ref().unwrap().contains("length"));
    }

    #[test]
    fn sampling_is_seeded_and_reports_the_sampled_logprob() {
        let line = "{\"id\":2,\"cells\":[null,null],\"query\":{\"top_k\":1,\"sample\":{\"temperature\":1.0,\"seed\":9}}}\n";
        let a = run(&line.repeat(2));
        assert_eq!(a[0].reports, a[1].reports);
        for r in a[0].reports.as_ref().unwrap() {
            let t = r.sampled.unwrap();
            assert!(r.top.iter().any(|&(x, _)| x == t) || r.queried.contains_key(&t));
            assert_eq!(r.top.len(), 1);
        }
    }

    #[test]
    fn query_tokens_use_string_keys() {
        let req = WireRequest {
            id: 1,
            context: vec![],
            cells: vec![None, None],
            query: QuerySpec::top(1).with_query(1, vec![0, 1]),
        };
        let j = serde_json::to_string(&req).unwrap();
        assert!(j.contains(r#""query_tokens":{"1":[0,1]}"#), "{j}");
        let r = run(&format!("{j}\n"));
        let rep = &r[0].reports.as_ref().unwrap()[1];
        assert_eq!(rep.queried.keys().copied().collect::<Vec<_>>(), vec![0, 1]);
    }
}
