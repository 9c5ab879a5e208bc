//! Client for a model server speaking the wire protocol, and a conformance
//! checker for such servers.

use super::exact::{exact_conditionals, ExactJointModel};
use super::wire::{WireReport, WireRequest, WireResponse};
use super::{ConditionalModel, ModelError, PositionReport, QuerySpec, SampleSpec};
use crate::canvas::{MaskedSequence, TokenId};
use serde::Serialize;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Slack allowed on remote normalization (float32 servers).
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Where a model server lives: `tcp://host:port` or `stdio:<command>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Stdio(String),
}

impl FromStr for Endpoint {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            Ok(Endpoint::Tcp(addr.to_string()))
        } else if let Some(cmd) = s.strip_prefix("stdio:") {
            Ok(Endpoint::Stdio(cmd.to_string()))
        } else {
            Err(ModelError::InvalidModel(format!(
                "endpoint {s:?} must start with tcp:// or stdio:"
            )))
        }
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Tcp(a) => write!(f, "tcp://{a}"),
            Endpoint::Stdio(c) => write!(f, "stdio:{c}"),
        }
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

/// One connection to a model server. Requests are serialized: one in flight
/// at a time.
pub struct RemoteModel {
    vocab: usize,
    timeout: Duration,
    tolerance: f64,
    conn: Mutex<Connection>,
    child: Mutex<Option<Child>>,
    calls: AtomicUsize,
}

fn spawn_reader<R: Read + Send + 'static>(reader: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(reader).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl RemoteModel {
    /// Connects and performs the handshake.
    pub fn connect(endpoint: &Endpoint, vocab: usize, timeout: Duration) -> Result<Self, ModelError> {
        let m = match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true).ok();
                let read_half = stream.try_clone()?;
                Self::from_parts(Box::new(stream), spawn_reader(read_half), None, vocab, timeout)
            }
            Endpoint::Stdio(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Self::from_parts(Box::new(stdin), spawn_reader(stdout), Some(child), vocab, timeout)
            }
        };
        m.handshake()?;
        Ok(m)
    }

    fn from_parts(
        writer: Box<dyn Write + Send>,
        lines: Receiver<std::io::Result<String>>,
        child: Option<Child>,
        vocab: usize,
        timeout: Duration,
    ) -> Self {
        Self {
            vocab,
            timeout,
            tolerance: DEFAULT_TOLERANCE,
            conn: Mutex::new(Connection {
                writer,
                lines,
                next_id: 1,
            }),
            child: Mutex::new(child),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    /// Conditional queries answered so far (handshake excluded).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn handshake(&self) -> Result<(), ModelError> {
        let resp = self.exchange_with_id(0, &[], &[], &QuerySpec::top(1))?;
        match resp.reports.as_deref() {
            Some([]) => Ok(()),
            Some(_) => Err(ModelError::Protocol("handshake returned reports".into())),
            None => Err(ModelError::Protocol("handshake response has no reports".into())),
        }
    }

    fn send_line(&self, line: &str) -> Result<WireResponse, ModelError> {
        let mut conn = self.conn.lock().expect("connection lock");
        conn.writer.write_all(line.as_bytes())?;
        conn.writer.write_all(b"\n")?;
        conn.writer.flush()?;
        let text = match conn.lines.recv_timeout(self.timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => return Err(ModelError::Timeout),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(ModelError::Protocol("server closed the connection".into()))
            }
        };
        if text.len() > super::wire::MAX_FRAME_BYTES {
            return Err(ModelError::Protocol("response frame too large".into()));
        }
        serde_json::from_str(&text).map_err(|e| ModelError::Protocol(format!("malformed response: {e}")))
    }

    fn exchange_with_id(
        &self,
        id: u64,
        context: &[TokenId],
        cells: &[Option<TokenId>],
        query: &QuerySpec,
    ) -> Result<WireResponse, ModelError> {
        let req = WireRequest {
            id,
            context: context.to_vec(),
            cells: cells.to_vec(),
            query: query.clone(),
        };
        let resp = self.send_line(&serde_json::to_string(&req)?)?;
        if let Some(msg) = resp.error {
            return Err(ModelError::Server(msg));
        }
        if resp.id != Some(id) {
            return Err(ModelError::Protocol(format!(
                "response id {:?} does not echo request id {id}",
                resp.id
            )));
        }
        Ok(resp)
    }

    /// Sends one request and returns the raw response after id and error
    /// checks, without validating the reports.
    pub fn exchange(&self, seq: &MaskedSequence, query: &QuerySpec) -> Result<Vec<WireReport>, ModelError> {
        let id = {
            let mut conn = self.conn.lock().expect("connection lock");
            let id = conn.next_id;
            conn.next_id += 1;
            id
        };
        let resp = self.exchange_with_id(id, seq.context(), seq.cells(), query)?;
        resp.reports
            .ok_or_else(|| ModelError::Protocol("response has neither reports nor error".into()))
    }

    /// Sends an arbitrary line and returns whatever comes back.
    pub fn send_raw(&self, line: &str) -> Result<WireResponse, ModelError> {
        self.send_line(line)
    }
}

/// Checks a response against the request: exact coverage of the masked
/// cells, report invariants, query echo and sampling presence.
pub fn validate_reports(
    seq: &MaskedSequence,
    query: &QuerySpec,
    reports: &[PositionReport],
    tolerance: f64,
) -> Result<(), String> {
    let positions: Vec<_> = reports.iter().map(|r| r.position).collect();
    let masked = seq.masked_positions(None);
    if positions != masked {
        return Err(format!("reports cover {positions:?}, masked cells are {masked:?}"));
    }
    for r in reports {
        r.validate(tolerance)?;
        if r.top.len() > query.top_k {
            return Err(format!("position {}: {} top entries for top_k {}", r.position, r.top.len(), query.top_k));
        }
        let wanted: Vec<TokenId> = query
            .query_tokens
            .get(&r.position)
            .map(|v| {
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                v
            })
            .unwrap_or_default();
        let extra_sampled = |t: &TokenId| query.sample.is_some() && r.sampled == Some(*t);
        let got: Vec<TokenId> = r.queried.keys().copied().filter(|t| !extra_sampled(t) || wanted.contains(t)).collect();
        if got != wanted {
            return Err(format!("position {}: queried tokens {got:?}, requested {wanted:?}", r.position));
        }
        match (query.sample, r.sampled) {
            (Some(_), None) => return Err(format!("position {}: no sampled token", r.position)),
            (None, Some(_)) => return Err(format!("position {}: unrequested sampled token", r.position)),
            (Some(_), Some(t)) if r.logprob_of(t).is_none() => {
                return Err(format!("position {}: sampled token {t} has no reported log-prob", r.position))
            }
            _ => {}
        }
    }
    Ok(())
}

impl ConditionalModel for RemoteModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn conditionals(&self, seq: &MaskedSequence, query: &QuerySpec) -> Result<Vec<PositionReport>, ModelError> {
        let reports: Vec<PositionReport> = self.exchange(seq, query)?.into_iter().map(Into::into).collect();
        self.calls.fetch_add(1, Ordering::Relaxed);
        validate_reports(seq, query, &reports, self.tolerance).map_err(ModelError::Protocol)?;
        Ok(reports)
    }

    fn samples_server_side(&self) -> bool {
        true
    }
}

impl Drop for RemoteModel {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.child.lock() {
            if let Some(mut child) = guard.take() {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProtocolReport {
    pub endpoint: String,
    pub checks: Vec<CheckResult>,
}

impl ProtocolReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Canvas geometry the checker probes with.
#[derive(Clone, Debug)]
pub struct CheckTarget {
    pub length: usize,
    pub vocab: usize,
    pub context: Vec<TokenId>,
    /// When given, reports must match this model within 1e-6.
    pub reference: Option<ExactJointModel>,
}

/// Runs the conformance checks against a server.
pub fn protocol_check(endpoint: &Endpoint, target: &CheckTarget, timeout: Duration) -> ProtocolReport {
    let mut checks = Vec::new();
    let mut push = |name: &'static str, r: Result<(), String>| {
        checks.push(CheckResult {
            name,
            passed: r.is_ok(),
            detail: r.err().unwrap_or_default(),
        })
    };
    let model = match RemoteModel::connect(endpoint, target.vocab, timeout) {
        Ok(m) => {
            push("handshake", Ok(()));
            m
        }
        Err(e) => {
            push("handshake", Err(e.to_string()));
            return ProtocolReport {
                endpoint: endpoint.to_string(),
                checks,
            };
        }
    };
    let l = target.length;
    let v = target.vocab;
    let ctx = target.context.clone();
    let full_k = QuerySpec::top(v);

    let filled = MaskedSequence::from_cells(vec![Some(0); l], ctx.clone());
    push(
        "all_filled",
        filled.map_err(|e| e.to_string()).and_then(|s| {
            let r = model.exchange(&s, &full_k).map_err(|e| e.to_string())?;
            if r.is_empty() {
                Ok(())
            } else {
                Err(format!("{} reports for a fully filled request", r.len()))
            }
        }),
    );

    let half = MaskedSequence::from_cells((0..l).map(|i| (i % 2 == 1).then_some(0)).collect(), ctx.clone());
    let fresh = MaskedSequence::new(l, ctx.clone());
    let probes: Vec<MaskedSequence> = [fresh, half].into_iter().filter_map(Result::ok).collect();
    let mut fetched: Vec<(MaskedSequence, Vec<PositionReport>)> = Vec::new();
    let mut coverage = Ok(());
    for s in &probes {
        match model.exchange(s, &full_k) {
            Ok(r) => {
                let r: Vec<PositionReport> = r.into_iter().map(Into::into).collect();
                let pos: Vec<_> = r.iter().map(|x| x.position).collect();
                if pos != s.masked_positions(None) {
                    coverage = Err(format!("reports cover {pos:?}, masked cells are {:?}", s.masked_positions(None)));
                }
                fetched.push((s.clone(), r));
            }
            Err(e) => coverage = Err(e.to_string()),
        }
    }
    push("coverage", coverage);

    let mut norm = Ok(());
    for (_, reports) in &fetched {
        for r in reports {
            if let Err(e) = r.validate(DEFAULT_TOLERANCE) {
                norm = Err(e);
            } else if r.top.len() >= v || (r.top_mass() - 1.0).abs() <= DEFAULT_TOLERANCE {
                let h: f64 = -r.top.iter().map(|&(_, lp)| lp.exp() * lp).sum::<f64>();
                if (h - r.entropy).abs() > DEFAULT_TOLERANCE {
                    norm = Err(format!("position {}: entropy {} but the distribution gives {h}", r.position, r.entropy));
                }
            }
        }
    }
    push("normalization", norm);

    let echo = probes.first().ok_or_else(|| "no probe canvas".to_string()).and_then(|s| {
        let p = s.masked_positions(None)[0];
        let tokens = vec![0, (v - 1) as TokenId];
        let q = QuerySpec::top(1).with_query(p, tokens.clone());
        let r: Vec<PositionReport> = model.exchange(s, &q).map_err(|e| e.to_string())?.into_iter().map(Into::into).collect();
        validate_reports(s, &q, &r, DEFAULT_TOLERANCE)
    });
    push("query_echo", echo);

    let determinism = probes.first().ok_or_else(|| "no probe canvas".to_string()).and_then(|s| {
        let mut q = QuerySpec::top(2);
        q.sample = Some(SampleSpec {
            temperature: 1.0,
            seed: 1234,
        });
        let draw = || -> Result<Vec<Option<TokenId>>, String> {
            let r: Vec<PositionReport> = model.exchange(s, &q).map_err(|e| e.to_string())?.into_iter().map(Into::into).collect();
            validate_reports(s, &q, &r, DEFAULT_TOLERANCE)?;
            Ok(r.iter().map(|r| r.sampled).collect())
        };
        let (a, b) = (draw()?, draw()?);
        if a == b {
            Ok(())
        } else {
            Err(format!("same seed gave {a:?} then {b:?}"))
        }
    });
    push("sampling_determinism", determinism);

    let malformed = model
        .send_raw("{this is not json")
        .map_err(|e| e.to_string())
        .and_then(|resp| match (resp.id, resp.error) {
            (None, Some(_)) => Ok(()),
            (id, err) => Err(format!("expected an error frame with null id, got id {id:?}, error {err:?}")),
        })
        .and_then(|_| match probes.first() {
            Some(s) => model.exchange(s, &full_k).map(|_| ()).map_err(|e| format!("no recovery: {e}")),
            None => Ok(()),
        });
    push("malformed_frame", malformed);

    if let Some(reference) = &target.reference {
        let mut agree = Ok(());
        for (s, remote) in &fetched {
            match exact_conditionals(reference, s, &full_k) {
                Ok(local) => {
                    for (a, b) in local.iter().zip(remote) {
                        let close = (a.entropy - b.entropy).abs() <= 1e-6
                            && a.top.len() == b.top.len()
                            && a.top.iter().zip(&b.top).all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() <= 1e-6);
                        if !close {
                            agree = Err(format!("position {} differs from the reference model", a.position));
                        }
                    }
                }
                Err(e) => agree = Err(e.to_string()),
            }
        }
        push("reference_match", agree);
    }

    ProtocolReport {
        endpoint: endpoint.to_string(),
        checks,
    }
}
