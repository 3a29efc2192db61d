use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::protocol::{Op, Payload, ScorerRequest, ScorerResponse, Status, PROTOCOL_VERSION};
use super::transport::Transport;
use super::BridgeError;
use crate::decoder::{decode, decode_trace, DecodeJob, DecoderConfig};
use crate::lm::{checked_prefix, LmError, Scorer};
use crate::vocab::{TokenId, Vocabulary};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

struct Session {
    transport: Box<dyn Transport>,
    next_id: u64,
    broken: Option<String>,
}

/// A [`Scorer`] backed by a remote session. Calls are serialized: one
/// request in flight at a time.
pub struct BridgeScorer {
    session: Mutex<Session>,
    vocab: Vocabulary,
    finetune: bool,
    timeout: Duration,
}

impl BridgeScorer {
    /// Performs the `vocab` handshake.
    pub fn connect(transport: Box<dyn Transport>, timeout: Duration) -> Result<Self, BridgeError> {
        let mut session = Session { transport, next_id: 1, broken: None };
        let payload = round_trip(&mut session, Op::Vocab, timeout)?;
        let Payload::Vocab { protocol, tokens, finetune } = payload else {
            return Err(BridgeError::Protocol("vocab response carries no token list".into()));
        };
        if protocol != PROTOCOL_VERSION {
            return Err(BridgeError::Protocol(format!(
                "bridge speaks protocol {protocol}, expected {PROTOCOL_VERSION}"
            )));
        }
        let vocab = Vocabulary::from_listing(tokens).map_err(|e| BridgeError::Protocol(e.to_string()))?;
        Ok(Self { session: Mutex::new(session), vocab, finetune, timeout })
    }

    pub fn supports_finetune(&self) -> bool {
        self.finetune
    }

    pub fn finetune(&self, texts: Vec<String>, weight: f64) -> Result<(), BridgeError> {
        if !self.finetune {
            return Err(BridgeError::Unsupported("finetune"));
        }
        self.call(Op::Finetune { texts, weight }).map(|_| ())
    }

    pub fn shutdown(&self) -> Result<(), BridgeError> {
        self.call(Op::Shutdown).map(|_| ())
    }

    fn call(&self, op: Op) -> Result<Payload, BridgeError> {
        let mut session = self.session.lock().unwrap_or_else(|p| p.into_inner());
        round_trip(&mut session, op, self.timeout)
    }
}

fn round_trip(session: &mut Session, op: Op, timeout: Duration) -> Result<Payload, BridgeError> {
    if let Some(reason) = &session.broken {
        return Err(BridgeError::Closed(format!("session unusable after earlier failure: {reason}")));
    }
    let id = session.next_id;
    session.next_id += 1;
    let result = exchange(session.transport.as_mut(), ScorerRequest { id, op }, timeout);
    // A lost or garbled reply leaves the stream position unknown.
    if let Err(e @ (BridgeError::Timeout(_) | BridgeError::Truncated(_) | BridgeError::Closed(_) | BridgeError::Protocol(_))) =
        &result
    {
        session.broken = Some(e.to_string());
    }
    result
}

fn exchange(transport: &mut dyn Transport, req: ScorerRequest, timeout: Duration) -> Result<Payload, BridgeError> {
    transport.send(&req.to_line())?;
    let line = transport.recv(timeout)?;
    let resp: ScorerResponse =
        serde_json::from_str(&line).map_err(|e| BridgeError::Protocol(format!("unparseable response: {e}")))?;
    if resp.id != Some(req.id) {
        if resp.status == Status::Error {
            if let Payload::Error { message } = resp.payload {
                return Err(BridgeError::Protocol(format!("error for unidentified request: {message}")));
            }
        }
        return Err(BridgeError::Protocol(format!("response id {:?} does not echo request id {}", resp.id, req.id)));
    }
    match (resp.status, resp.payload) {
        (Status::Error, Payload::Error { message }) => Err(BridgeError::Remote(message)),
        (Status::Error, _) => Err(BridgeError::Remote("unspecified error".into())),
        (Status::Ok, Payload::Error { message }) => Err(BridgeError::Protocol(format!("ok status with error message {message:?}"))),
        (Status::Ok, payload) => Ok(payload),
    }
}

/// Checks a logprob payload against the vocabulary size and normalization.
pub fn check_logprobs(values: &[f64], vocab_size: usize) -> Result<(), String> {
    if values.len() != vocab_size {
        return Err(format!("{} logprobs for a vocabulary of {vocab_size}", values.len()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite() || *v > 0.0) {
        return Err(format!("logprob {} at id {i} is not a finite non-positive number", values[i]));
    }
    let mass: f64 = values.iter().map(|v| v.exp()).sum();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(format!("probabilities sum to {mass}"));
    }
    Ok(())
}

impl Scorer for BridgeScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        let prefix = checked_prefix(&self.vocab, prefix)?;
        match self.call(Op::Logprobs { prefix: prefix.to_vec() }) {
            Ok(Payload::Logprobs { logprobs }) => {
                check_logprobs(&logprobs, self.vocab.len()).map_err(LmError::Transport)?;
                Ok(logprobs)
            }
            Ok(other) => Err(LmError::Transport(format!("expected logprobs, got {other:?}"))),
            Err(e) => Err(LmError::Transport(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub job_id: usize,
    /// Decoding step at which the beams first differ; `None` when only the
    /// returned generations differ.
    pub step: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub calls: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub passed: bool,
    pub jobs_checked: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<Divergence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ConformanceReport {
    fn failed(jobs_checked: usize, divergence: Option<Divergence>, error: Option<String>) -> Self {
        Self { passed: false, jobs_checked, divergence, latency: None, error }
    }
}

/// Decodes `jobs` through the bridge and through `reference`, comparing
/// every beam and the serialized generations. Transport failures are
/// reported as failed conformance, never as a hang.
pub fn bridge_check<R: Scorer + ?Sized>(
    bridge: &BridgeScorer,
    reference: &R,
    jobs: &[DecodeJob],
    cfg: &DecoderConfig,
    latency_calls: usize,
) -> ConformanceReport {
    if bridge.vocab() != reference.vocab() {
        return ConformanceReport::failed(0, None, Some("vocabularies differ".into()));
    }
    for (n, job) in jobs.iter().enumerate() {
        let prompt = reference.vocab().encode(&job.prompt);
        let (ours, theirs) = match (
            decode_trace(reference, &prompt, &job.constraints, cfg),
            decode_trace(bridge, &prompt, &job.constraints, cfg),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) => return ConformanceReport::failed(n, None, Some(format!("reference decode failed: {e}"))),
            (_, Err(e)) => return ConformanceReport::failed(n, None, Some(format!("bridge decode failed: {e}"))),
        };
        let steps = ours.len().max(theirs.len());
        for step in 0..steps {
            let (a, b) = (ours.get(step), theirs.get(step));
            if a != b {
                let show = |beam: Option<&Vec<crate::decoder::Hypothesis>>| {
                    beam.map(|hs| hs.iter().map(|h| format!("{:?}@{}", h.tokens, h.logprob)).collect::<Vec<_>>())
                };
                let detail = format!("reference beam {:?} vs bridge beam {:?}", show(a), show(b));
                return ConformanceReport::failed(
                    n,
                    Some(Divergence { job_id: job.id, step: Some(step), detail }),
                    None,
                );
            }
        }
        let (a, b) = (generation_lines(reference, job, cfg), generation_lines(bridge, job, cfg));
        if a != b {
            let detail = format!("reference {a:?} vs bridge {b:?}");
            return ConformanceReport::failed(n, Some(Divergence { job_id: job.id, step: None, detail }), None);
        }
    }
    let latency = match probe_latency(bridge, latency_calls) {
        Ok(l) => l,
        Err(e) => return ConformanceReport::failed(jobs.len(), None, Some(e.to_string())),
    };
    ConformanceReport { passed: true, jobs_checked: jobs.len(), divergence: None, latency, error: None }
}

fn generation_lines<S: Scorer + ?Sized>(model: &S, job: &DecodeJob, cfg: &DecoderConfig) -> Result<Vec<String>, String> {
    let prompt = model.vocab().encode(&job.prompt);
    decode(model, &prompt, &job.constraints, cfg)
        .map(|gs| gs.iter().map(|g| g.to_json_line()).collect())
        .map_err(|e| e.to_string())
}

/// Times `calls` logprob requests on the empty prefix.
pub fn probe_latency(bridge: &BridgeScorer, calls: usize) -> Result<Option<LatencyReport>, LmError> {
    if calls == 0 {
        return Ok(None);
    }
    let mut ms = Vec::with_capacity(calls);
    for _ in 0..calls {
        let t = Instant::now();
        bridge.next_token_logprobs(&[])?;
        ms.push(t.elapsed().as_secs_f64() * 1000.0);
    }
    ms.sort_by(f64::total_cmp);
    Ok(Some(LatencyReport {
        calls,
        mean_ms: ms.iter().sum::<f64>() / calls as f64,
        p50_ms: ms[calls / 2],
        max_ms: ms[calls - 1],
    }))
}
