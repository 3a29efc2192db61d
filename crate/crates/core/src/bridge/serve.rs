use std::io::{BufRead, Write};

use super::protocol::{Op, Payload, ScorerRequest, ScorerResponse, PROTOCOL_VERSION};
use crate::lm::{LmError, NGramModel, Scorer, UniformModel};
use crate::vocab::{TokenId, Vocabulary};

/// A scorer that can sit behind a session.
pub trait ServedModel: Scorer {
    fn supports_finetune(&self) -> bool {
        false
    }

    fn finetune_texts(&mut self, _texts: &[String], _weight: f64) -> Result<(), String> {
        Err("this model does not support fine-tuning".into())
    }
}

impl ServedModel for UniformModel {}

impl ServedModel for NGramModel {
    fn supports_finetune(&self) -> bool {
        true
    }

    fn finetune_texts(&mut self, texts: &[String], weight: f64) -> Result<(), String> {
        let data: Vec<_> = texts.iter().map(|t| self.vocab().encode(t)).filter(|s| !s.is_empty()).collect();
        let (next, _) = self.finetune(&data, weight).map_err(|e| e.to_string())?;
        *self = next;
        Ok(())
    }
}

/// The conformance model every bridge ships.
///
/// Over a vocabulary of `n` tokens, take the prefix without a leading `<s>`
/// as ids `x_1..x_m` and let `s = (m + x_1 + ... + x_m) mod n`. Token `t`
/// gets rank `r = ((t + s) mod n) + 1` and log-probability
/// `-min(r, n - 1) * ln 2`. The probabilities are powers of two summing to
/// exactly one, so any IEEE-754 implementation reproduces them bit for bit.
#[derive(Debug, Clone)]
pub struct DyadicTestModel {
    vocab: Vocabulary,
}

/// Words of the conformance model's default vocabulary.
pub const TEST_MODEL_WORDS: [&str; 8] = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"];

impl DyadicTestModel {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }
}

impl Default for DyadicTestModel {
    fn default() -> Self {
        Self::new(Vocabulary::from_words(TEST_MODEL_WORDS))
    }
}

impl Scorer for DyadicTestModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        let prefix = crate::lm::checked_prefix(&self.vocab, prefix)?;
        let n = self.vocab.len() as u64;
        let s = prefix.iter().fold(prefix.len() as u64 % n, |acc, &x| (acc + u64::from(x)) % n);
        Ok((0..n)
            .map(|t| {
                let rank = (t + s) % n + 1;
                -(rank.min(n - 1) as f64) * std::f64::consts::LN_2
            })
            .collect())
    }
}

impl ServedModel for DyadicTestModel {}

/// Handles one request. Returns the response and whether the session ends.
pub fn handle_line<M: ServedModel + ?Sized>(model: &mut M, last_id: &mut Option<u64>, line: &str) -> (ScorerResponse, bool) {
    let req: ScorerRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(line).ok().and_then(|v| v.get("id")?.as_u64());
            return (ScorerResponse::error(id, format!("malformed request: {e}")), false);
        }
    };
    if last_id.is_some_and(|prev| req.id <= prev) {
        return (
            ScorerResponse::error(Some(req.id), format!("request id {} does not exceed {}", req.id, last_id.unwrap())),
            false,
        );
    }
    *last_id = Some(req.id);
    match req.op {
        Op::Vocab => (
            ScorerResponse::ok(
                req.id,
                Payload::Vocab {
                    protocol: PROTOCOL_VERSION,
                    tokens: model.vocab().tokens().to_vec(),
                    finetune: model.supports_finetune(),
                },
            ),
            false,
        ),
        Op::Logprobs { prefix } => match model.next_token_logprobs(&prefix) {
            Ok(logprobs) => (ScorerResponse::ok(req.id, Payload::Logprobs { logprobs }), false),
            Err(e) => (ScorerResponse::error(Some(req.id), e.to_string()), false),
        },
        Op::Finetune { texts, weight } => match model.finetune_texts(&texts, weight) {
            Ok(()) => (ScorerResponse::ok(req.id, Payload::Ack {}), false),
            Err(e) => (ScorerResponse::error(Some(req.id), e), false),
        },
        Op::Shutdown => (ScorerResponse::ok(req.id, Payload::Ack {}), true),
    }
}

/// Answers requests in order until `shutdown` or end of input. Malformed
/// requests get error responses; the session goes on.
pub fn serve<M, R, W>(model: &mut M, input: R, mut output: W) -> std::io::Result<()>
where
    M: ServedModel + ?Sized,
    R: BufRead,
    W: Write,
{
    let mut last_id = None;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (resp, done) = handle_line(model, &mut last_id, &line);
        writeln!(output, "{}", resp.to_line())?;
        output.flush()?;
        if done {
            break;
        }
    }
    Ok(())
}
