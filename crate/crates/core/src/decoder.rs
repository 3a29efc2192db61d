//! Penalized beam search under lexical constraints.
//!
//! A hypothesis is ranked by
//!
//! ```text
//! score = logprob / len^length_penalty - lambda * violated_clauses
//! ```
//!
//! where `len` counts generated tokens including the end marker. Unfinished
//! hypotheses are charged only for clauses already violated for good;
//! finished ones (end marker emitted, or `max_len` content tokens reached)
//! have every pending literal resolved. Violations are penalized, never
//! pruned outright. Equal scores are broken by the lexicographically smaller
//! token-id sequence.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{ConstraintSet, ConstraintState};
use crate::generation::Generation;
use crate::lm::{LmError, Scorer};
use crate::vocab::{TokenId, TokenSequence, EOS};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decoder configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("no hypothesis finished: {0}")]
    NoCompleteHypothesis(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub beam_size: usize,
    pub num_returns: usize,
    /// Maximum generated tokens, end marker excluded.
    pub max_len: usize,
    /// Minimum generated tokens before the end marker may be emitted.
    pub min_len: usize,
    pub length_penalty: f64,
    pub lambda: f64,
    /// Fill beam slots round-robin across clause-satisfaction signatures.
    pub diversity_bucketing: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            beam_size: 10,
            num_returns: 10,
            max_len: 30,
            min_len: 2,
            length_penalty: 0.1,
            lambda: 20.0,
            diversity_bucketing: false,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let fail = |m: String| Err(DecodeError::Config(m));
        if self.beam_size == 0 {
            return fail("beam_size must be positive".into());
        }
        if self.num_returns == 0 || self.num_returns > self.beam_size {
            return fail(format!(
                "num_returns must lie in 1..={}, got {}",
                self.beam_size, self.num_returns
            ));
        }
        if self.max_len == 0 || self.min_len > self.max_len {
            return fail(format!("need 0 < min_len <= max_len, got {} and {}", self.min_len, self.max_len));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return fail(format!("lambda must be a finite non-negative number, got {}", self.lambda));
        }
        if !self.length_penalty.is_finite() {
            return fail("length_penalty must be finite".into());
        }
        Ok(())
    }

    /// The ranking objective.
    pub fn score(&self, logprob: f64, num_tokens: usize, violations: usize) -> f64 {
        logprob / (num_tokens as f64).powf(self.length_penalty) - self.lambda * violations as f64
    }
}

/// A beam item. `tokens` holds only generated tokens, not the prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub state: ConstraintState,
    pub finished: bool,
}

impl Hypothesis {
    pub fn root(constraints: &ConstraintSet) -> Self {
        Self { tokens: Vec::new(), logprob: 0.0, state: constraints.initial_state(), finished: false }
    }

    /// Generated tokens excluding the end marker.
    pub fn content_len(&self) -> usize {
        self.tokens.len() - usize::from(self.tokens.last() == Some(&EOS))
    }

    /// Terminal violations once finished. Before that, clauses that can no
    /// longer hold within the `max_len` budget.
    pub fn violations(&self, constraints: &ConstraintSet, cfg: &DecoderConfig) -> usize {
        if self.finished {
            constraints.violation_count(&self.state, true)
        } else {
            constraints.violation_count_within(&self.state, cfg.max_len.saturating_sub(self.content_len()))
        }
    }

    pub fn score(&self, constraints: &ConstraintSet, cfg: &DecoderConfig) -> f64 {
        cfg.score(self.logprob, self.tokens.len(), self.violations(constraints, cfg))
    }
}

fn rank(a: &(f64, Hypothesis), b: &(f64, Hypothesis)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.tokens.cmp(&b.1.tokens))
}

/// One expansion round: every unfinished hypothesis is extended by every
/// emittable token, finished ones carry over, and the best `beam_size`
/// survive.
pub fn step<S: Scorer + ?Sized>(
    model: &S,
    prompt: &[TokenId],
    beam: &[Hypothesis],
    constraints: &ConstraintSet,
    cfg: &DecoderConfig,
) -> Result<Vec<Hypothesis>, DecodeError> {
    let vocab = model.vocab();
    let mut candidates: Vec<(f64, Hypothesis)> = Vec::new();
    let mut context = prompt.to_vec();
    for hyp in beam {
        if hyp.finished {
            candidates.push((hyp.score(constraints, cfg), hyp.clone()));
            continue;
        }
        context.truncate(prompt.len());
        context.extend_from_slice(&hyp.tokens);
        let logprobs = model.next_token_logprobs(&context)?;
        let content = hyp.content_len();
        for (tok, &lp) in (0..vocab.len() as TokenId).zip(&logprobs) {
            if !vocab.is_emittable(tok) || (tok == EOS && content < cfg.min_len) {
                continue;
            }
            let state = if tok == EOS {
                hyp.state.clone()
            } else {
                constraints.advance(&hyp.state, vocab.token(tok).expect("emittable id"))
            };
            let mut tokens = hyp.tokens.clone();
            tokens.push(tok);
            let next = Hypothesis {
                finished: tok == EOS || content + 1 >= cfg.max_len,
                tokens,
                logprob: hyp.logprob + lp,
                state,
            };
            candidates.push((next.score(constraints, cfg), next));
        }
    }
    candidates.sort_by(rank);
    let chosen = if cfg.diversity_bucketing {
        bucketed(candidates, constraints, cfg.beam_size)
    } else {
        candidates.truncate(cfg.beam_size);
        candidates
    };
    Ok(chosen.into_iter().map(|(_, h)| h).collect())
}

/// Round-robin over clause-satisfaction signatures, groups visited in order
/// of their best member. Input must already be ranked.
fn bucketed(ranked: Vec<(f64, Hypothesis)>, constraints: &ConstraintSet, k: usize) -> Vec<(f64, Hypothesis)> {
    let mut groups: Vec<(u64, VecDeque<(f64, Hypothesis)>)> = Vec::new();
    for item in ranked {
        let sig = constraints.signature(&item.1.state);
        match groups.iter_mut().find(|(s, _)| *s == sig) {
            Some((_, g)) => g.push_back(item),
            None => groups.push((sig, VecDeque::from([item]))),
        }
    }
    let mut out = Vec::with_capacity(k);
    while out.len() < k && groups.iter().any(|(_, g)| !g.is_empty()) {
        for (_, g) in groups.iter_mut() {
            if out.len() == k {
                break;
            }
            if let Some(item) = g.pop_front() {
                out.push(item);
            }
        }
    }
    out.sort_by(rank);
    out
}

/// Runs the search and returns every beam, starting from the root.
pub fn decode_trace<S: Scorer + ?Sized>(
    model: &S,
    prompt: &TokenSequence,
    constraints: &ConstraintSet,
    cfg: &DecoderConfig,
) -> Result<Vec<Vec<Hypothesis>>, DecodeError> {
    cfg.validate()?;
    prompt.validate(model.vocab()).map_err(LmError::from)?;
    let mut trace = vec![vec![Hypothesis::root(constraints)]];
    loop {
        let beam = trace.last().expect("root beam");
        if beam.is_empty() || beam.iter().all(|h| h.finished) {
            break;
        }
        let next = step(model, prompt.ids(), beam, constraints, cfg)?;
        trace.push(next);
    }
    Ok(trace)
}

/// Top `num_returns` finished hypotheses, best first.
pub fn decode<S: Scorer + ?Sized>(
    model: &S,
    prompt: &TokenSequence,
    constraints: &ConstraintSet,
    cfg: &DecoderConfig,
) -> Result<Vec<Generation>, DecodeError> {
    let trace = decode_trace(model, prompt, constraints, cfg)?;
    let beam = trace.last().expect("root beam");
    let vocab = model.vocab();
    let prompt_text = vocab.decode(prompt.ids());
    let out: Vec<Generation> = beam
        .iter()
        .filter(|h| h.finished && h.content_len() >= cfg.min_len)
        .take(cfg.num_returns)
        .map(|h| {
            let violation_count = h.violations(constraints, cfg);
            Generation {
                job_id: 0,
                prompt: prompt_text.clone(),
                text: vocab.decode(&h.tokens),
                logprob: h.logprob,
                num_tokens: h.tokens.len(),
                violation_count,
                final_score: cfg.score(h.logprob, h.tokens.len(), violation_count),
                critic_score: None,
                iteration: None,
            }
        })
        .collect();
    if out.is_empty() {
        return Err(DecodeError::NoCompleteHypothesis(format!(
            "no hypothesis reached min_len {} within max_len {} after {} steps",
            cfg.min_len,
            cfg.max_len,
            trace.len() - 1
        )));
    }
    Ok(out)
}

/// A prompt with the constraints it is decoded under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeJob {
    pub id: usize,
    pub prompt: String,
    pub constraints: ConstraintSet,
}

#[derive(Debug)]
pub struct JobOutcome {
    pub job_id: usize,
    pub result: Result<Vec<Generation>, DecodeError>,
}

fn run_job<S: Scorer + ?Sized>(model: &S, job: &DecodeJob, cfg: &DecoderConfig) -> JobOutcome {
    let prompt = model.vocab().encode(&job.prompt);
    let result = decode(model, &prompt, &job.constraints, cfg).map(|gens| {
        gens.into_iter()
            .map(|g| Generation { job_id: job.id, prompt: job.prompt.clone(), ..g })
            .collect()
    });
    JobOutcome { job_id: job.id, result }
}

/// Decodes every job, in job order, on `parallelism` worker threads. The
/// output does not depend on `parallelism`.
pub fn batch_decode<S: Scorer + ?Sized>(
    model: &S,
    jobs: &[DecodeJob],
    cfg: &DecoderConfig,
    parallelism: usize,
) -> Result<Vec<JobOutcome>, DecodeError> {
    cfg.validate()?;
    if parallelism <= 1 || jobs.len() <= 1 {
        return Ok(jobs.iter().map(|j| run_job(model, j, cfg)).collect());
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| DecodeError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(|j| run_job(model, j, cfg)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{Comparator, Literal};
    use crate::lm::{NGramModel, UniformModel};
    use crate::vocab::Vocabulary;

    fn uniform(words: &[&str]) -> UniformModel {
        UniformModel::new(Vocabulary::from_words(words))
    }

    #[test]
    fn config_defaults_match_published_settings() {
        let cfg = DecoderConfig::default();
        assert_eq!((cfg.beam_size, cfg.max_len, cfg.min_len), (10, 30, 2));
        assert_eq!(cfg.length_penalty, 0.1);
        assert_eq!(cfg.lambda, 20.0);
        assert!(!cfg.diversity_bucketing);
    }

    #[test]
    fn config_validation() {
        let bad = DecoderConfig { num_returns: 11, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DecoderConfig { min_len: 5, max_len: 4, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DecoderConfig { lambda: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn uniform_ties_break_by_token_id() {
        let m = uniform(&["a", "b", "c"]);
        let cfg = DecoderConfig { beam_size: 4, num_returns: 1, ..Default::default() };
        let set = ConstraintSet::empty();
        let next = step(&m, &[], &[Hypothesis::root(&set)], &set, &cfg).unwrap();
        // EOS is masked before min_len, so the word tokens 3, 4, 5 remain.
        let firsts: Vec<TokenId> = next.iter().map(|h| h.tokens[0]).collect();
        assert_eq!(firsts, vec![3, 4, 5]);
    }

    #[test]
    fn penalty_orders_equal_logprob_successors() {
        let m = uniform(&["in", "cats"]);
        let set = ConstraintSet::conjunction(vec![Literal::count(["in"], Comparator::AtMost, 0).unwrap()]);
        let cfg = DecoderConfig { beam_size: 2, num_returns: 1, lambda: 1.0, ..Default::default() };
        let next = step(&m, &[], &[Hypothesis::root(&set)], &set, &cfg).unwrap();
        let cats = m.vocab().id("cats").unwrap();
        assert_eq!(next[0].tokens, vec![cats]);
        assert_eq!(next[1].violations(&set, &cfg), 1, "violating successor kept, not dropped");
    }

    #[test]
    fn min_len_respected() {
        let m = uniform(&["a", "b"]);
        let cfg = DecoderConfig { beam_size: 10, num_returns: 10, max_len: 4, min_len: 3, ..Default::default() };
        let gens = decode(&m, &TokenSequence::default(), &ConstraintSet::empty(), &cfg).unwrap();
        assert!(!gens.is_empty());
        assert!(gens.iter().all(|g| g.text.split(' ').count() >= 3));
    }

    #[test]
    fn no_content_tokens_is_diagnosed() {
        let m = UniformModel::new(Vocabulary::from_words(Vec::<String>::new()));
        let cfg = DecoderConfig { beam_size: 2, num_returns: 1, max_len: 3, min_len: 1, ..Default::default() };
        let err = decode(&m, &TokenSequence::default(), &ConstraintSet::empty(), &cfg).unwrap_err();
        assert!(matches!(err, DecodeError::NoCompleteHypothesis(_)));
    }

    #[test]
    fn score_is_recomputable_from_generation() {
        let m = NGramModel::fit_text(&["birds can fly", "fish can swim", "birds can sing"], 3, 0.75).unwrap();
        let cfg = DecoderConfig { beam_size: 5, num_returns: 5, max_len: 4, min_len: 1, ..Default::default() };
        let set = crate::constraints::build_standard_set("birds", "can", None).unwrap();
        let prompt = m.vocab().encode("birds can");
        for g in decode(&m, &prompt, &set, &cfg).unwrap() {
            assert_eq!(g.final_score, cfg.score(g.logprob, g.num_tokens, g.violation_count));
        }
    }

    #[test]
    fn finished_hypotheses_are_frozen() {
        let m = NGramModel::fit_text(&["a b", "a b c d"], 2, 0.5).unwrap();
        let cfg = DecoderConfig { beam_size: 3, num_returns: 3, max_len: 5, min_len: 1, ..Default::default() };
        let trace = decode_trace(&m, &m.vocab().encode("a"), &ConstraintSet::empty(), &cfg).unwrap();
        for pair in trace.windows(2) {
            for h in pair[0].iter().filter(|h| h.finished) {
                if let Some(later) = pair[1].iter().find(|x| x.tokens == h.tokens) {
                    assert!(later.finished);
                    assert_eq!(later.logprob, h.logprob);
                }
            }
        }
    }

    #[test]
    fn bucketing_spreads_signatures() {
        let m = uniform(&["cat", "dog", "eel"]);
        let set = ConstraintSet::conjunction(vec![Literal::forbid("cat").unwrap()]);
        let cfg = DecoderConfig {
            beam_size: 2,
            num_returns: 2,
            max_len: 2,
            min_len: 1,
            lambda: 0.0,
            diversity_bucketing: true,
            ..Default::default()
        };
        let next = step(&m, &[], &[Hypothesis::root(&set)], &set, &cfg).unwrap();
        let sigs: Vec<u64> = next.iter().map(|h| set.signature(&h.state)).collect();
        assert!(sigs.contains(&0) && sigs.contains(&1), "{sigs:?}");
    }

    #[test]
    fn batch_preserves_job_order_and_ids() {
        let m = NGramModel::fit_text(&["birds can fly", "fish can swim"], 2, 0.75).unwrap();
        let cfg = DecoderConfig { beam_size: 3, num_returns: 2, max_len: 3, min_len: 1, ..Default::default() };
        let jobs: Vec<DecodeJob> = (0..5)
            .map(|i| DecodeJob { id: 10 + i, prompt: "birds can".into(), constraints: ConstraintSet::empty() })
            .collect();
        let out = batch_decode(&m, &jobs, &cfg, 3).unwrap();
        assert_eq!(out.iter().map(|o| o.job_id).collect::<Vec<_>>(), vec![10, 11, 12, 13, 14]);
        for o in &out {
            let gens = o.result.as_ref().unwrap();
            assert!(gens.iter().all(|g| g.job_id == o.job_id && g.prompt == "birds can"));
        }
    }
}
