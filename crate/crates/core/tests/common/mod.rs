//! Helpers shared by the oracle and acceptance tests.
#![allow(dead_code)]

use distill_core::constraints::{Clause, Comparator, ConstraintSet, CountLiteral, Literal, PhraseLiteral, Polarity};
use distill_core::critic::Label;
use distill_core::decoder::DecoderConfig;
use distill_core::evalkit::ScoredLabeledItem;
use distill_core::lm::{LmError, NGramModel, Scorer};
use distill_core::vocab::{TokenId, Vocabulary, EOS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 9] = ["ant", "bee", "cat", "dog", "eel", "fox", "gnu", "hen", "in"];

/// Fixed pseudo-random next-token distributions keyed by the whole prefix.
pub struct HashedModel {
    vocab: Vocabulary,
    seed: u64,
    temperature: f64,
}

impl HashedModel {
    pub fn new(words: &[&str], seed: u64, temperature: f64) -> Self {
        Self { vocab: Vocabulary::from_words(words), seed, temperature }
    }
}

fn mix(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

impl Scorer for HashedModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        let prefix = distill_core::lm::checked_prefix(&self.vocab, prefix)?;
        let h = prefix.iter().fold(mix(self.seed), |h, &t| mix(h ^ u64::from(t).wrapping_add(0x9e37_79b9)));
        let logits: Vec<f64> = (0..self.vocab.len() as u64)
            .map(|t| (mix(h ^ t.wrapping_mul(0x1234_5678_9abc)) % 10_000) as f64 / 10_000.0 * self.temperature)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        Ok(logits.iter().map(|l| l - z).collect())
    }
}

pub fn random_corpus(words: &[&str], n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=5);
            (0..len).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

/// An n-gram model over exactly `words` (every word appears in the corpus).
pub fn random_ngram(words: &[&str], order: usize, rng: &mut ChaCha8Rng) -> NGramModel {
    let mut corpus = random_corpus(words, 30, rng);
    corpus.push(words.join(" "));
    NGramModel::fit_text(&corpus, order, 0.75).unwrap()
}

pub fn random_constraints(words: &[&str], rng: &mut ChaCha8Rng) -> ConstraintSet {
    let n_clauses = rng.gen_range(0..=3);
    let clauses = (0..n_clauses)
        .map(|_| {
            Clause(
                (0..rng.gen_range(1..=2))
                    .map(|_| match rng.gen_range(0..3) {
                        0 => Literal::Phrase(PhraseLiteral::new(words.choose(rng).unwrap(), Polarity::Negative).unwrap()),
                        1 => {
                            let len = rng.gen_range(1..=2);
                            let p: Vec<&str> = (0..len).map(|_| *words.choose(rng).unwrap()).collect();
                            Literal::Phrase(PhraseLiteral::new(&p.join(" "), Polarity::Positive).unwrap())
                        }
                        _ => {
                            let entries: Vec<&str> = words.choose_multiple(rng, 2).copied().collect();
                            let cmp = if rng.gen_bool(0.5) { Comparator::AtMost } else { Comparator::Exactly };
                            Literal::Count(CountLiteral::new(entries, cmp, rng.gen_range(0..=1)).unwrap())
                        }
                    })
                    .collect(),
            )
        })
        .collect();
    ConstraintSet::new(clauses).unwrap()
}

/// Best finished continuation by enumerating every sequence the decoder
/// could produce, scored with the objective directly.
pub fn brute_force_best<S: Scorer + ?Sized>(
    model: &S,
    prompt: &[TokenId],
    constraints: &ConstraintSet,
    cfg: &DecoderConfig,
) -> Option<(Vec<TokenId>, f64)> {
    let vocab = model.vocab();
    let content: Vec<TokenId> =
        (0..vocab.len() as TokenId).filter(|&t| vocab.is_emittable(t) && t != EOS).collect();
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    let mut consider = |tokens: Vec<TokenId>, logprob: f64| {
        let words: Vec<&str> =
            tokens.iter().filter(|&&t| t != EOS).map(|&t| vocab.token(t).unwrap()).collect();
        let state = constraints.evaluate(&words);
        let score = cfg.score(logprob, tokens.len(), constraints.violation_count(&state, true));
        let better = match &best {
            None => true,
            Some((bt, bs)) => score > *bs || (score == *bs && tokens < *bt),
        };
        if better {
            best = Some((tokens, score));
        }
    };
    // depth-first with the running log-probability
    let mut stack: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((tokens, lp)) = stack.pop() {
        if tokens.len() == cfg.max_len {
            consider(tokens, lp);
            continue;
        }
        let mut ctx = prompt.to_vec();
        ctx.extend_from_slice(&tokens);
        let next = model.next_token_logprobs(&ctx).unwrap();
        if tokens.len() >= cfg.min_len {
            let mut done = tokens.clone();
            done.push(EOS);
            consider(done, lp + next[EOS as usize]);
        }
        for &t in &content {
            let mut longer = tokens.clone();
            longer.push(t);
            stack.push((longer, lp + next[t as usize]));
        }
    }
    best
}

/// Beam width that keeps every hypothesis alive.
pub fn exhaustive_width(content_tokens: usize, max_len: usize) -> usize {
    (0..=max_len).map(|l| content_tokens.pow(l as u32) * 2).sum::<usize>() + 1
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scored(score: f64, valid: bool) -> ScoredLabeledItem {
    ScoredLabeledItem {
        text: format!("item {score}"),
        score,
        label: if valid { Label::Valid } else { Label::Invalid },
        system: "fixture".into(),
        concept: None,
    }
}

/// Ranked fixtures with their average precision worked out by hand.
pub fn ap_fixtures() -> Vec<(Vec<ScoredLabeledItem>, f64)> {
    vec![
        // P@1 = 1, P@3 = 2/3
        (vec![scored(0.9, true), scored(0.8, false), scored(0.7, true), scored(0.6, false)], 5.0 / 6.0),
        // a tied pair enters together at precision 1/2
        (vec![scored(0.9, true), scored(0.9, false), scored(0.5, true)], 0.25 + 1.0 / 3.0),
        // (1 + 2/4 + 3/5) / 3
        (
            vec![scored(0.5, true), scored(0.4, false), scored(0.3, false), scored(0.2, true), scored(0.1, true)],
            0.7,
        ),
    ]
}

/// `u` distinct statements each repeated `d` times. No two statements
/// share a token, so BLEU between different ones is zero.
pub fn duplicated_population(u: usize, d: usize) -> Vec<String> {
    let unique: Vec<String> = (0..u).map(|i| format!("s{i}a s{i}b s{i}c s{i}d")).collect();
    (0..d).flat_map(|_| unique.iter().cloned()).collect()
}

/// Every file under `root`, keyed by relative path.
pub fn dir_snapshot(root: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
