//! Sentence-level BLEU with multiple references.
//!
//! Modified n-gram precisions are clipped by the largest count of each
//! n-gram in any one reference. Orders longer than the candidate are left
//! out of the geometric mean, so a candidate always scores 1 against
//! itself. Zero precisions above order one are smoothed to
//! `epsilon / total`; no unigram overlap at all gives 0. The brevity penalty
//! uses the reference length closest to the candidate's (shorter on ties).

use std::collections::HashMap;

use crate::vocab::tokenize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuConfig {
    pub max_n: usize,
    pub epsilon: f64,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self { max_n: 4, epsilon: 0.1 }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Reference side of BLEU, precomputed once for scoring many candidates.
#[derive(Debug, Clone)]
pub struct BleuReferences {
    cfg: BleuConfig,
    max_counts: HashMap<Vec<String>, usize>,
    lengths: Vec<usize>,
}

impl BleuReferences {
    pub fn new<S: AsRef<str>>(references: &[S], cfg: BleuConfig) -> Self {
        let mut max_counts: HashMap<Vec<String>, usize> = HashMap::new();
        let mut lengths = Vec::with_capacity(references.len());
        for r in references {
            let toks = tokenize(r.as_ref());
            lengths.push(toks.len());
            for n in 1..=cfg.max_n {
                for (g, c) in ngram_counts(&toks, n) {
                    let e = max_counts.entry(g.to_vec()).or_insert(0);
                    *e = (*e).max(c);
                }
            }
        }
        Self { cfg, max_counts, lengths }
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn score(&self, candidate: &str) -> f64 {
        let cand = tokenize(candidate);
        if cand.is_empty() || self.lengths.is_empty() {
            return 0.0;
        }
        let orders = self.cfg.max_n.min(cand.len());
        let mut log_sum = 0.0;
        for n in 1..=orders {
            let total = cand.len() + 1 - n;
            let clipped: usize = ngram_counts(&cand, n)
                .into_iter()
                .map(|(g, c)| c.min(self.max_counts.get(g).copied().unwrap_or(0)))
                .sum();
            if clipped == 0 && n == 1 {
                return 0.0;
            }
            let p = if clipped > 0 { clipped as f64 / total as f64 } else { self.cfg.epsilon / total as f64 };
            log_sum += p.ln();
        }
        let c = cand.len();
        let r = self
            .lengths
            .iter()
            .copied()
            .min_by_key(|&r| (r.abs_diff(c), r))
            .expect("non-empty references");
        let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        bp * (log_sum / orders as f64).exp()
    }
}

pub fn bleu<S: AsRef<str>>(candidate: &str, references: &[S], cfg: BleuConfig) -> f64 {
    BleuReferences::new(references, cfg).score(candidate)
}
