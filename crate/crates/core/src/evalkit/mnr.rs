use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bleu::{BleuConfig, BleuReferences};
use super::EvalError;
use crate::fnv1a;

/// Chapman's estimator `(n1+1)(n2+1)/(m+1) - 1`.
pub fn chapman(n1: usize, n2: usize, m: usize) -> f64 {
    (n1 as f64 + 1.0) * (n2 as f64 + 1.0) / (m as f64 + 1.0) - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MnrEstimate {
    pub n1: usize,
    pub n2: usize,
    pub m: usize,
    pub estimate: f64,
}

impl MnrEstimate {
    pub fn new(n1: usize, n2: usize, m: usize) -> Self {
        Self { n1, n2, m, estimate: chapman(n1, n2, m) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MnrConfig {
    pub capture_fraction: f64,
    pub bleu_threshold: f64,
    #[serde(skip, default)]
    pub bleu: BleuConfig,
}

impl Default for MnrConfig {
    fn default() -> Self {
        Self { capture_fraction: 0.30, bleu_threshold: 0.85, bleu: BleuConfig::default() }
    }
}

impl MnrConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.capture_fraction > 0.0 && self.capture_fraction <= 1.0) {
            return Err(EvalError::Config(format!(
                "capture fraction must be in (0, 1], got {}",
                self.capture_fraction
            )));
        }
        if self.bleu_threshold.is_nan() {
            return Err(EvalError::Config("bleu threshold is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnrReport {
    pub seed: u64,
    pub per_concept: BTreeMap<String, MnrEstimate>,
    /// Concepts with fewer than two generations, which cannot be sampled twice.
    pub skipped: Vec<String>,
    /// Unweighted mean of the per-concept estimates.
    pub mean: f64,
    pub total: f64,
}

fn capture<'a>(items: &'a [String], size: usize, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for i in sample(rng, items.len(), size).into_iter() {
        let s = items[i].as_str();
        if seen.insert(s) {
            out.push(s);
        }
    }
    out
}

/// Estimates a single concept's population of distinct statements.
///
/// Each capture is a without-replacement sample of `round(fraction * n)`
/// items, reduced to its distinct strings. A second-capture item counts as
/// recaptured when its BLEU against the first capture exceeds the threshold.
pub fn estimate_concept(items: &[String], cfg: &MnrConfig, rng: &mut ChaCha8Rng) -> MnrEstimate {
    let n = items.len();
    let size = ((cfg.capture_fraction * n as f64).round() as usize).clamp(1, n);
    let first = capture(items, size, rng);
    let second = capture(items, size, rng);
    let exact: BTreeSet<&str> = first.iter().copied().collect();
    let refs = BleuReferences::new(&first, cfg.bleu);
    let m = second
        .iter()
        .filter(|s| {
            let score = if exact.contains(*s) { 1.0 } else { refs.score(s) };
            score > cfg.bleu_threshold
        })
        .count();
    MnrEstimate::new(first.len(), second.len(), m)
}

pub fn estimate_unique(
    groups: &BTreeMap<String, Vec<String>>,
    cfg: &MnrConfig,
    seed: u64,
) -> Result<MnrReport, EvalError> {
    cfg.validate()?;
    if groups.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut per_concept = BTreeMap::new();
    let mut skipped = Vec::new();
    for (concept, items) in groups {
        if items.len() < 2 {
            tracing::warn!(concept = %concept, size = items.len(), "skipping concept with fewer than two generations");
            skipped.push(concept.clone());
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&[concept.as_bytes()]));
        per_concept.insert(concept.clone(), estimate_concept(items, cfg, &mut rng));
    }
    if per_concept.is_empty() {
        return Err(EvalError::Empty);
    }
    let total: f64 = per_concept.values().map(|e| e.estimate).sum();
    Ok(MnrReport { seed, mean: total / per_concept.len() as f64, total, per_concept, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnrSummary {
    pub seeds: Vec<u64>,
    /// Mean over seeds of each run's per-concept mean.
    pub mean: f64,
    pub std_dev: f64,
    pub runs: Vec<MnrReport>,
}

/// Repeats `estimate_unique` for seeds `base_seed, base_seed + 1, ...`.
pub fn estimate_unique_seeds(
    groups: &BTreeMap<String, Vec<String>>,
    cfg: &MnrConfig,
    base_seed: u64,
    seeds: usize,
) -> Result<MnrSummary, EvalError> {
    if seeds == 0 {
        return Err(EvalError::Config("need at least one seed".into()));
    }
    let runs = (0..seeds as u64)
        .map(|i| estimate_unique(groups, cfg, base_seed.wrapping_add(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let k = runs.len() as f64;
    let mean = runs.iter().map(|r| r.mean).sum::<f64>() / k;
    let var = runs.iter().map(|r| (r.mean - mean).powi(2)).sum::<f64>() / k;
    Ok(MnrSummary { seeds: runs.iter().map(|r| r.seed).collect(), mean, std_dev: var.sqrt(), runs })
}

/// Groups generations by concept, using `fallback` for items without one.
pub fn group_by_concept<I>(items: I) -> BTreeMap<String, Vec<String>>
where
    I: IntoIterator<Item = (Option<String>, String)>,
{
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (concept, text) in items {
        groups.entry(concept.unwrap_or_default()).or_default().push(text);
    }
    groups
}
