//! Validity critics: a trainable logistic-regression classifier over hashed
//! n-gram features, an exact oracle wrapper, and threshold filtering.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fnv1a;
use crate::generation::Generation;
use crate::vocab::tokenize;

pub const CRITIC_MAGIC: &str = "distill-critic";
pub const CRITIC_VERSION: u32 = 1;
pub const DEFAULT_DELTA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CriticError {
    #[error("training data must contain both valid and invalid examples")]
    SingleClass,
    #[error("invalid critic configuration: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that rates a statement's validity in `[0, 1]`.
pub trait Critic: Send + Sync {
    fn score(&self, text: &str) -> f64;
}

impl<C: Critic + ?Sized> Critic for &C {
    fn score(&self, text: &str) -> f64 {
        (**self).score(text)
    }
}

impl<C: Critic + ?Sized> Critic for std::sync::Arc<C> {
    fn score(&self, text: &str) -> f64 {
        (**self).score(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Valid,
    Invalid,
}

impl std::str::FromStr for Label {
    type Err = String;

    /// Accepts binary labels and the four annotation choices; only "true"
    /// maps to valid.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "valid" | "true" | "1" | "yes" => Ok(Label::Valid),
            "invalid" | "false" | "0" | "no" | "don't know" | "dont know" | "dont_know" | "garbled"
            | "garbled output" => Ok(Label::Invalid),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: Label,
}

/// Parses `text<TAB>label` lines; blank lines are skipped.
pub fn parse_labeled(text: &str) -> Result<Vec<LabeledExample>, CriticError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (t, l) = line.rsplit_once('\t').ok_or_else(|| CriticError::Format {
            line: i + 1,
            message: "expected text<TAB>label".into(),
        })?;
        let label = l.parse().map_err(|message| CriticError::Format { line: i + 1, message })?;
        out.push(LabeledExample { text: t.to_string(), label });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub word_ngrams: (usize, usize),
    pub char_ngrams: (usize, usize),
    pub buckets_log2: u32,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self { word_ngrams: (1, 2), char_ngrams: (3, 5), buckets_log2: 18 }
    }
}

impl FeatureSpec {
    fn validate(&self) -> Result<(), CriticError> {
        let ok = |(lo, hi): (usize, usize)| lo <= hi;
        if !ok(self.word_ngrams) || !ok(self.char_ngrams) || self.buckets_log2 == 0 || self.buckets_log2 > 30 {
            return Err(CriticError::Config(format!("bad feature spec {self:?}")));
        }
        Ok(())
    }

    /// L2-normalized hashed n-gram counts, sorted by bucket.
    pub fn features(&self, text: &str) -> Vec<(u32, f64)> {
        let mask = (1u64 << self.buckets_log2) - 1;
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        let mut bump = |h: u64| *counts.entry((h & mask) as u32).or_insert(0.0) += 1.0;

        let toks = tokenize(text);
        for n in self.word_ngrams.0.max(1)..=self.word_ngrams.1 {
            for w in toks.windows(n) {
                bump(fnv1a(&[b"w:", w.join(" ").as_bytes()]));
            }
        }
        let padded: Vec<char> = format!(" {} ", toks.join(" ")).chars().collect();
        for n in self.char_ngrams.0.max(1)..=self.char_ngrams.1 {
            for w in padded.windows(n) {
                let s: String = w.iter().collect();
                bump(fnv1a(&[b"c:", s.as_bytes()]));
            }
        }
        let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
        counts.into_iter().map(|(k, v)| (k, v / norm)).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// L2-regularized logistic regression over hashed features.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticModel {
    pub spec: FeatureSpec,
    pub bias: f64,
    /// Non-zero weights by bucket.
    pub weights: BTreeMap<u32, f64>,
}

impl CriticModel {
    pub fn margin(&self, text: &str) -> f64 {
        self.spec
            .features(text)
            .iter()
            .map(|(b, v)| self.weights.get(b).copied().unwrap_or(0.0) * v)
            .sum::<f64>()
            + self.bias
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CRITIC_MAGIC} {CRITIC_VERSION}")?;
        writeln!(out, "word_ngrams {} {}", self.spec.word_ngrams.0, self.spec.word_ngrams.1)?;
        writeln!(out, "char_ngrams {} {}", self.spec.char_ngrams.0, self.spec.char_ngrams.1)?;
        writeln!(out, "buckets_log2 {}", self.spec.buckets_log2)?;
        writeln!(out, "bias {}", self.bias)?;
        writeln!(out, "weights {}", self.weights.len())?;
        for (b, w) in &self.weights {
            writeln!(out, "{b} {w}")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, CriticError> {
        let lines: Vec<String> = input.lines().collect::<Result<_, _>>()?;
        let err = |line: usize, message: String| CriticError::Format { line, message };
        let field = |idx: usize, key: &str| -> Result<Vec<&str>, CriticError> {
            let line = lines.get(idx).ok_or_else(|| err(idx + 1, format!("missing {key}")))?;
            let mut parts = line.split(' ');
            if parts.next() != Some(key) {
                return Err(err(idx + 1, format!("expected {key}, got {line:?}")));
            }
            Ok(parts.collect())
        };
        let num = |idx: usize, s: &str| -> Result<f64, CriticError> {
            s.parse().map_err(|_| err(idx + 1, format!("bad number {s:?}")))
        };
        if lines.first().map(String::as_str) != Some(&format!("{CRITIC_MAGIC} {CRITIC_VERSION}")) {
            return Err(err(1, "unsupported critic header".into()));
        }
        let pair = |idx: usize, key: &str| -> Result<(usize, usize), CriticError> {
            match field(idx, key)?.as_slice() {
                [a, b] => Ok((num(idx, a)? as usize, num(idx, b)? as usize)),
                _ => Err(err(idx + 1, format!("{key} needs two values"))),
            }
        };
        let spec = FeatureSpec {
            word_ngrams: pair(1, "word_ngrams")?,
            char_ngrams: pair(2, "char_ngrams")?,
            buckets_log2: num(3, field(3, "buckets_log2")?.first().copied().unwrap_or(""))? as u32,
        };
        spec.validate()?;
        let bias = num(4, field(4, "bias")?.first().copied().unwrap_or(""))?;
        let n = num(5, field(5, "weights")?.first().copied().unwrap_or(""))? as usize;
        let mut weights = BTreeMap::new();
        for idx in 6..6 + n {
            let line = lines.get(idx).ok_or_else(|| err(idx + 1, "missing weight record".into()))?;
            let (b, w) = line.split_once(' ').ok_or_else(|| err(idx + 1, format!("bad weight record {line:?}")))?;
            weights.insert(num(idx, b)? as u32, num(idx, w)?);
        }
        Ok(Self { spec, bias, weights })
    }
}

impl Critic for CriticModel {
    fn score(&self, text: &str) -> f64 {
        sigmoid(self.margin(text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Coefficient of `0.5 * ||w||^2` added to the mean log-loss.
    pub l2: f64,
    pub max_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { l2: 1e-4, max_iters: 3000, tolerance: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub accuracy: f64,
    pub iterations: usize,
    pub loss: f64,
}

/// Fits the classifier with Nesterov-accelerated full-batch gradient descent.
/// Features are unit-normalized, so a fixed step of `1 / L` is safe with
/// `L = 0.5 + l2` (the bias acts as an extra unit feature).
pub fn train_critic(
    data: &[LabeledExample],
    spec: FeatureSpec,
    cfg: TrainConfig,
) -> Result<(CriticModel, TrainReport), CriticError> {
    spec.validate()?;
    if cfg.l2.is_nan() || cfg.l2 <= 0.0 {
        return Err(CriticError::Config(format!("l2 must be positive, got {}", cfg.l2)));
    }
    let has = |l: Label| data.iter().any(|e| e.label == l);
    if !has(Label::Valid) || !has(Label::Invalid) {
        return Err(CriticError::SingleClass);
    }

    // Only buckets that occur in the data can carry weight.
    let raw: Vec<Vec<(u32, f64)>> = data.iter().map(|e| spec.features(&e.text)).collect();
    let active: Vec<u32> = raw.iter().flatten().map(|(b, _)| *b).collect::<BTreeSet<_>>().into_iter().collect();
    let index: BTreeMap<u32, usize> = active.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let xs: Vec<Vec<(usize, f64)>> = raw.iter().map(|f| f.iter().map(|(b, v)| (index[b], *v)).collect()).collect();
    let ys: Vec<f64> = data.iter().map(|e| if e.label == Label::Valid { 1.0 } else { 0.0 }).collect();

    let dim = active.len() + 1; // last slot is the bias
    let n = data.len() as f64;
    let margin = |w: &[f64], x: &[(usize, f64)]| x.iter().map(|(i, v)| w[*i] * v).sum::<f64>() + w[dim - 1];
    let grad = |w: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; dim];
        for (x, y) in xs.iter().zip(&ys) {
            let r = (sigmoid(margin(w, x)) - y) / n;
            for (i, v) in x {
                g[*i] += r * v;
            }
            g[dim - 1] += r;
        }
        for i in 0..dim - 1 {
            g[i] += cfg.l2 * w[i];
        }
        g
    };

    let step = 1.0 / (0.5 + cfg.l2);
    let mut w = vec![0.0; dim];
    let mut look = w.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let g = grad(&look);
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < cfg.tolerance {
            w = look;
            break;
        }
        let next: Vec<f64> = look.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let mom = (t - 1.0) / t_next;
        look = next.iter().zip(&w).map(|(a, b)| a + mom * (a - b)).collect();
        w = next;
        t = t_next;
    }

    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, y) in xs.iter().zip(&ys) {
        let p = sigmoid(margin(&w, x)).clamp(1e-300, 1.0 - 1e-16);
        loss -= (y * p.ln() + (1.0 - y) * (1.0 - p).ln()) / n;
        if (p > 0.5) == (*y == 1.0) {
            correct += 1;
        }
    }
    loss += 0.5 * cfg.l2 * w[..dim - 1].iter().map(|v| v * v).sum::<f64>();

    let weights = active
        .iter()
        .zip(&w)
        .filter(|(_, v)| **v != 0.0)
        .map(|(b, v)| (*b, *v))
        .collect();
    let model = CriticModel { spec, bias: w[dim - 1], weights };
    Ok((model, TrainReport { accuracy: correct as f64 / n, iterations, loss }))
}

/// Wraps an exact validity predicate: score 1 when valid, 0 otherwise.
pub struct OracleCritic<F> {
    is_valid: F,
}

impl<F: Fn(&str) -> bool + Send + Sync> OracleCritic<F> {
    pub fn new(is_valid: F) -> Self {
        Self { is_valid }
    }
}

impl<F: Fn(&str) -> bool + Send + Sync> Critic for OracleCritic<F> {
    fn score(&self, text: &str) -> f64 {
        if (self.is_valid)(text) {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub delta: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA }
    }
}

impl CriticConfig {
    pub fn new(delta: f64) -> Result<Self, CriticError> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(CriticError::Config(format!("delta must lie in [0, 1], got {delta}")));
        }
        Ok(Self { delta })
    }
}

/// Keeps generations whose statement scores strictly above `delta`, in
/// order, with the critic score attached.
pub fn filter<'a, I, C>(pool: I, critic: &'a C, cfg: CriticConfig) -> impl Iterator<Item = Generation> + 'a
where
    I: IntoIterator<Item = Generation>,
    I::IntoIter: 'a,
    C: Critic + ?Sized,
{
    pool.into_iter().filter_map(move |mut g| {
        let s = critic.score(&g.statement());
        g.critic_score = Some(s);
        (s > cfg.delta).then_some(g)
    })
}

/// Area under the ROC curve by pairwise comparison (ties count one half).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut pairs = 0.0;
    let mut wins = 0.0;
    for (s_pos, _) in scores.iter().zip(labels).filter(|(_, l)| **l) {
        for (s_neg, _) in scores.iter().zip(labels).filter(|(_, l)| !**l) {
            pairs += 1.0;
            if s_pos > s_neg {
                wins += 1.0;
            } else if s_pos == s_neg {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(text: &str, valid: bool) -> LabeledExample {
        LabeledExample { text: text.into(), label: if valid { Label::Valid } else { Label::Invalid } }
    }

    fn toy() -> Vec<LabeledExample> {
        vec![
            ex("birds can fly", true),
            ex("birds can sing", true),
            ex("fish can swim", true),
            ex("birds can swim underwater forever", false),
            ex("fish can fly purple", false),
            ex("fish fly fly fly", false),
        ]
    }

    #[test]
    fn labels_collapse_four_way_annotation() {
        assert_eq!("true".parse::<Label>().unwrap(), Label::Valid);
        for l in ["false", "don't know", "garbled output", "invalid"] {
            assert_eq!(l.parse::<Label>().unwrap(), Label::Invalid, "{l}");
        }
        assert!("maybe".parse::<Label>().is_err());
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let data = vec![ex("good statement alpha", true), ex("bad noise beta", false)];
        let (_, report) = train_critic(&data, FeatureSpec::default(), TrainConfig::default()).unwrap();
        assert_eq!(report.accuracy, 1.0);
        let (_, report) = train_critic(&toy(), FeatureSpec::default(), TrainConfig::default()).unwrap();
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let data = vec![ex("a", true), ex("b", true)];
        assert!(matches!(
            train_critic(&data, FeatureSpec::default(), TrainConfig::default()),
            Err(CriticError::SingleClass)
        ));
    }

    #[test]
    fn duplication_leaves_predictions_unchanged() {
        let data = toy();
        let doubled: Vec<_> = data.iter().chain(data.iter()).cloned().collect();
        let (a, _) = train_critic(&data, FeatureSpec::default(), TrainConfig::default()).unwrap();
        let (b, _) = train_critic(&doubled, FeatureSpec::default(), TrainConfig::default()).unwrap();
        for probe in ["birds can fly", "fish fly", "something else entirely", ""] {
            let (sa, sb) = (a.score(probe), b.score(probe));
            assert_eq!(sa > 0.5, sb > 0.5);
            assert!((sa - sb).abs() < 1e-9, "{probe}: {sa} vs {sb}");
        }
    }

    #[test]
    fn empty_text_scores_sigmoid_of_bias() {
        let (m, _) = train_critic(&toy(), FeatureSpec::default(), TrainConfig::default()).unwrap();
        assert_eq!(m.score(""), sigmoid(m.bias));
        assert_eq!(m.score("birds can fly"), m.score("birds can fly"));
    }

    #[test]
    fn model_file_round_trip() {
        let (m, _) = train_critic(&toy(), FeatureSpec::default(), TrainConfig::default()).unwrap();
        let back = CriticModel::read_from(m.to_bytes().as_slice()).unwrap();
        assert_eq!(m, back);
        assert!(CriticModel::read_from("nope".as_bytes()).is_err());
    }

    fn gen(text: &str) -> Generation {
        Generation {
            job_id: 0,
            prompt: String::new(),
            text: text.into(),
            logprob: -1.0,
            num_tokens: 2,
            violation_count: 0,
            final_score: -1.0,
            critic_score: None,
            iteration: None,
        }
    }

    #[test]
    fn delta_extremes() {
        let (m, _) = train_critic(&toy(), FeatureSpec::default(), TrainConfig::default()).unwrap();
        let pool: Vec<Generation> = ["birds can fly", "fish fly fly", "zzz"].iter().map(|t| gen(t)).collect();
        assert_eq!(filter(pool.clone(), &m, CriticConfig::new(0.0).unwrap()).count(), 3);
        assert_eq!(filter(pool, &m, CriticConfig::new(1.0).unwrap()).count(), 0);
        assert!(CriticConfig::new(1.5).is_err());
    }

    #[test]
    fn filter_is_idempotent_and_attaches_scores() {
        let (m, _) = train_critic(&toy(), FeatureSpec::default(), TrainConfig::default()).unwrap();
        let pool: Vec<Generation> = ["birds can fly", "fish fly fly", "fish can swim"].iter().map(|t| gen(t)).collect();
        let cfg = CriticConfig::default();
        let once: Vec<Generation> = filter(pool, &m, cfg).collect();
        assert!(once.iter().all(|g| g.critic_score.unwrap() > 0.5));
        let twice: Vec<Generation> = filter(once.clone(), &m, cfg).collect();
        assert_eq!(once, twice);
    }

    #[test]
    fn oracle_critic_scores_zero_or_one() {
        let c = OracleCritic::new(|t: &str| t.starts_with("ok"));
        assert_eq!(c.score("ok fine"), 1.0);
        assert_eq!(c.score("bad"), 0.0);
    }

    #[test]
    fn parse_labeled_lines() {
        let data = parse_labeled("birds can fly\ttrue\n\nfish fly\tgarbled\n").unwrap();
        assert_eq!(data, vec![ex("birds can fly", true), ex("fish fly", false)]);
        assert!(matches!(parse_labeled("no tab here"), Err(CriticError::Format { line: 1, .. })));
    }
}
