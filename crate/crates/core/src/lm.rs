//! Autoregressive scorers and the interpolated absolute-discount n-gram model.
//!
//! Count-table file format (UTF-8, one record per line):
//!
//! ```text
//! distill-ngram 1
//! order <n>
//! discount <d>
//! vocab <V>
//! <token 0>
//! ...
//! <token V-1>
//! counts <M>
//! <ctx id>* <next id> <count>      (M lines, context length = ids - 1)
//! ```
//!
//! Records are written in sorted order and counts use the shortest
//! round-tripping decimal form, so a model written twice is byte-identical.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::vocab::{TokenId, TokenSequence, VocabError, Vocabulary, BOS, EOS};

pub const MODEL_MAGIC: &str = "distill-ngram";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LmError {
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("prefix contains an end-of-sequence marker at position {0}")]
    EosInPrefix(usize),
    #[error("text has no tokens")]
    EmptyText,
    #[error("sequence is empty")]
    EmptySequence,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("scorer transport failure: {0}")]
    Transport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that yields a next-token distribution over a fixed vocabulary.
///
/// `prefix` is the full left context (prompt plus generated tokens). A
/// leading `<s>` is accepted and ignored. The returned vector has one
/// natural-log probability per vocabulary id and exponentiates to a
/// distribution.
pub trait Scorer: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>, LmError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        (**self).next_token_logprobs(prefix)
    }
}

impl<S: Scorer + ?Sized> Scorer for std::sync::Arc<S> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }

    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        (**self).next_token_logprobs(prefix)
    }
}

/// Validates a prefix against the scorer contract and strips a leading `<s>`.
pub fn checked_prefix<'a>(vocab: &Vocabulary, prefix: &'a [TokenId]) -> Result<&'a [TokenId], LmError> {
    vocab.check(prefix)?;
    if let Some(p) = prefix.iter().position(|&id| id == EOS) {
        return Err(LmError::EosInPrefix(p));
    }
    Ok(match prefix.first() {
        Some(&BOS) => &prefix[1..],
        _ => prefix,
    })
}

/// Log-probability of `seq` from an empty context, summed step by step.
pub fn sequence_logprob<S: Scorer + ?Sized>(model: &S, seq: &TokenSequence) -> Result<f64, LmError> {
    if seq.is_empty() {
        return Err(LmError::EmptySequence);
    }
    conditional_logprob(model, &[], seq.ids())
}

/// Log-probability of `continuation` given `context`.
pub fn conditional_logprob<S: Scorer + ?Sized>(
    model: &S,
    context: &[TokenId],
    continuation: &[TokenId],
) -> Result<f64, LmError> {
    model.vocab().check(continuation)?;
    let mut prefix = context.to_vec();
    let mut total = 0.0;
    for &tok in continuation {
        let lp = model.next_token_logprobs(&prefix)?;
        total += lp[tok as usize];
        prefix.push(tok);
    }
    Ok(total)
}

/// `exp(-logprob / n)` over the `n` tokens of `text`. No end marker is scored.
pub fn per_word_perplexity<S: Scorer + ?Sized>(model: &S, text: &str) -> Result<f64, LmError> {
    let seq = model.vocab().encode(text);
    if seq.is_empty() {
        return Err(LmError::EmptyText);
    }
    let lp = sequence_logprob(model, &seq)?;
    Ok((-lp / seq.len() as f64).exp())
}

/// Every token equally likely, whatever the prefix.
#[derive(Debug, Clone)]
pub struct UniformModel {
    vocab: Vocabulary,
}

impl UniformModel {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }
}

impl Scorer for UniformModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        checked_prefix(&self.vocab, prefix)?;
        let n = self.vocab.len();
        Ok(vec![-(n as f64).ln(); n])
    }
}

/// Counts of continuations observed after one context.
pub type ContextCounts = BTreeMap<TokenId, f64>;

/// Interpolated absolute-discount n-gram model.
///
/// For a context `h` of length `k` with total count `c(h)`:
///
/// ```text
/// P_k(w | h) = max(c(h, w) - d, 0) / c(h) + gamma(h) * P_{k-1}(w | h')
/// gamma(h)   = 1 - sum_w max(c(h, w) - d, 0) / c(h)
/// ```
///
/// where `h'` drops the oldest token and the recursion bottoms out at the
/// uniform distribution over the vocabulary. Contexts never observed fall
/// through to the next lower order unchanged. Sentences are padded with
/// `order - 1` start markers and terminated by `</s>`.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    discount: f64,
    vocab: Vocabulary,
    /// `tables[k]` maps length-`k` contexts to their continuation counts.
    tables: Vec<BTreeMap<Vec<TokenId>, ContextCounts>>,
}

/// Outcome of [`NGramModel::finetune`].
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    pub sequences: usize,
    pub events: usize,
    /// Set when the call was a no-op.
    pub warning: Option<String>,
}

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_DISCOUNT: f64 = 0.75;

impl NGramModel {
    pub fn empty(vocab: Vocabulary, order: usize, discount: f64) -> Result<Self, LmError> {
        if order < 1 {
            return Err(LmError::Config(format!("order must be at least 1, got {order}")));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(LmError::Config(format!("discount must lie in (0, 1), got {discount}")));
        }
        Ok(Self {
            order,
            discount,
            vocab,
            tables: vec![BTreeMap::new(); order],
        })
    }

    /// Counts every n-gram of `corpus` (orders 1 through `order`).
    pub fn fit(
        vocab: Vocabulary,
        corpus: &[TokenSequence],
        order: usize,
        discount: f64,
    ) -> Result<Self, LmError> {
        let mut model = Self::empty(vocab, order, discount)?;
        if corpus.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        for seq in corpus {
            seq.validate(&model.vocab)?;
        }
        for seq in corpus {
            model.accumulate(seq, 1.0);
        }
        Ok(model)
    }

    /// Builds the vocabulary from raw lines, then fits.
    pub fn fit_text<S: AsRef<str>>(lines: &[S], order: usize, discount: f64) -> Result<Self, LmError> {
        let vocab = Vocabulary::from_corpus(lines);
        let corpus: Vec<TokenSequence> = lines
            .iter()
            .map(|l| vocab.encode(l.as_ref()))
            .filter(|s| !s.is_empty())
            .collect();
        Self::fit(vocab, &corpus, order, discount)
    }

    /// A new model whose counts are the old counts plus `mix_weight` times
    /// the counts of `data`. `self` is left untouched.
    pub fn finetune(
        &self,
        data: &[TokenSequence],
        mix_weight: f64,
    ) -> Result<(Self, FinetuneReport), LmError> {
        if !(mix_weight > 0.0 && mix_weight <= 1.0) {
            return Err(LmError::Config(format!("mix_weight must lie in (0, 1], got {mix_weight}")));
        }
        if data.is_empty() {
            let warning = "finetune called with no data; model unchanged".to_string();
            tracing::warn!("{warning}");
            return Ok((
                self.clone(),
                FinetuneReport { sequences: 0, events: 0, warning: Some(warning) },
            ));
        }
        for seq in data {
            seq.validate(&self.vocab)?;
        }
        let mut next = self.clone();
        let mut events = 0;
        for seq in data {
            events += next.accumulate(seq, mix_weight);
        }
        Ok((next, FinetuneReport { sequences: data.len(), events, warning: None }))
    }

    fn accumulate(&mut self, seq: &TokenSequence, weight: f64) -> usize {
        let pad = self.order - 1;
        let mut padded = vec![BOS; pad];
        padded.extend(seq.ids().iter().copied().filter(|&t| t != BOS));
        if padded.last() != Some(&EOS) {
            padded.push(EOS);
        }
        let mut events = 0;
        for i in pad..padded.len() {
            let w = padded[i];
            for k in 0..self.order {
                let ctx = padded[i - k..i].to_vec();
                *self.tables[k].entry(ctx).or_default().entry(w).or_insert(0.0) += weight;
            }
            events += 1;
        }
        events
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Continuation counts after a context of length `context.len()`.
    pub fn counts(&self, context: &[TokenId]) -> Option<&ContextCounts> {
        self.tables.get(context.len())?.get(context)
    }

    pub fn tables(&self) -> &[BTreeMap<Vec<TokenId>, ContextCounts>] {
        &self.tables
    }

    /// Next-token probabilities (not logs) after an already validated prefix.
    pub fn next_token_probs(&self, prefix: &[TokenId]) -> Vec<f64> {
        let n = self.vocab.len();
        let mut probs = vec![1.0 / n as f64; n];
        let mut history = vec![BOS; self.order - 1];
        history.extend_from_slice(prefix);
        for k in 0..self.order {
            let ctx = &history[history.len() - k..];
            let Some(counts) = self.tables[k].get(ctx) else {
                continue;
            };
            let total: f64 = counts.values().sum();
            if total <= 0.0 {
                continue;
            }
            let kept: f64 = counts.values().map(|&c| (c - self.discount).max(0.0)).sum();
            let gamma = (total - kept) / total;
            for p in probs.iter_mut() {
                *p *= gamma;
            }
            for (&w, &c) in counts {
                probs[w as usize] += (c - self.discount).max(0.0) / total;
            }
        }
        probs
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}")?;
        writeln!(out, "order {}", self.order)?;
        writeln!(out, "discount {}", self.discount)?;
        writeln!(out, "vocab {}", self.vocab.len())?;
        for t in self.vocab.tokens() {
            writeln!(out, "{t}")?;
        }
        let records: usize = self.tables.iter().flat_map(|t| t.values()).map(|c| c.len()).sum();
        writeln!(out, "counts {records}")?;
        for table in &self.tables {
            for (ctx, counts) in table {
                for (w, c) in counts {
                    for id in ctx {
                        write!(out, "{id} ")?;
                    }
                    writeln!(out, "{w} {c}")?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, LmError> {
        let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next_line = |what: &str| -> Result<(usize, String), LmError> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(LmError::Format { line: 0, message: format!("missing {what}") }),
            }
        };
        let fmt_err = |line: usize, message: String| LmError::Format { line, message };

        let (n, header) = next_line("header")?;
        if header != format!("{MODEL_MAGIC} {MODEL_VERSION}") {
            return Err(fmt_err(n, format!("unsupported header {header:?}")));
        }
        let order: usize = keyed(next_line("order")?, "order")?;
        let discount: f64 = keyed(next_line("discount")?, "discount")?;
        let vsize: usize = keyed(next_line("vocab")?, "vocab")?;
        let mut tokens = Vec::with_capacity(vsize);
        for _ in 0..vsize {
            tokens.push(next_line("vocabulary token")?.1);
        }
        let vocab = Vocabulary::from_listing(tokens)?;
        let mut model = Self::empty(vocab, order, discount)?;
        let records: usize = keyed(next_line("counts")?, "counts")?;
        for _ in 0..records {
            let (n, line) = next_line("count record")?;
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() < 2 || fields.len() > order + 1 {
                return Err(fmt_err(n, format!("malformed count record {line:?}")));
            }
            let count: f64 = fields[fields.len() - 1]
                .parse()
                .map_err(|_| fmt_err(n, format!("bad count in {line:?}")))?;
            let ids = fields[..fields.len() - 1]
                .iter()
                .map(|f| f.parse::<TokenId>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| fmt_err(n, format!("bad token id in {line:?}")))?;
            model.vocab.check(&ids)?;
            let (w, ctx) = ids.split_last().expect("at least one id");
            model.tables[ctx.len()].entry(ctx.to_vec()).or_default().insert(*w, count);
        }
        Ok(model)
    }
}

fn keyed<T: std::str::FromStr>((line, text): (usize, String), key: &str) -> Result<T, LmError> {
    text.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| LmError::Format { line, message: format!("expected `{key} <value>`, got {text:?}") })
}

impl Scorer for NGramModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        let prefix = checked_prefix(&self.vocab, prefix)?;
        Ok(self.next_token_probs(prefix).into_iter().map(f64::ln).collect())
    }
}
