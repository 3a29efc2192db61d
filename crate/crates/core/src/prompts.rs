//! Prompt construction: template expansion of seed concepts, perplexity-based
//! variant selection and gating, and pairing with constraint sets.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{build_standard_set_with, parse_word_list, ConstraintError, ConstraintSet, StandardOptions};
use crate::decoder::DecodeJob;
use crate::lm::{per_word_perplexity, LmError, Scorer};

pub const ADVERBS: [&str; 3] = ["Generally", "Typically", "Usually"];
pub const ARTICLES: [&str; 3] = ["a", "an", "the"];
pub const GOAL_PREFIXES: [&str; 4] = ["In order to", "Before you", "After you", "While you"];
pub const DEFAULT_RELATIONS: &str = include_str!("../data/relations.txt");
pub const DEFAULT_PPL_THRESHOLD: f64 = 250.0;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no candidate prompts")]
    NoCandidates,
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptKind {
    NounPhrase,
    Goal,
}

impl std::str::FromStr for ConceptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noun_phrase" | "noun" | "np" => Ok(Self::NounPhrase),
            "goal" => Ok(Self::Goal),
            other => Err(format!("unknown concept kind {other:?} (expected noun_phrase or goal)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub surface: String,
    pub kind: ConceptKind,
    pub source: String,
}

/// A prompt ready for decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptJob {
    pub id: usize,
    pub prompt_text: String,
    pub concept: Concept,
    /// Relational phrase for noun concepts, goal prefix for goals.
    pub relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub related: Option<String>,
    pub constraints: ConstraintSet,
    pub perplexity: f64,
}

impl PromptJob {
    pub fn to_decode_job(&self) -> DecodeJob {
        DecodeJob { id: self.id, prompt: self.prompt_text.clone(), constraints: self.constraints.clone() }
    }
}

/// All `[adverb,]? [article]? <noun> <relation>` variants, 16 in total. The
/// bare form comes first; a leading article is capitalized.
pub fn expand_noun(concept: &str, relation: &str) -> Vec<String> {
    let adverbs = std::iter::once(None).chain(ADVERBS.iter().copied().map(Some));
    let mut out = Vec::with_capacity(16);
    for adverb in adverbs {
        for article in std::iter::once(None).chain(ARTICLES.iter().copied().map(Some)) {
            let mut parts: Vec<String> = Vec::with_capacity(4);
            if let Some(a) = adverb {
                parts.push(format!("{a},"));
            }
            if let Some(art) = article {
                parts.push(if adverb.is_some() { art.to_string() } else { capitalize(art) });
            }
            parts.push(concept.trim().to_string());
            parts.push(relation.trim().to_string());
            out.push(parts.join(" "));
        }
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// One prompt per goal prefix.
pub fn expand_goal(goal: &str) -> Vec<String> {
    GOAL_PREFIXES.iter().map(|p| format!("{p} {}", goal.trim())).collect()
}

/// Lowest-perplexity candidate; the earliest wins ties.
pub fn select_best_variant<S: Scorer + ?Sized>(
    candidates: &[String],
    model: &S,
) -> Result<(String, f64), PromptError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let ppl = per_word_perplexity(model, c)?;
        if best.is_none_or(|(_, b)| ppl < b) {
            best = Some((i, ppl));
        }
    }
    let (i, ppl) = best.ok_or(PromptError::NoCandidates)?;
    Ok((candidates[i].clone(), ppl))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Accept,
    Reject,
}

/// Accepts iff the prompt's perplexity does not exceed `threshold`.
pub fn gate(job: &PromptJob, threshold: f64) -> Gate {
    gate_perplexity(job.perplexity, threshold)
}

pub fn gate_perplexity(perplexity: f64, threshold: f64) -> Gate {
    if perplexity <= threshold {
        Gate::Accept
    } else {
        Gate::Reject
    }
}

/// A problem with one input line; processing continues past it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub file: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file, self.line, self.message)
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

/// Parses `surface<TAB>kind<TAB>source` lines. The source column may be omitted.
pub fn parse_concepts(text: &str, diags: &mut Vec<Diagnostic>) -> Vec<Concept> {
    let mut out = Vec::new();
    for (line, l) in content_lines(text) {
        let cols: Vec<&str> = l.split('\t').collect();
        let bad = |message: String| Diagnostic { file: "concepts".into(), line, message };
        if cols.len() < 2 || cols.len() > 3 || cols[0].trim().is_empty() {
            diags.push(bad(format!("expected surface<TAB>kind<TAB>source, got {l:?}")));
            continue;
        }
        match cols[1].parse::<ConceptKind>() {
            Ok(kind) => out.push(Concept {
                surface: cols[0].trim().to_string(),
                kind,
                source: cols.get(2).map(|s| s.trim().to_string()).unwrap_or_default(),
            }),
            Err(message) => diags.push(bad(message)),
        }
    }
    out
}

/// Parses `concept<TAB>related` lines.
pub fn parse_related(text: &str, diags: &mut Vec<Diagnostic>) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (line, l) in content_lines(text) {
        match l.split('\t').collect::<Vec<_>>().as_slice() {
            [c, r] if !c.trim().is_empty() && !r.trim().is_empty() => {
                out.push((c.trim().to_string(), r.trim().to_string()))
            }
            _ => diags.push(Diagnostic {
                file: "related".into(),
                line,
                message: format!("expected concept<TAB>related, got {l:?}"),
            }),
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub ppl_threshold: f64,
    pub constraints: StandardOptions,
    /// Relations for concepts whose source tag is `conceptnet`.
    pub conceptnet_relations: Option<Vec<String>>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            ppl_threshold: DEFAULT_PPL_THRESHOLD,
            constraints: StandardOptions::default(),
            conceptnet_relations: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BuildOutput {
    pub jobs: Vec<PromptJob>,
    pub diagnostics: Vec<Diagnostic>,
    /// Prompts dropped by the perplexity gate.
    pub rejected: usize,
}

/// Expands every concept (and every related-concept pairing) into gated,
/// constrained prompt jobs. Jobs are numbered in output order.
pub fn build_jobs<S: Scorer + ?Sized>(
    concepts_text: &str,
    relations_text: &str,
    related_text: Option<&str>,
    model: &S,
    opts: &BuildOptions,
) -> Result<BuildOutput, PromptError> {
    let mut out = BuildOutput::default();
    let concepts = parse_concepts(concepts_text, &mut out.diagnostics);
    let relations = parse_word_list(relations_text);
    let related = related_text.map(|t| parse_related(t, &mut out.diagnostics)).unwrap_or_default();

    let kinds: HashMap<&str, &Concept> = concepts.iter().map(|c| (c.surface.as_str(), c)).collect();
    let mut work: Vec<(Concept, Option<String>)> = concepts.iter().map(|c| (c.clone(), None)).collect();
    for (c, r) in &related {
        let concept = kinds.get(c.as_str()).map(|&c| c.clone()).unwrap_or_else(|| Concept {
            surface: c.clone(),
            kind: ConceptKind::NounPhrase,
            source: "related".into(),
        });
        work.push((concept, Some(r.clone())));
    }

    for (concept, related) in work {
        let prompts: Vec<(String, String, f64)> = match concept.kind {
            ConceptKind::NounPhrase => {
                let rels = match (&opts.conceptnet_relations, concept.source.eq_ignore_ascii_case("conceptnet")) {
                    (Some(cn), true) => cn,
                    _ => &relations,
                };
                rels.iter()
                    .map(|rel| {
                        let (prompt, ppl) = select_best_variant(&expand_noun(&concept.surface, rel), model)?;
                        Ok((rel.clone(), prompt, ppl))
                    })
                    .collect::<Result<_, PromptError>>()?
            }
            ConceptKind::Goal => GOAL_PREFIXES
                .iter()
                .zip(expand_goal(&concept.surface))
                .map(|(prefix, prompt)| {
                    let ppl = per_word_perplexity(model, &prompt)?;
                    Ok((prefix.to_string(), prompt, ppl))
                })
                .collect::<Result<_, PromptError>>()?,
        };
        for (rel, prompt_text, perplexity) in prompts {
            out.jobs.push(PromptJob {
                id: 0,
                prompt_text,
                constraints: build_standard_set_with(&opts.constraints, &concept.surface, &rel, related.as_deref())?,
                concept: concept.clone(),
                relation: Some(rel),
                related: related.clone(),
                perplexity,
            });
        }
    }

    let before = out.jobs.len();
    out.jobs.retain(|j| gate(j, opts.ppl_threshold) == Gate::Accept);
    out.rejected = before - out.jobs.len();
    for (i, j) in out.jobs.iter_mut().enumerate() {
        j.id = i;
    }
    Ok(out)
}
