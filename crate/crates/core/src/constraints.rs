//! Lexical constraints in conjunctive normal form and their incremental
//! evaluation over generated tokens.
//!
//! Literals are matched on lowercase token boundaries; a multi-word phrase
//! matches a contiguous run of tokens. Only tokens produced after the prompt
//! are fed to a [`ConstraintState`].

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::tokenize;

/// Verbatim function-word list, one entry per line.
pub const FUNCTION_WORDS: &str = include_str!("../data/function_words.txt");
/// Verbatim connective-word list, one entry per line.
pub const CONNECTIVE_WORDS: &str = include_str!("../data/connective_words.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConstraintError {
    #[error("phrase literal has no tokens")]
    EmptyPhrase,
    #[error("count literal has an empty word set")]
    EmptyWordSet,
    #[error("clause {0} has no literals")]
    EmptyClause(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Must appear.
    Positive,
    /// Must not appear.
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseLiteral {
    pub tokens: Vec<String>,
    pub polarity: Polarity,
}

impl PhraseLiteral {
    pub fn new(surface: &str, polarity: Polarity) -> Result<Self, ConstraintError> {
        let tokens = tokenize(surface);
        if tokens.is_empty() {
            return Err(ConstraintError::EmptyPhrase);
        }
        Ok(Self { tokens, polarity })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    AtMost,
    Exactly,
}

/// `count(word_set) <= bound` or `count(word_set) = bound`. Entries of more
/// than one token are counted as contiguous phrase occurrences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountLiteral {
    /// Single-token entries.
    pub words: BTreeSet<String>,
    /// Multi-token entries.
    pub phrases: BTreeSet<Vec<String>>,
    pub comparator: Comparator,
    pub bound: u32,
}

impl CountLiteral {
    pub fn new<I, S>(entries: I, comparator: Comparator, bound: u32) -> Result<Self, ConstraintError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words = BTreeSet::new();
        let mut phrases = BTreeSet::new();
        for e in entries {
            let toks = tokenize(e.as_ref());
            match toks.len() {
                0 => {}
                1 => {
                    words.insert(toks.into_iter().next().unwrap());
                }
                _ => {
                    phrases.insert(toks);
                }
            }
        }
        if words.is_empty() && phrases.is_empty() {
            return Err(ConstraintError::EmptyWordSet);
        }
        Ok(Self { words, phrases, comparator, bound })
    }

    fn entries(&self) -> Vec<String> {
        self.words
            .iter()
            .cloned()
            .chain(self.phrases.iter().map(|p| p.join(" ")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Literal {
    Phrase(PhraseLiteral),
    Count(CountLiteral),
}

impl Literal {
    pub fn forbid(surface: &str) -> Result<Self, ConstraintError> {
        PhraseLiteral::new(surface, Polarity::Negative).map(Literal::Phrase)
    }

    pub fn require(surface: &str) -> Result<Self, ConstraintError> {
        PhraseLiteral::new(surface, Polarity::Positive).map(Literal::Phrase)
    }

    pub fn count<I, S>(entries: I, comparator: Comparator, bound: u32) -> Result<Self, ConstraintError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        CountLiteral::new(entries, comparator, bound).map(Literal::Count)
    }
}

/// A disjunction of literals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause(pub Vec<Literal>);

/// A conjunction of clauses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Clause>", into = "Vec<Clause>")]
pub struct ConstraintSet {
    clauses: Vec<Clause>,
}

impl TryFrom<Vec<Clause>> for ConstraintSet {
    type Error = ConstraintError;

    fn try_from(clauses: Vec<Clause>) -> Result<Self, Self::Error> {
        Self::new(clauses)
    }
}

impl From<ConstraintSet> for Vec<Clause> {
    fn from(set: ConstraintSet) -> Self {
        set.clauses
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Satisfied,
    Violated,
    /// Undecided on the current prefix; `if_final` is the value the literal
    /// or clause takes if the sequence ends here.
    Pending { if_final: bool },
}

impl Status {
    fn resolve(self) -> bool {
        match self {
            Status::Satisfied => true,
            Status::Violated => false,
            Status::Pending { if_final } => if_final,
        }
    }
}

/// Per-literal tracking state, in clause-then-literal order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LiteralState {
    Phrase {
        /// Length of the longest suffix of the stream that is a proper prefix
        /// of the phrase.
        pos: usize,
        seen: bool,
    },
    Count {
        count: u32,
        /// Automaton position per multi-token entry.
        pos: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConstraintState {
    literals: Vec<LiteralState>,
}

impl ConstraintState {
    pub fn literals(&self) -> &[LiteralState] {
        &self.literals
    }
}

/// One automaton step for contiguous phrase matching. Returns the new
/// position and whether the phrase was completed by `token`.
fn phrase_step(phrase: &[String], pos: usize, token: &str) -> (usize, bool) {
    let tail_len = pos + 1;
    let tail = |i: usize| -> &str {
        if i < pos {
            &phrase[i]
        } else {
            token
        }
    };
    let longest = |limit: usize| -> usize {
        (0..=limit.min(tail_len))
            .rev()
            .find(|&k| (0..k).all(|j| phrase[j] == tail(tail_len - k + j)))
            .unwrap_or(0)
    };
    let k = longest(phrase.len());
    if k == phrase.len() {
        (longest(phrase.len() - 1), true)
    } else {
        (k, false)
    }
}

/// Batch form of the automaton position: longest suffix of `tokens` that is
/// a proper prefix of `phrase`.
fn phrase_position(phrase: &[String], tokens: &[&str]) -> usize {
    (0..phrase.len().min(tokens.len() + 1))
        .rev()
        .find(|&k| phrase[..k].iter().zip(&tokens[tokens.len() - k..]).all(|(a, b)| a == b))
        .unwrap_or(0)
}

fn occurrences(phrase: &[String], tokens: &[&str]) -> usize {
    if phrase.len() > tokens.len() {
        return 0;
    }
    tokens
        .windows(phrase.len())
        .filter(|w| w.iter().zip(phrase).all(|(a, b)| *a == b))
        .count()
}

impl ConstraintSet {
    pub fn new(clauses: Vec<Clause>) -> Result<Self, ConstraintError> {
        if let Some(i) = clauses.iter().position(|c| c.0.is_empty()) {
            return Err(ConstraintError::EmptyClause(i));
        }
        Ok(Self { clauses })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// One clause per literal.
    pub fn conjunction(literals: Vec<Literal>) -> Self {
        Self { clauses: literals.into_iter().map(|l| Clause(vec![l])).collect() }
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    fn literals(&self) -> impl Iterator<Item = &Literal> {
        self.clauses.iter().flat_map(|c| c.0.iter())
    }

    /// State for an empty continuation.
    pub fn initial_state(&self) -> ConstraintState {
        ConstraintState {
            literals: self
                .literals()
                .map(|lit| match lit {
                    Literal::Phrase(_) => LiteralState::Phrase { pos: 0, seen: false },
                    Literal::Count(c) => LiteralState::Count { count: 0, pos: vec![0; c.phrases.len()] },
                })
                .collect(),
        }
    }

    /// State after appending `token` to the stream summarized by `state`.
    pub fn advance(&self, state: &ConstraintState, token: &str) -> ConstraintState {
        let literals = self
            .literals()
            .zip(&state.literals)
            .map(|(lit, st)| match (lit, st) {
                (Literal::Phrase(p), LiteralState::Phrase { pos, seen }) => {
                    let (pos, hit) = phrase_step(&p.tokens, *pos, token);
                    LiteralState::Phrase { pos, seen: *seen || hit }
                }
                (Literal::Count(c), LiteralState::Count { count, pos }) => {
                    let mut count = *count + u32::from(c.words.contains(token));
                    let pos = c
                        .phrases
                        .iter()
                        .zip(pos)
                        .map(|(ph, &p)| {
                            let (p, hit) = phrase_step(ph, p, token);
                            count += u32::from(hit);
                            p
                        })
                        .collect();
                    LiteralState::Count { count, pos }
                }
                _ => unreachable!("state shape follows the constraint set"),
            })
            .collect();
        ConstraintState { literals }
    }

    /// Builds the state for `tokens` directly by scanning, without the
    /// incremental automaton.
    pub fn evaluate<S: AsRef<str>>(&self, tokens: &[S]) -> ConstraintState {
        let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
        ConstraintState {
            literals: self
                .literals()
                .map(|lit| match lit {
                    Literal::Phrase(p) => LiteralState::Phrase {
                        pos: phrase_position(&p.tokens, &toks),
                        seen: occurrences(&p.tokens, &toks) > 0,
                    },
                    Literal::Count(c) => {
                        let singles = toks.iter().filter(|t| c.words.contains(**t)).count();
                        let multi: usize = c.phrases.iter().map(|ph| occurrences(ph, &toks)).sum();
                        LiteralState::Count {
                            count: (singles + multi) as u32,
                            pos: c.phrases.iter().map(|ph| phrase_position(ph, &toks)).collect(),
                        }
                    }
                })
                .collect(),
        }
    }

    fn literal_status(lit: &Literal, st: &LiteralState) -> Status {
        match (lit, st) {
            (Literal::Phrase(p), LiteralState::Phrase { seen, .. }) => match (p.polarity, seen) {
                (Polarity::Positive, true) => Status::Satisfied,
                (Polarity::Positive, false) => Status::Pending { if_final: false },
                (Polarity::Negative, true) => Status::Violated,
                (Polarity::Negative, false) => Status::Pending { if_final: true },
            },
            (Literal::Count(c), LiteralState::Count { count, .. }) => {
                if *count > c.bound {
                    Status::Violated
                } else {
                    let if_final = match c.comparator {
                        Comparator::AtMost => true,
                        Comparator::Exactly => *count == c.bound,
                    };
                    Status::Pending { if_final }
                }
            }
            _ => unreachable!("state shape follows the constraint set"),
        }
    }

    /// Like `literal_status`, but a literal that cannot become true within
    /// `remaining` more tokens counts as violated.
    fn literal_status_within(lit: &Literal, st: &LiteralState, remaining: usize) -> Status {
        let status = Self::literal_status(lit, st);
        if status != (Status::Pending { if_final: false }) {
            return status;
        }
        let dead = match (lit, st) {
            (Literal::Phrase(p), LiteralState::Phrase { pos, .. }) => p.tokens.len() - pos > remaining,
            // one token can complete several entries at once, so only an
            // exhausted budget is conclusive
            (Literal::Count(_), _) => remaining == 0,
            _ => unreachable!("state shape follows the constraint set"),
        };
        if dead {
            Status::Violated
        } else {
            status
        }
    }

    /// Status of each clause on the current prefix.
    pub fn clause_statuses(&self, state: &ConstraintState) -> Vec<Status> {
        self.statuses_with(state, Self::literal_status)
    }

    /// Clause statuses when at most `remaining` tokens may still follow. A
    /// positive phrase too long to finish in the budget is violated, as is an
    /// exact count that is short when the budget is spent.
    pub fn clause_statuses_within(&self, state: &ConstraintState, remaining: usize) -> Vec<Status> {
        self.statuses_with(state, |lit, st| Self::literal_status_within(lit, st, remaining))
    }

    fn statuses_with<F>(&self, state: &ConstraintState, literal_status: F) -> Vec<Status>
    where
        F: Fn(&Literal, &LiteralState) -> Status,
    {
        let mut lit_states = state.literals.iter();
        self.clauses
            .iter()
            .map(|clause| {
                let statuses: Vec<Status> = clause
                    .0
                    .iter()
                    .map(|lit| literal_status(lit, lit_states.next().expect("state shape")))
                    .collect();
                if statuses.contains(&Status::Satisfied) {
                    Status::Satisfied
                } else if statuses.iter().all(|s| *s == Status::Violated) {
                    Status::Violated
                } else {
                    Status::Pending { if_final: statuses.iter().any(|s| s.resolve()) }
                }
            })
            .collect()
    }

    /// Clauses not satisfied. Mid-sequence only definitively violated clauses
    /// count; with `terminal` every pending literal is resolved as if the
    /// sequence ended here.
    pub fn violation_count(&self, state: &ConstraintState, terminal: bool) -> usize {
        self.clause_statuses(state)
            .into_iter()
            .filter(|s| if terminal { !s.resolve() } else { *s == Status::Violated })
            .count()
    }

    /// Clauses that cannot hold in any continuation of at most `remaining`
    /// tokens. Never decreases as tokens are appended with the budget
    /// shrinking accordingly, and equals the terminal count at zero.
    pub fn violation_count_within(&self, state: &ConstraintState, remaining: usize) -> usize {
        self.clause_statuses_within(state, remaining).into_iter().filter(|s| *s == Status::Violated).count()
    }

    /// Bitmask of clauses that would hold if the sequence ended now (first 64).
    pub fn signature(&self, state: &ConstraintState) -> u64 {
        self.clause_statuses(state)
            .into_iter()
            .take(64)
            .enumerate()
            .filter(|(_, s)| s.resolve())
            .fold(0, |acc, (i, _)| acc | (1 << i))
    }
}

/// Free-function form of [`ConstraintSet::advance`].
pub fn advance(state: &ConstraintState, set: &ConstraintSet, next_token: &str) -> ConstraintState {
    set.advance(state, next_token)
}

/// Free-function form of [`ConstraintSet::violation_count`].
pub fn violation_count(state: &ConstraintState, set: &ConstraintSet, terminal: bool) -> usize {
    set.violation_count(state, terminal)
}

/// Parses a one-entry-per-line word list, skipping blank lines. Order and
/// duplicates are preserved.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

/// Word lists feeding the two counting clauses of the standard set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordLists {
    pub function_words: Vec<String>,
    pub connective_words: Vec<String>,
}

impl Default for WordLists {
    fn default() -> Self {
        Self {
            function_words: parse_word_list(FUNCTION_WORDS),
            connective_words: parse_word_list(CONNECTIVE_WORDS),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StandardOptions {
    pub lists: WordLists,
    /// Also forbid a naive plural/singular variant of the source concept.
    pub forbid_variants: bool,
}

/// Naive number variant of the last word of a concept ("bicycle" ->
/// "bicycles", "boxes" -> "boxe"/"box" is not attempted beyond trailing s).
fn number_variant(concept: &str) -> Option<String> {
    let trimmed = concept.trim();
    if let Some(stem) = trimmed.strip_suffix('s') {
        (!stem.is_empty() && !stem.ends_with('s')).then(|| stem.to_string())
    } else {
        Some(format!("{trimmed}s"))
    }
}

/// `count(function) <= 1 AND count(connective) = 0 AND NOT concept AND NOT
/// relation`, plus `related` as a required phrase when given.
pub fn build_standard_set(
    source_concept: &str,
    relational_phrase: &str,
    related_concept: Option<&str>,
) -> Result<ConstraintSet, ConstraintError> {
    build_standard_set_with(&StandardOptions::default(), source_concept, relational_phrase, related_concept)
}

pub fn build_standard_set_with(
    opts: &StandardOptions,
    source_concept: &str,
    relational_phrase: &str,
    related_concept: Option<&str>,
) -> Result<ConstraintSet, ConstraintError> {
    let concept = match (opts.forbid_variants, number_variant(source_concept)) {
        (true, Some(variant)) => Literal::count([source_concept, variant.as_str()], Comparator::Exactly, 0)?,
        _ => Literal::forbid(source_concept)?,
    };
    let mut literals = vec![
        Literal::count(&opts.lists.function_words, Comparator::AtMost, 1)?,
        Literal::count(&opts.lists.connective_words, Comparator::Exactly, 0)?,
        concept,
        Literal::forbid(relational_phrase)?,
    ];
    if let Some(related) = related_concept {
        literals.push(Literal::require(related)?);
    }
    Ok(ConstraintSet::conjunction(literals))
}

// Line-oriented text form, one clause per line, literals joined by " OR ":
//   count ["in","on"] <= 1
//   count ["and"] = 0
//   not "bicycle"
//   has "credit card"

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let quote = |s: &str| serde_json::to_string(s).expect("string serializes");
        match self {
            Literal::Phrase(p) => {
                let kw = match p.polarity {
                    Polarity::Positive => "has",
                    Polarity::Negative => "not",
                };
                write!(f, "{kw} {}", quote(&p.tokens.join(" ")))
            }
            Literal::Count(c) => {
                let op = match c.comparator {
                    Comparator::AtMost => "<=",
                    Comparator::Exactly => "=",
                };
                let list = serde_json::to_string(&c.entries()).expect("list serializes");
                write!(f, "count {list} {op} {}", c.bound)
            }
        }
    }
}

impl fmt::Display for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for clause in &self.clauses {
            let parts: Vec<String> = clause.0.iter().map(ToString::to_string).collect();
            writeln!(f, "{}", parts.join(" OR "))?;
        }
        Ok(())
    }
}

fn parse_literal(text: &str) -> Result<Literal, String> {
    let text = text.trim();
    if let Some(rest) = text.strip_prefix("count ") {
        let (list, tail) = rest
            .rsplit_once(']')
            .ok_or_else(|| "count literal needs a [..] word list".to_string())?;
        let words: Vec<String> =
            serde_json::from_str(&format!("{list}]")).map_err(|e| format!("bad word list: {e}"))?;
        let mut parts = tail.split_whitespace();
        let comparator = match parts.next() {
            Some("<=") => Comparator::AtMost,
            Some("=") => Comparator::Exactly,
            other => return Err(format!("unknown comparator {other:?}")),
        };
        let bound = parts
            .next()
            .and_then(|b| b.parse().ok())
            .ok_or_else(|| "count literal needs a non-negative bound".to_string())?;
        return Literal::count(words, comparator, bound).map_err(|e| e.to_string());
    }
    let (kw, rest) = text.split_once(' ').ok_or_else(|| format!("cannot parse literal {text:?}"))?;
    let surface: String = serde_json::from_str(rest).map_err(|e| format!("bad phrase: {e}"))?;
    match kw {
        "not" => Literal::forbid(&surface),
        "has" => Literal::require(&surface),
        _ => return Err(format!("unknown literal keyword {kw:?}")),
    }
    .map_err(|e| e.to_string())
}

impl FromStr for ConstraintSet {
    type Err = ConstraintError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut clauses = Vec::new();
        for (i, line) in s.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let lits = line
                .split(" OR ")
                .map(parse_literal)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|message| ConstraintError::Parse { line: i + 1, message })?;
            clauses.push(Clause(lits));
        }
        Self::new(clauses)
    }
}
