//! Tokenization and the token-id universe shared by scorers and the decoder.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("token id {0} is outside the vocabulary")]
    InvalidId(TokenId),
    #[error("duplicate token {0:?} in vocabulary listing")]
    Duplicate(String),
    #[error("vocabulary listing must start with {BOS_TOKEN}, {EOS_TOKEN}, {UNK_TOKEN}")]
    MissingReserved,
    #[error("end-of-sequence marker at position {0} is not terminal")]
    EosNotTerminal(usize),
}

/// Splits text into lowercase word and punctuation tokens.
///
/// Runs of alphanumeric characters form words; an apostrophe or hyphen
/// between two alphanumerics stays inside the word ("don't", "x-ray").
/// Every other non-space character becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut word = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            continue;
        }
        let joiner = (c == '\'' || c == '-')
            && !word.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if joiner {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Ordered token list with a reverse index. Ids 0, 1 and 2 are always
/// `<s>`, `</s>` and `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from word tokens; the words are deduplicated and
    /// sorted so the id assignment does not depend on input order.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| !is_reserved(w))
            .collect();
        let tokens = [BOS_TOKEN, EOS_TOKEN, UNK_TOKEN]
            .into_iter()
            .map(String::from)
            .chain(set)
            .collect();
        Self::from_listing(tokens).expect("reserved tokens are present and words are unique")
    }

    /// Vocabulary over every token of every line of `corpus`.
    pub fn from_corpus<S: AsRef<str>>(corpus: &[S]) -> Self {
        Self::from_words(corpus.iter().flat_map(|line| tokenize(line.as_ref())))
    }

    /// Rebuilds a vocabulary from an explicit id-ordered listing.
    pub fn from_listing(tokens: Vec<String>) -> Result<Self, VocabError> {
        if tokens.len() < 3
            || tokens[0] != BOS_TOKEN
            || tokens[1] != EOS_TOKEN
            || tokens[2] != UNK_TOKEN
        {
            return Err(VocabError::MissingReserved);
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return Err(VocabError::Duplicate(t.clone()));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    /// Id for `token`, falling back to `<unk>`.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK)
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    /// Tokens a decoder may produce: everything except `<s>` and `<unk>`.
    pub fn is_emittable(&self, id: TokenId) -> bool {
        id != BOS && id != UNK && self.contains_id(id)
    }

    /// Tokenizes and maps text to ids. No start or end markers are added.
    pub fn encode(&self, text: &str) -> TokenSequence {
        TokenSequence(tokenize(text).iter().map(|t| self.id_or_unk(t)).collect())
    }

    /// Space-joined surface form, dropping reserved markers.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| id != BOS && id != EOS)
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn check(&self, ids: &[TokenId]) -> Result<(), VocabError> {
        match ids.iter().find(|&&id| !self.contains_id(id)) {
            Some(&bad) => Err(VocabError::InvalidId(bad)),
            None => Ok(()),
        }
    }
}

fn is_reserved(w: &str) -> bool {
    w == BOS_TOKEN || w == EOS_TOKEN || w == UNK_TOKEN
}

/// A run of token ids; at most one `</s>`, and only at the end.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ends_with_eos(&self) -> bool {
        self.0.last() == Some(&EOS)
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), VocabError> {
        vocab.check(&self.0)?;
        match self.0.iter().position(|&id| id == EOS) {
            Some(p) if p + 1 != self.0.len() => Err(VocabError::EosNotTerminal(p)),
            _ => Ok(()),
        }
    }

    pub fn with_eos(mut self) -> Self {
        if !self.ends_with_eos() {
            self.0.push(EOS);
        }
        self
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("Typically, a Bicycle has two wheels."),
            vec!["typically", ",", "a", "bicycle", "has", "two", "wheels", "."]
        );
        assert_eq!(tokenize("don't x-ray 'quoted'"), vec!["don't", "x-ray", "'", "quoted", "'"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::from_words(["b", "a", "a"]);
        assert_eq!(v.token(BOS), Some(BOS_TOKEN));
        assert_eq!(v.token(EOS), Some(EOS_TOKEN));
        assert_eq!(v.token(UNK), Some(UNK_TOKEN));
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), Some(3));
        assert_eq!(v.id("b"), Some(4));
    }

    #[test]
    fn bijection_holds() {
        let v = Vocabulary::from_corpus(&["the cat sat", "a dog ran on the mat"]);
        for i in 0..v.len() as TokenId {
            assert_eq!(v.id(v.token(i).unwrap()), Some(i));
        }
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocabulary::from_words(["cat"]);
        assert_eq!(v.encode("Cat zebra").ids(), &[3, UNK]);
    }

    #[test]
    fn eos_must_be_terminal() {
        let v = Vocabulary::from_words(["x"]);
        assert!(TokenSequence(vec![3, EOS]).validate(&v).is_ok());
        assert_eq!(
            TokenSequence(vec![EOS, 3]).validate(&v),
            Err(VocabError::EosNotTerminal(0))
        );
        assert_eq!(TokenSequence(vec![9]).validate(&v), Err(VocabError::InvalidId(9)));
    }

    #[test]
    fn listing_rejects_missing_reserved() {
        assert_eq!(
            Vocabulary::from_listing(vec!["a".into()]),
            Err(VocabError::MissingReserved)
        );
    }
}
