//! Evaluation: precision-recall, accuracy, and mark-and-recapture estimates
//! of how many distinct statements a system produces per concept.

pub mod bleu;
pub mod mnr;
pub mod pr;

pub use bleu::{bleu, BleuConfig, BleuReferences};
pub use mnr::{chapman, estimate_unique, estimate_unique_seeds, MnrConfig, MnrEstimate, MnrReport, MnrSummary};
pub use pr::{accuracy, pr_curve, score_from_perplexity, PrCurve, PrPoint, ScoredLabeledItem};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no items to evaluate")]
    Empty,
    #[error("no items labeled valid; precision-recall is undefined")]
    NoValidItems,
    #[error("score is NaN")]
    NanScore,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Reads scored items, one JSON object per line. Blank lines are skipped.
pub fn read_items(text: &str) -> Result<Vec<ScoredLabeledItem>, (usize, String)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e.to_string())))
        .collect()
}
