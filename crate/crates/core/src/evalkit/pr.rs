use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::critic::Label;

/// A system's score for one statement together with its gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabeledItem {
    pub text: String,
    pub score: f64,
    pub label: Label,
    #[serde(default)]
    pub system: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
}

/// Baselines ranked by perplexity score as its negation, so that lower
/// perplexity ranks higher.
pub fn score_from_perplexity(perplexity: f64) -> f64 {
    -perplexity
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, highest threshold first.
    pub points: Vec<PrPoint>,
    pub average_precision: f64,
}

impl PrCurve {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:>14} {:>10} {:>10}\n", "threshold", "precision", "recall");
        for p in &self.points {
            let _ = writeln!(s, "{:>14.6} {:>10.4} {:>10.4}", p.threshold, p.precision, p.recall);
        }
        let _ = writeln!(s, "average precision: {:.6}", self.average_precision);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        s
    }
}

/// Descending-score sweep. Items with equal scores enter together at one
/// threshold, and AP is the sum of precision times the recall gained at each
/// threshold. Without ties this is the mean of precision at each valid
/// item's rank.
pub fn pr_curve(items: &[ScoredLabeledItem]) -> Result<PrCurve, EvalError> {
    if items.iter().any(|i| i.score.is_nan()) {
        return Err(EvalError::NanScore);
    }
    let total_valid = items.iter().filter(|i| i.label == Label::Valid).count();
    if total_valid == 0 {
        return Err(EvalError::NoValidItems);
    }
    let mut order: Vec<&ScoredLabeledItem> = items.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = order[i].score;
        while i < order.len() && order[i].score == threshold {
            match order[i].label {
                Label::Valid => tp += 1,
                Label::Invalid => fp += 1,
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total_valid as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint { threshold, precision, recall });
    }
    Ok(PrCurve { points, average_precision: ap })
}

/// Fraction of items labeled valid.
pub fn accuracy(items: &[ScoredLabeledItem]) -> Result<f64, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(items.iter().filter(|i| i.label == Label::Valid).count() as f64 / items.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn item(score: f64, valid: bool) -> ScoredLabeledItem {
        ScoredLabeledItem {
            text: String::new(),
            score,
            label: if valid { Label::Valid } else { Label::Invalid },
            system: "t".into(),
            concept: None,
        }
    }

    #[test]
    fn perfect_ranking_has_unit_ap() {
        let items: Vec<_> = (0..10).map(|i| item(10.0 - i as f64, i < 4)).collect();
        assert_eq!(pr_curve(&items).unwrap().average_precision, 1.0);
    }

    #[test]
    fn single_valid_at_last_rank() {
        let mut items: Vec<_> = (0..9).map(|i| item(10.0 - i as f64, false)).collect();
        items.push(item(0.0, true));
        let ap = pr_curve(&items).unwrap().average_precision;
        assert!((ap - 0.1).abs() < 1e-15, "{ap}");
    }

    #[test]
    fn ties_share_a_point() {
        let items = vec![item(1.0, true), item(1.0, false), item(0.5, true)];
        let c = pr_curve(&items).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!(c.points[0].precision, 0.5);
        assert!((c.average_precision - (0.5 * 0.5 + 0.5 * (2.0 / 3.0))).abs() < 1e-15);
    }

    #[test]
    fn recall_is_non_decreasing() {
        let items: Vec<_> = (0..30).map(|i| item(((i * 37) % 11) as f64, i % 3 == 0)).collect();
        let c = pr_curve(&items).unwrap();
        assert!(c.points.windows(2).all(|w| w[0].recall <= w[1].recall));
        assert!((0.0..=1.0).contains(&c.average_precision));
        assert_eq!(c.points.last().unwrap().recall, 1.0);
    }

    #[test]
    fn no_valid_items_is_error() {
        assert!(matches!(pr_curve(&[item(1.0, false)]), Err(EvalError::NoValidItems)));
        assert!(matches!(pr_curve(&[item(f64::NAN, true)]), Err(EvalError::NanScore)));
    }

    #[test]
    fn accuracy_counts_valid() {
        assert_eq!(accuracy(&[item(0.0, true), item(0.0, true)]).unwrap(), 1.0);
        assert_eq!(accuracy(&[item(0.0, true), item(0.0, false)]).unwrap(), 0.5);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn perplexity_scores_rank_low_perplexity_first() {
        let items = vec![item(score_from_perplexity(300.0), false), item(score_from_perplexity(12.0), true)];
        assert_eq!(pr_curve(&items).unwrap().average_precision, 1.0);
    }

    #[test]
    fn table_and_csv_render() {
        let c = pr_curve(&[item(1.0, true), item(0.0, false)]).unwrap();
        assert!(c.to_table().contains("average precision: 1.000000"));
        assert_eq!(c.to_csv().lines().count(), 3);
    }
}
