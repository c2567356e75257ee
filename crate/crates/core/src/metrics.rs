//! Binary classification metrics.
//!
//! Ratios with a zero denominator evaluate to 0 and are flagged as
//! degenerate, so report tables stay numeric.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// A ratio metric plus a flag telling whether its denominator was zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub degenerate: bool,
}

fn ratio(num: f64, den: f64) -> Score {
    if den == 0.0 {
        Score { value: 0.0, degenerate: true }
    } else {
        Score { value: num / den, degenerate: false }
    }
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> Score {
        ratio(self.tp as f64, (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> Score {
        ratio(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    pub fn false_positive_rate(&self) -> Score {
        ratio(self.fp as f64, (self.fp + self.tn) as f64)
    }

    pub fn f1(&self) -> Score {
        f1_score(self.precision().value, self.recall().value)
    }
}

/// Harmonic mean of precision and recall.
pub fn f1_score(precision: f64, recall: f64) -> Score {
    ratio(2.0 * precision * recall, precision + recall)
}

fn check_binary(truth: &[u8]) -> Result<()> {
    if truth.iter().any(|&y| y > 1) {
        return Err(Error::Data("labels must be 0 or 1".into()));
    }
    Ok(())
}

pub fn confusion(pred: &[u8], truth: &[u8]) -> Result<Confusion> {
    if pred.len() != truth.len() {
        return Err(Error::Data(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    check_binary(truth)?;
    check_binary(pred)?;
    let mut c = Confusion::default();
    for (&p, &y) in pred.iter().zip(truth) {
        match (p, y) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `(score, label)` pairs sorted by descending score.
fn sorted_desc(scores: &[f64], truth: &[u8]) -> Result<Vec<(f64, u8)>> {
    if scores.len() != truth.len() {
        return Err(Error::Data(format!("{} scores for {} labels", scores.len(), truth.len())));
    }
    check_binary(truth)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("scores contain NaN".into()));
    }
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(truth.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    Ok(pairs)
}

/// Groups of equal scores, in descending score order, as `(positives, negatives)`.
fn tie_groups(pairs: &[(f64, u8)]) -> Vec<(u64, u64)> {
    let mut groups = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        let (mut p, mut n) = (0u64, 0u64);
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            if pairs[j].1 == 1 {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        groups.push((p, n));
        i = j;
    }
    groups
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(s+ > s-) + 0.5 * P(s+ == s-)`.
pub fn roc_auc(scores: &[f64], truth: &[u8]) -> Result<f64> {
    let pairs = sorted_desc(scores, truth)?;
    let n_pos = pairs.iter().filter(|p| p.1 == 1).count() as u64;
    let n_neg = pairs.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate("ROC AUC needs both classes".into()));
    }
    // twice the U statistic, kept in integers
    let mut u2: u128 = 0;
    let mut neg_below = n_neg;
    for (p, n) in tie_groups(&pairs) {
        neg_below -= n;
        u2 += 2 * p as u128 * neg_below as u128 + p as u128 * n as u128;
    }
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Area under the precision-recall curve as average precision:
/// `sum_k (R_k - R_{k-1}) * P_k` over distinct score thresholds.
pub fn pr_auc(scores: &[f64], truth: &[u8]) -> Result<f64> {
    let pairs = sorted_desc(scores, truth)?;
    let n_pos = pairs.iter().filter(|p| p.1 == 1).count() as u64;
    if n_pos == 0 {
        return Err(Error::Degenerate("PR AUC needs at least one positive".into()));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for (p, n) in tie_groups(&pairs) {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / n_pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub model_kind: String,
    pub config_tag: String,
}

pub const REPORT_HEADER: &str = "config,model,precision,recall,f1,roc_auc,pr_auc";

impl EvalReport {
    /// Scores `scores` against `truth`; hard labels are `score >= threshold`.
    pub fn evaluate(
        scores: &[f64],
        truth: &[u8],
        threshold: f64,
        model_kind: impl Into<String>,
        config_tag: impl Into<String>,
    ) -> Result<Self> {
        let pred: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
        let confusion = confusion(&pred, truth)?;
        let precision = confusion.precision().value;
        let recall = confusion.recall().value;
        Ok(Self {
            confusion,
            precision,
            recall,
            f1: f1_score(precision, recall).value,
            roc_auc: roc_auc(scores, truth)?,
            pr_auc: pr_auc(scores, truth)?,
            model_kind: model_kind.into(),
            config_tag: config_tag.into(),
        })
    }

    pub fn write_csv_row<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            self.config_tag, self.model_kind, self.precision, self.recall, self.f1, self.roc_auc, self.pr_auc
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_basics() {
        let c = confusion(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!(c, Confusion { tp: 2, fp: 0, tn: 1, fn_: 0 });
        let c = confusion(&[0, 1, 0], &[1, 0, 1]).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert!(confusion(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn ratio_conventions() {
        let c = Confusion { tp: 3, fp: 1, tn: 0, fn_: 0 };
        assert_eq!(c.precision().value, 0.75);
        let c = Confusion { tp: 0, fp: 0, tn: 5, fn_: 0 };
        let r = c.recall();
        assert_eq!(r.value, 0.0);
        assert!(r.degenerate);
        let f = f1_score(0.9, 0.9);
        assert!((f.value - 0.9).abs() < 1e-15);
        assert!(f1_score(0.0, 0.0).degenerate);
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert_eq!(pr_auc(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert!((pr_auc(&[0.4; 5], &[1, 0, 0, 1, 0]).unwrap() - 0.4).abs() < 1e-15);
        assert!(pr_auc(&[0.4; 3], &[0, 0, 0]).is_err());
    }

    #[test]
    fn report_row() {
        let r = EvalReport::evaluate(&[0.9, 0.2, 0.7, 0.1], &[1, 0, 0, 0], 0.5, "logreg", "r50_t180").unwrap();
        assert_eq!(r.confusion, Confusion { tp: 1, fp: 1, tn: 2, fn_: 0 });
        let mut buf = Vec::new();
        r.write_csv_row(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "r50_t180,logreg,0.5,1,0.6666666666666666,1,1\n");
    }
}
