//! Single-feature threshold rule ("Major RTL").

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::tree::midpoint;
use super::{check_training, sigmoid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// `x >= threshold` predicts 1.
    Above,
    /// `x <= threshold` predicts 1.
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorRtlModel {
    pub feature_index: usize,
    pub threshold: f64,
    pub polarity: Polarity,
    /// Spread used to turn the signed margin into a score.
    pub scale: f64,
    pub train_f1: f64,
    pub feature_count: usize,
}

impl MajorRtlModel {
    pub fn fires(&self, x: f64) -> bool {
        match self.polarity {
            Polarity::Above => x >= self.threshold,
            Polarity::Below => x <= self.threshold,
        }
    }

    /// Monotone score in the signed margin; `>= 0.5` exactly when the rule fires.
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        let x = row[self.feature_index];
        let margin = match self.polarity {
            Polarity::Above => x - self.threshold,
            Polarity::Below => self.threshold - x,
        };
        let p = sigmoid(margin / self.scale);
        if self.fires(x) {
            p.max(0.5)
        } else {
            p.min(0.5f64.next_down())
        }
    }
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        0.0
    } else {
        (2 * tp) as f64 / den as f64
    }
}

/// Picks the threshold and polarity maximising training F1 over midpoints of
/// consecutive distinct values. Ties go to the smaller threshold, then to
/// [`Polarity::Above`].
pub fn fit_major_rtl(features: &Array2<f64>, labels: &[u8], feature_index: usize) -> Result<MajorRtlModel> {
    check_training(features, labels)?;
    if feature_index >= features.ncols() {
        return Err(Error::Config(format!(
            "feature index {feature_index} out of range for {} columns",
            features.ncols()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::Degenerate("threshold rule needs both classes in training".into()));
    }

    let col = features.column(feature_index);
    let mut pairs: Vec<(f64, u8)> = col.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // distinct values with the number of positives/negatives at or below each
    let mut values = Vec::new();
    let mut pos_le = Vec::new();
    let mut neg_le = Vec::new();
    let (mut p, mut q) = (0usize, 0usize);
    for (i, &(v, y)) in pairs.iter().enumerate() {
        if y == 1 {
            p += 1;
        } else {
            q += 1;
        }
        if i + 1 == pairs.len() || pairs[i + 1].0 != v {
            values.push(v);
            pos_le.push(p);
            neg_le.push(q);
        }
    }
    let n_neg = labels.len() - n_pos;

    let mut best = (f1_from_counts(n_pos, n_neg, 0), values[0], Polarity::Above, false);
    for j in 0..values.len().saturating_sub(1) {
        let theta = midpoint(values[j], values[j + 1]);
        // Above: everything beyond values[j] fires
        let tp = n_pos - pos_le[j];
        let fp = n_neg - neg_le[j];
        let above = f1_from_counts(tp, fp, n_pos - tp);
        let below = f1_from_counts(pos_le[j], neg_le[j], n_pos - pos_le[j]);
        for (f1, pol) in [(above, Polarity::Above), (below, Polarity::Below)] {
            if !best.3 || f1 > best.0 {
                best = (f1, theta, pol, true);
            }
        }
    }

    let mean = col.mean().unwrap_or(0.0);
    let std = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64).sqrt();
    Ok(MajorRtlModel {
        feature_index,
        threshold: best.1,
        polarity: best.2,
        scale: if std > 0.0 { std } else { 1.0 },
        train_f1: best.0,
        feature_count: features.ncols(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separable_picks_midpoint() {
        let x = array![[0.1], [0.2], [0.8], [0.9]];
        let m = fit_major_rtl(&x, &[0, 0, 1, 1], 0).unwrap();
        assert_eq!(m.train_f1, 1.0);
        assert_eq!(m.polarity, Polarity::Above);
        assert!((m.threshold - 0.5).abs() < 1e-12);
    }

    #[test]
    fn anti_correlated_flips_polarity() {
        let x = array![[0.1], [0.2], [0.8], [0.9]];
        let m = fit_major_rtl(&x, &[1, 1, 0, 0], 0).unwrap();
        assert_eq!(m.train_f1, 1.0);
        assert_eq!(m.polarity, Polarity::Below);
        for (row, y) in x.rows().into_iter().zip([1u8, 1, 0, 0]) {
            assert_eq!(u8::from(m.predict_row(row) >= 0.5), y);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let x = array![[0.1], [0.2]];
        assert!(fit_major_rtl(&x, &[1, 1], 0).is_err());
        assert!(fit_major_rtl(&x, &[1, 0], 3).is_err());
    }

    #[test]
    fn score_agrees_with_rule_near_threshold() {
        let x = array![[0.0], [1.0]];
        let m = fit_major_rtl(&x, &[0, 1], 0).unwrap();
        let just_below = array![m.threshold.next_down()];
        let at = array![m.threshold];
        assert!(m.predict_row(just_below.view()) < 0.5);
        assert!(m.predict_row(at.view()) >= 0.5);
    }
}
