//! Gradient boosting with logistic loss.
//!
//! `F_0 = ln(p / (1 - p))` for the (class-weighted) prevalence `p`. Each round
//! fits a squared-error tree to the negative gradients
//! `g_i = w_i * (y_i - sigmoid(F_i))` and sets every leaf to one Newton step
//! `sum g / sum h` with `h_i = w_i * p_i * (1 - p_i)`, shrunk by the learning
//! rate. If the shrunk step would raise the weighted loss of the rows in that
//! leaf it is halved until it does not, so the training loss never increases.

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, Criterion, MaxFeatures, Node, Presorted};
use super::{check_training, logistic_loss, sigmoid, EnsembleParams};
use crate::error::Result;

const PREVALENCE_CLAMP: f64 = 1e-12;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoostingModel {
    pub params: EnsembleParams,
    /// Initial logit.
    pub base_score: f64,
    /// Trees whose leaves already include the learning rate.
    pub trees: Vec<Node>,
    /// Weighted mean training log-loss before any tree, then after each round.
    pub train_loss: Vec<f64>,
    pub feature_count: usize,
}

impl GradientBoostingModel {
    pub fn logit_row(&self, row: ArrayView1<f64>) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        sigmoid(self.logit_row(row))
    }
}

fn weighted_loss(y: &[f64], w: &[f64], f: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    y.iter().zip(w).zip(f).map(|((&y, &w), &f)| w * logistic_loss(y, f)).sum::<f64>() / total
}

pub fn fit_gradient_boosting(
    features: &Array2<f64>,
    labels: &[u8],
    params: &EnsembleParams,
) -> Result<GradientBoostingModel> {
    params.validate()?;
    check_training(features, labels)?;
    let data = Presorted::new(features)?;
    let n = labels.len();
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let w: Vec<f64> = labels.iter().map(|&v| if v == 1 { params.class_weight } else { 1.0 }).collect();

    let w_pos: f64 = y.iter().zip(&w).map(|(y, w)| y * w).sum();
    let prevalence = (w_pos / w.iter().sum::<f64>()).clamp(PREVALENCE_CLAMP, 1.0 - PREVALENCE_CLAMP);
    let base_score = (prevalence / (1.0 - prevalence)).ln();

    let mut f = vec![base_score; n];
    let mut model = GradientBoostingModel {
        params: *params,
        base_score,
        trees: Vec::with_capacity(params.n_trees),
        train_loss: vec![weighted_loss(&y, &w, &f)],
        feature_count: features.ncols(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_sub = ((params.subsample_fraction * n as f64).round() as usize).clamp(1, n);

    for _ in 0..params.n_trees {
        let p: Vec<f64> = f.iter().map(|&z| sigmoid(z)).collect();
        let grad: Vec<f64> = (0..n).map(|i| w[i] * (y[i] - p[i])).collect();
        let hess: Vec<f64> = (0..n).map(|i| w[i] * p[i] * (1.0 - p[i])).collect();

        let fit_weights: Vec<f64> = if n_sub < n {
            let mut v = vec![0.0; n];
            for i in sample_indices(&mut rng, n, n_sub) {
                v[i] = 1.0;
            }
            v
        } else {
            vec![1.0; n]
        };
        let grown =
            grow_tree(&data, &grad, &fit_weights, Criterion::SquaredError, &params.tree, MaxFeatures::All, &mut rng);

        // Newton values from the rows used for fitting
        let n_nodes = grown.n_nodes();
        let mut sum_g = vec![0.0; n_nodes];
        let mut sum_h = vec![0.0; n_nodes];
        for (i, &leaf) in grown.leaf_of_row.iter().enumerate() {
            if leaf != usize::MAX {
                sum_g[leaf] += grad[i];
                sum_h[leaf] += hess[i];
            }
        }
        let route: Vec<usize> = (0..n).map(|i| grown.route(&data, i)).collect();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for (i, &leaf) in route.iter().enumerate() {
            members[leaf].push(i);
        }

        let leaf_loss =
            |rows: &[usize], step: f64| -> f64 { rows.iter().map(|&i| w[i] * logistic_loss(y[i], f[i] + step)).sum() };
        let mut values = vec![0.0; n_nodes];
        for leaf in grown.leaves() {
            let rows = &members[leaf];
            let (g, h) = (sum_g[leaf], sum_h[leaf]);
            if rows.is_empty() || g == 0.0 {
                continue;
            }
            let mut step = params.learning_rate * g / h.max(f64::MIN_POSITIVE);
            let before = leaf_loss(rows, 0.0);
            let mut halvings = 0;
            while !(leaf_loss(rows, step) <= before) {
                halvings += 1;
                if halvings > MAX_HALVINGS {
                    step = 0.0;
                    break;
                }
                step *= 0.5;
            }
            values[leaf] = step;
        }
        for (i, &leaf) in route.iter().enumerate() {
            f[i] += values[leaf];
        }
        model.trees.push(grown.into_node(|id| values[id]));
        model.train_loss.push(weighted_loss(&y, &w, &f));
    }
    Ok(model)
}
