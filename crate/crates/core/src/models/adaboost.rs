//! Discrete AdaBoost over shallow Gini trees.
//!
//! Round `m` fits a tree to the current weight distribution, with
//! `eps = sum of weights of misclassified rows` and
//! `alpha = 0.5 * ln((1 - eps) / eps)`; misclassified rows are scaled by
//! `e^alpha`, the rest by `e^-alpha`, then renormalised. Boosting stops when
//! a round's error reaches 0.5 (that round is discarded) or 0 (kept with
//! unit weight).

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_classification_tree, Node, Presorted};
use super::{check_training, sigmoid, EnsembleParams};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub params: EnsembleParams,
    pub learners: Vec<Node>,
    pub alphas: Vec<f64>,
    /// Weighted training error of every kept round.
    pub round_errors: Vec<f64>,
    /// Mean exponential loss on the training set after each kept round.
    pub train_exp_loss: Vec<f64>,
    pub feature_count: usize,
}

fn vote(node: &Node, row: ArrayView1<f64>) -> f64 {
    if node.predict(row) >= 0.5 {
        1.0
    } else {
        -1.0
    }
}

impl AdaBoostModel {
    /// `sum alpha_m * h_m(x)` with `h_m` in {-1, +1}.
    pub fn score_row(&self, row: ArrayView1<f64>) -> f64 {
        self.learners.iter().zip(&self.alphas).map(|(h, a)| a * vote(h, row)).sum()
    }

    /// `sigmoid(2 * score)`: monotone in the score, not calibrated.
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        sigmoid(2.0 * self.score_row(row))
    }
}

pub fn fit_adaboost(features: &Array2<f64>, labels: &[u8], params: &EnsembleParams) -> Result<AdaBoostModel> {
    params.validate()?;
    check_training(features, labels)?;
    let data = Presorted::new(features)?;
    let n = labels.len();
    let y01: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let ypm: Vec<f64> = labels.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect();
    let mut w: Vec<f64> = labels.iter().map(|&v| if v == 1 { params.class_weight } else { 1.0 }).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut model = AdaBoostModel {
        params: *params,
        learners: Vec::new(),
        alphas: Vec::new(),
        round_errors: Vec::new(),
        train_exp_loss: Vec::new(),
        feature_count: features.ncols(),
    };
    let mut scores = vec![0.0; n];

    for _ in 0..params.n_trees {
        let tree = fit_classification_tree(&data, &y01, &w, &params.tree, params.max_features, &mut rng);
        let h: Vec<f64> = features.rows().into_iter().map(|r| vote(&tree, r)).collect();
        let eps: f64 = (0..n).filter(|&i| h[i] != ypm[i]).map(|i| w[i]).sum();
        if eps >= 0.5 {
            break;
        }
        let perfect = eps <= 0.0;
        let alpha = if perfect { 1.0 } else { 0.5 * ((1.0 - eps) / eps).ln() };

        for i in 0..n {
            scores[i] += alpha * h[i];
        }
        model.learners.push(tree);
        model.alphas.push(alpha);
        model.round_errors.push(eps);
        model.train_exp_loss.push(scores.iter().zip(&ypm).map(|(s, y)| (-y * s).exp()).sum::<f64>() / n as f64);
        if perfect {
            break;
        }

        for i in 0..n {
            w[i] *= (-alpha * ypm[i] * h[i]).exp();
        }
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= z);
    }
    Ok(model)
}
