//! Random forest: CART trees on bootstrap resamples with per-split feature
//! subsets; the score is the mean leaf class-1 fraction.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_classification_tree, Node, Presorted};
use super::{check_training, EnsembleParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub params: EnsembleParams,
    pub trees: Vec<Node>,
    pub feature_count: usize,
}

impl RandomForestModel {
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Tree seeds are drawn in order from a generator seeded with
/// `params.seed`; tree `k` then uses its own generator for the bootstrap draw
/// followed by the feature subsets, so trees can grow in parallel.
pub fn fit_random_forest(features: &Array2<f64>, labels: &[u8], params: &EnsembleParams) -> Result<RandomForestModel> {
    params.validate()?;
    check_training(features, labels)?;
    if params.n_trees == 0 {
        return Err(Error::Config("random forest needs at least one tree".into()));
    }
    let data = Presorted::new(features)?;
    let n = labels.len();
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let base: Vec<f64> = labels.iter().map(|&v| if v == 1 { params.class_weight } else { 1.0 }).collect();

    let mut master = ChaCha8Rng::seed_from_u64(params.seed);
    let seeds: Vec<u64> = (0..params.n_trees).map(|_| master.random()).collect();

    let trees = seeds
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weights = if params.bootstrap {
                let mut counts = vec![0.0; n];
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1.0;
                }
                counts.iter().zip(&base).map(|(c, b)| c * b).collect()
            } else {
                base.clone()
            };
            fit_classification_tree(&data, &y, &weights, &params.tree, params.max_features, &mut rng)
        })
        .collect();
    Ok(RandomForestModel { params: *params, trees, feature_count: features.ncols() })
}
