//! Classifiers behind one interface: [`TrainedModel::predict_proba`] returns
//! scores in `[0, 1]` and [`TrainedModel::predict`] thresholds them.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod adaboost;
pub mod boosting;
pub mod forest;
pub mod logreg;
pub mod major_rtl;
pub mod tree;

pub use adaboost::{fit_adaboost, AdaBoostModel};
pub use boosting::{fit_gradient_boosting, GradientBoostingModel};
pub use forest::{fit_random_forest, RandomForestModel};
pub use logreg::{fit_logreg, LogRegModel, LogRegParams};
pub use major_rtl::{fit_major_rtl, MajorRtlModel, Polarity};
pub use tree::{fit_tree, MaxFeatures, Node, TreeModel, TreeParams};

/// Version written into serialized model files.
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Log-loss of label `y` at logit `z`.
pub fn logistic_loss(y: f64, z: f64) -> f64 {
    softplus(z) - y * z
}

/// Shared hyperparameters of the tree ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleParams {
    pub tree: TreeParams,
    pub n_trees: usize,
    /// Boosting shrinkage.
    pub learning_rate: f64,
    /// Row fraction per boosting round (sampled without replacement).
    pub subsample_fraction: f64,
    pub seed: u64,
    /// Weight multiplier for positive rows.
    pub class_weight: f64,
    /// Random forest only: resample rows with replacement per tree.
    pub bootstrap: bool,
    pub max_features: MaxFeatures,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self::random_forest()
    }
}

impl EnsembleParams {
    pub fn random_forest() -> Self {
        Self {
            tree: TreeParams { max_depth: 8, min_samples_leaf: 5 },
            n_trees: 200,
            learning_rate: 1.0,
            subsample_fraction: 1.0,
            seed: 0,
            class_weight: 1.0,
            bootstrap: true,
            max_features: MaxFeatures::Sqrt,
        }
    }

    pub fn gradient_boosting() -> Self {
        Self {
            tree: TreeParams { max_depth: 3, min_samples_leaf: 5 },
            n_trees: 200,
            learning_rate: 0.1,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..Self::random_forest()
        }
    }

    pub fn adaboost() -> Self {
        Self {
            tree: TreeParams { max_depth: 1, min_samples_leaf: 1 },
            n_trees: 100,
            bootstrap: false,
            max_features: MaxFeatures::All,
            ..Self::random_forest()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!("learning rate {} outside (0, 1]", self.learning_rate)));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::Config(format!("subsample fraction {} outside (0, 1]", self.subsample_fraction)));
        }
        if !(self.class_weight > 0.0 && self.class_weight.is_finite()) {
            return Err(Error::Config(format!("class weight {} must be positive", self.class_weight)));
        }
        Ok(())
    }
}

pub(crate) fn check_training(features: &Array2<f64>, labels: &[u8]) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(Error::Data(format!("{} feature rows for {} labels", features.nrows(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Data("labels must be 0 or 1".into()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("features must be finite".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MajorRtl,
    Logreg,
    Tree,
    RandomForest,
    Adaboost,
    GradientBoosting,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::MajorRtl => "major_rtl",
            ModelKind::Logreg => "logreg",
            ModelKind::Tree => "tree",
            ModelKind::RandomForest => "random_forest",
            ModelKind::Adaboost => "adaboost",
            ModelKind::GradientBoosting => "gradient_boosting",
        }
    }

    /// Display name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::MajorRtl => "Major_RTL",
            ModelKind::Logreg => "Logistic Regression",
            ModelKind::Tree => "Decision Tree",
            ModelKind::RandomForest => "Random Forest",
            ModelKind::Adaboost => "AdaBoost",
            ModelKind::GradientBoosting => "Gradient Boosting",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            ModelKind::MajorRtl,
            ModelKind::Logreg,
            ModelKind::Tree,
            ModelKind::RandomForest,
            ModelKind::Adaboost,
            ModelKind::GradientBoosting,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }
}

/// A fitted classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
pub enum TrainedModel {
    MajorRtl(MajorRtlModel),
    Logreg(LogRegModel),
    Tree(TreeModel),
    RandomForest(RandomForestModel),
    Adaboost(AdaBoostModel),
    GradientBoosting(GradientBoostingModel),
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    feature_count: usize,
    model: TrainedModel,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::MajorRtl(_) => ModelKind::MajorRtl,
            TrainedModel::Logreg(_) => ModelKind::Logreg,
            TrainedModel::Tree(_) => ModelKind::Tree,
            TrainedModel::RandomForest(_) => ModelKind::RandomForest,
            TrainedModel::Adaboost(_) => ModelKind::Adaboost,
            TrainedModel::GradientBoosting(_) => ModelKind::GradientBoosting,
        }
    }

    pub fn feature_count(&self) -> usize {
        match self {
            TrainedModel::MajorRtl(m) => m.feature_count,
            TrainedModel::Logreg(m) => m.feature_count,
            TrainedModel::Tree(m) => m.feature_count,
            TrainedModel::RandomForest(m) => m.feature_count,
            TrainedModel::Adaboost(m) => m.feature_count,
            TrainedModel::GradientBoosting(m) => m.feature_count,
        }
    }

    fn proba_row(&self, row: ArrayView1<f64>) -> f64 {
        match self {
            TrainedModel::MajorRtl(m) => m.predict_row(row),
            TrainedModel::Logreg(m) => m.predict_row(row),
            TrainedModel::Tree(m) => m.predict_row(row),
            TrainedModel::RandomForest(m) => m.predict_row(row),
            TrainedModel::Adaboost(m) => m.predict_row(row),
            TrainedModel::GradientBoosting(m) => m.predict_row(row),
        }
    }

    pub fn predict_proba(&self, features: &Array2<f64>) -> Result<Vec<f64>> {
        if features.ncols() != self.feature_count() {
            return Err(Error::DimensionMismatch { expected: self.feature_count(), got: features.ncols() });
        }
        Ok(features.rows().into_iter().map(|r| self.proba_row(r)).collect())
    }

    /// Hard labels: `proba >= threshold`.
    pub fn predict(&self, features: &Array2<f64>, threshold: f64) -> Result<Vec<u8>> {
        Ok(self.predict_proba(features)?.into_iter().map(|p| u8::from(p >= threshold)).collect())
    }

    /// Writes the versioned JSON model file.
    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            feature_count: self.feature_count(),
            model: self.clone(),
        };
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(input: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(input)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported model format version {}", file.format_version)));
        }
        if file.feature_count != file.model.feature_count() {
            return Err(Error::Data("model file feature count disagrees with model".into()));
        }
        file.model.check_structure()?;
        Ok(file.model)
    }

    fn check_structure(&self) -> Result<()> {
        let d = self.feature_count();
        let trees: Vec<&Node> = match self {
            TrainedModel::MajorRtl(m) => {
                return if m.feature_index < d { Ok(()) } else { Err(Error::Data("rule feature out of range".into())) };
            }
            TrainedModel::Logreg(m) => {
                return if m.theta.len() == d { Ok(()) } else { Err(Error::Data("coefficient count mismatch".into())) };
            }
            TrainedModel::Tree(m) => vec![&m.root],
            TrainedModel::RandomForest(m) => m.trees.iter().collect(),
            TrainedModel::Adaboost(m) => {
                if m.alphas.len() != m.learners.len() {
                    return Err(Error::Data("one weight per learner expected".into()));
                }
                m.learners.iter().collect()
            }
            TrainedModel::GradientBoosting(m) => m.trees.iter().collect(),
        };
        if trees.iter().any(|t| t.max_feature().is_some_and(|f| f >= d)) {
            return Err(Error::Data("tree splits on a feature beyond the model's feature count".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_and_loss_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) == 0.0);
        assert!(logistic_loss(1.0, 800.0) < 1e-300);
        assert!((logistic_loss(0.0, 800.0) - 800.0).abs() < 1e-9);
        assert!((logistic_loss(1.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [ModelKind::MajorRtl, ModelKind::Logreg, ModelKind::GradientBoosting] {
            assert_eq!(ModelKind::from_name(k.name()), Some(k));
        }
        assert_eq!(ModelKind::from_name("svm"), None);
    }
}
