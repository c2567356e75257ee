//! The grid experiment: catalog in, lagged RTL features, chronological split,
//! optional resampling, normalisation, model fitting and per-cell reports.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{parse_catalog, Catalog, SpatialIndex};
use crate::dataset::{
    apply_normalizer, build_dataset, chronological_split, fit_normalizer, oversample, undersample, BuiltDataset,
    Dataset, LabelRule, NormMode, SampleSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, REPORT_HEADER};
use crate::models::{
    fit_adaboost, fit_gradient_boosting, fit_logreg, fit_major_rtl, fit_random_forest, fit_tree, EnsembleParams,
    LogRegParams, MaxFeatures, ModelKind, TrainedModel, TreeParams,
};
use crate::rtl::RtlConfig;
use crate::synth::{generate_catalog, SynthSpec};

pub const REPORT_FILE: &str = "report.csv";
pub const AUDIT_FILE: &str = "audit.csv";
pub const CATALOG_FILE: &str = "catalog.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const MAGNITUDE_HISTOGRAM_FILE: &str = "magnitude_histogram.csv";
pub const RTL_HISTOGRAM_FILE: &str = "rtl_histogram.csv";
pub const MODELS_DIR: &str = "models";

/// Tag of the cell that uses every grid feature at once.
pub const AGGREGATE_TAG: &str = "all";
/// Model column of a row recording that a whole cell failed.
pub const ERROR_MODEL: &str = "error";

const RTL_HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    #[default]
    None,
    Over,
    Under,
}

impl Resampling {
    pub fn name(self) -> &'static str {
        match self {
            Resampling::None => "none",
            Resampling::Over => "over",
            Resampling::Under => "under",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Every grid cell: `n_lags * |r0_grid| * |t0_grid|` columns.
    #[default]
    Aggregate,
    /// One `(r0, t0)` cell: `n_lags` columns.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOptions {
    pub mode: FeatureMode,
    pub r0_km: f64,
    pub t0_days: f64,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self { mode: FeatureMode::Aggregate, r0_km: 50.0, t0_days: 180.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RtlOptions {
    pub min_mag: f64,
    pub cutoff_factor: f64,
    pub min_r_km: f64,
}

impl Default for RtlOptions {
    fn default() -> Self {
        let d = RtlConfig::default();
        Self { min_mag: d.min_mag, cutoff_factor: d.cutoff_factor, min_r_km: d.min_r_km }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Normalization {
    pub mode: NormMode,
    /// Trailing window (rows) of the moving-average mode.
    pub window: usize,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { mode: NormMode::Zscore, window: 100 }
    }
}

/// One model to fit in every cell. Unset hyperparameters take the model's
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Threshold rule: which lag column to threshold.
    #[serde(default)]
    pub lag: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_samples_leaf: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trees: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weight: Option<f64>,
    /// Ensembles weight positives by `n_neg / n_pos` of the training rows
    /// unless `class_weight` is set.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub balanced: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_features: Option<MaxFeatures>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            lag: 0,
            max_depth: None,
            min_samples_leaf: None,
            n_trees: None,
            learning_rate: None,
            subsample_fraction: None,
            class_weight: None,
            balanced: false,
            bootstrap: None,
            max_features: None,
            seed: None,
            l2: None,
            lr: None,
            max_iter: None,
            tol: None,
        }
    }

    pub fn ensemble_params(&self, default_seed: u64) -> EnsembleParams {
        let base = match self.kind {
            ModelKind::GradientBoosting => EnsembleParams::gradient_boosting(),
            ModelKind::Adaboost => EnsembleParams::adaboost(),
            _ => EnsembleParams::random_forest(),
        };
        EnsembleParams {
            tree: TreeParams {
                max_depth: self.max_depth.unwrap_or(base.tree.max_depth),
                min_samples_leaf: self.min_samples_leaf.unwrap_or(base.tree.min_samples_leaf),
            },
            n_trees: self.n_trees.unwrap_or(base.n_trees),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            subsample_fraction: self.subsample_fraction.unwrap_or(base.subsample_fraction),
            seed: self.seed.unwrap_or(default_seed),
            class_weight: self.class_weight.unwrap_or(base.class_weight),
            bootstrap: self.bootstrap.unwrap_or(base.bootstrap),
            max_features: self.max_features.unwrap_or(base.max_features),
        }
    }

    fn fit_params(&self, labels: &[u8], default_seed: u64) -> EnsembleParams {
        let mut params = self.ensemble_params(default_seed);
        if self.balanced && self.class_weight.is_none() {
            params.class_weight = balanced_class_weight(labels);
        }
        params
    }

    pub fn logreg_params(&self) -> LogRegParams {
        let d = LogRegParams::default();
        LogRegParams {
            l2: self.l2.unwrap_or(d.l2),
            lr: self.lr.unwrap_or(d.lr),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            tol: self.tol.unwrap_or(d.tol),
        }
    }

    pub fn tree_params(&self) -> TreeParams {
        let d = TreeParams::default();
        TreeParams {
            max_depth: self.max_depth.unwrap_or(d.max_depth),
            min_samples_leaf: self.min_samples_leaf.unwrap_or(d.min_samples_leaf),
        }
    }

    /// Fits on normalised features. The threshold rule uses column
    /// `self.lag`, i.e. that lag of the first RTL configuration.
    pub fn fit(&self, features: &Array2<f64>, labels: &[u8], default_seed: u64) -> Result<TrainedModel> {
        Ok(match self.kind {
            ModelKind::MajorRtl => TrainedModel::MajorRtl(fit_major_rtl(features, labels, self.lag)?),
            ModelKind::Logreg => TrainedModel::Logreg(fit_logreg(features, labels, &self.logreg_params())?),
            ModelKind::Tree => TrainedModel::Tree(fit_tree(features, labels, &self.tree_params())?),
            ModelKind::RandomForest => {
                TrainedModel::RandomForest(fit_random_forest(features, labels, &self.fit_params(labels, default_seed))?)
            }
            ModelKind::Adaboost => {
                TrainedModel::Adaboost(fit_adaboost(features, labels, &self.fit_params(labels, default_seed))?)
            }
            ModelKind::GradientBoosting => TrainedModel::GradientBoosting(fit_gradient_boosting(
                features,
                labels,
                &self.fit_params(labels, default_seed),
            )?),
        })
    }
}

/// `n_neg / n_pos`, or 1 when either class is missing.
pub fn balanced_class_weight(labels: &[u8]) -> f64 {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        1.0
    } else {
        neg as f64 / pos as f64
    }
}

fn default_models() -> Vec<ModelSpec> {
    [ModelKind::MajorRtl, ModelKind::Logreg, ModelKind::RandomForest, ModelKind::Adaboost, ModelKind::GradientBoosting]
        .into_iter()
        .map(ModelSpec::new)
        .collect()
}

/// Experiment settings, read from TOML. Exactly one of `catalog_path` and
/// `synth` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub catalog_path: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    pub r0_grid: Vec<f64>,
    pub t0_grid: Vec<f64>,
    pub n_lags: usize,
    pub lag_step_days: f64,
    pub rtl: RtlOptions,
    pub label: LabelRule,
    pub sampling: SampleSpec,
    pub normalization: Normalization,
    pub split_fraction: f64,
    pub models: Vec<ModelSpec>,
    pub resampling: Resampling,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Probability cut for hard predictions.
    pub threshold: f64,
    pub index_cell_km: f64,
    /// Adds a cell using every grid feature together.
    pub aggregate_cell: bool,
    pub save_models: bool,
    pub features: FeatureOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            catalog_path: None,
            synth: None,
            r0_grid: vec![10.0, 25.0, 50.0, 100.0],
            t0_grid: vec![30.0, 90.0, 180.0, 365.0],
            n_lags: 20,
            lag_step_days: 1.0,
            rtl: RtlOptions::default(),
            label: LabelRule::default(),
            sampling: SampleSpec::default(),
            normalization: Normalization::default(),
            split_fraction: 0.7,
            models: default_models(),
            resampling: Resampling::None,
            seed: 0,
            output_dir: PathBuf::from("out"),
            threshold: 0.5,
            index_cell_km: 25.0,
            aggregate_cell: false,
            save_models: true,
            features: FeatureOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Sets the experiment seed and, when present, the synthetic catalog seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let Some(s) = self.synth.as_mut() {
            s.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        match (&self.catalog_path, &self.synth) {
            (None, None) => return cfg_err("set either catalog_path or [synth]".into()),
            (Some(_), Some(_)) => return cfg_err("catalog_path and [synth] are mutually exclusive".into()),
            (None, Some(s)) => s.validate()?,
            (Some(_), None) => {}
        }
        if self.r0_grid.is_empty() || self.t0_grid.is_empty() {
            return cfg_err("r0_grid and t0_grid must be non-empty".into());
        }
        for c in self.grid_configs() {
            c.validate()?;
        }
        self.single_config().validate()?;
        let tags: Vec<String> = self.grid_configs().iter().map(RtlConfig::tag).collect();
        if tags.iter().enumerate().any(|(i, t)| tags[..i].contains(t)) {
            return cfg_err("r0_grid and t0_grid must not repeat values".into());
        }
        if self.n_lags == 0 || !(self.lag_step_days > 0.0 && self.lag_step_days.is_finite()) {
            return cfg_err("n_lags must be >= 1 and lag_step_days > 0".into());
        }
        self.label.validate()?;
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return cfg_err(format!("split_fraction {} must lie in (0, 1)", self.split_fraction));
        }
        if self.models.is_empty() {
            return cfg_err("at least one model is required".into());
        }
        for m in &self.models {
            if m.kind == ModelKind::MajorRtl && m.lag >= self.n_lags {
                return cfg_err(format!("major_rtl lag {} must be below n_lags {}", m.lag, self.n_lags));
            }
            match m.kind {
                ModelKind::RandomForest | ModelKind::Adaboost | ModelKind::GradientBoosting => {
                    m.ensemble_params(self.seed).validate()?
                }
                ModelKind::Tree => m.tree_params().validate()?,
                _ => {}
            }
        }
        if self.normalization.mode == NormMode::MovingAverage && self.normalization.window == 0 {
            return cfg_err("moving-average window must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return cfg_err("threshold must lie in [0, 1]".into());
        }
        if !(self.index_cell_km > 0.0 && self.index_cell_km.is_finite()) {
            return cfg_err("index_cell_km must be positive".into());
        }
        Ok(())
    }

    fn rtl_config(&self, r0: f64, t0: f64) -> RtlConfig {
        RtlConfig {
            r0_km: r0,
            t0_days: t0,
            cutoff_factor: self.rtl.cutoff_factor,
            min_mag: self.rtl.min_mag,
            min_r_km: self.rtl.min_r_km,
        }
    }

    /// Grid cells, `r0` major and `t0` minor, in config order.
    pub fn grid_configs(&self) -> Vec<RtlConfig> {
        self.r0_grid
            .iter()
            .flat_map(|&r0| self.t0_grid.iter().map(move |&t0| (r0, t0)))
            .map(|(r0, t0)| self.rtl_config(r0, t0))
            .collect()
    }

    pub fn single_config(&self) -> RtlConfig {
        self.rtl_config(self.features.r0_km, self.features.t0_days)
    }

    /// Configs written by the `features` command.
    pub fn feature_configs(&self) -> Vec<RtlConfig> {
        match self.features.mode {
            FeatureMode::Aggregate => self.grid_configs(),
            FeatureMode::Single => vec![self.single_config()],
        }
    }
}

/// Reads `catalog_path` or generates the `[synth]` catalog.
pub fn load_catalog(cfg: &ExperimentConfig) -> Result<Catalog> {
    match (&cfg.catalog_path, &cfg.synth) {
        (Some(path), _) => {
            let file =
                File::open(path).map_err(|e| Error::Config(format!("cannot open catalog {}: {e}", path.display())))?;
            parse_catalog(std::io::BufReader::new(file), &path.display().to_string())
        }
        (None, Some(spec)) => generate_catalog(spec),
        (None, None) => Err(Error::Config("set either catalog_path or [synth]".into())),
    }
}

/// Builds lagged features for `configs`. Samples come from the whole
/// catalog; only events that can enter a feature or a label (the smaller of
/// the two magnitude floors) are indexed.
pub fn build_features(cfg: &ExperimentConfig, catalog: &Catalog, configs: &[RtlConfig]) -> Result<BuiltDataset> {
    let floor = configs.iter().map(|c| c.min_mag).fold(cfg.label.m_c, f64::min);
    let index = SpatialIndex::build(&catalog.filter_min_mag(floor), cfg.index_cell_km)?;
    let built = build_dataset(catalog, &index, configs, cfg.n_lags, cfg.lag_step_days, &cfg.label, &cfg.sampling)?;
    log::info!(
        "{} samples, {} features; dropped {} (feature window before catalog start), {} (label window past catalog end)",
        built.dataset.n_samples(),
        built.dataset.n_features(),
        built.dropped_feature_window,
        built.dropped_label_window
    );
    Ok(built)
}

fn create_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot create {}: {e}", dir.display()))))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot write {}: {e}", path.display()))))?;
    Ok(BufWriter::new(f))
}

/// Writes the `[synth]` catalog to `<output_dir>/catalog.csv`.
pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<(PathBuf, usize)> {
    let spec = cfg.synth.as_ref().ok_or_else(|| Error::Config("the synth command needs a [synth] section".into()))?;
    let catalog = generate_catalog(spec)?;
    create_output_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join(CATALOG_FILE);
    let mut out = create_file(&path)?;
    catalog.write_csv(&mut out)?;
    out.flush()?;
    Ok((path, catalog.len()))
}

/// Writes `<output_dir>/features.csv`.
pub fn cmd_features(cfg: &ExperimentConfig) -> Result<(PathBuf, BuiltDataset)> {
    let catalog = load_catalog(cfg)?;
    let built = build_features(cfg, &catalog, &cfg.feature_configs())?;
    create_output_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join(FEATURES_FILE);
    let mut out = create_file(&path)?;
    built.dataset.write_csv(&mut out)?;
    out.flush()?;
    Ok((path, built))
}

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq)]
pub enum ReportRow {
    Scored(EvalReport),
    /// A model (or, with model [`ERROR_MODEL`], a whole cell) that could not
    /// be evaluated. Metric columns are left empty.
    Failed {
        config: String,
        model: String,
        message: String,
    },
}

impl ReportRow {
    pub fn config(&self) -> &str {
        match self {
            ReportRow::Scored(r) => &r.config_tag,
            ReportRow::Failed { config, .. } => config,
        }
    }

    pub fn model(&self) -> &str {
        match self {
            ReportRow::Scored(r) => &r.model_kind,
            ReportRow::Failed { model, .. } => model,
        }
    }

    pub fn write_csv_row<W: Write>(&self, mut out: W) -> Result<()> {
        match self {
            ReportRow::Scored(r) => r.write_csv_row(out),
            ReportRow::Failed { config, model, .. } => {
                writeln!(out, "{config},{model},,,,,")?;
                Ok(())
            }
        }
    }
}

/// Key/value facts about a run, for checking that normalisation and
/// resampling only ever saw training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub scope: String,
    pub key: String,
    pub value: String,
}

fn audit(scope: &str, key: &str, value: impl ToString) -> AuditEntry {
    AuditEntry { scope: scope.into(), key: key.into(), value: value.to_string() }
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub config: String,
    pub model: TrainedModel,
}

/// Lag-0 values of one cell after normalisation with its training statistics.
#[derive(Debug, Clone)]
pub struct RtlSample {
    pub config: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainEvalOutcome {
    pub rows: Vec<ReportRow>,
    pub audit: Vec<AuditEntry>,
    pub models: Vec<FittedModel>,
    pub rtl_samples: Vec<RtlSample>,
    pub magnitudes: Vec<f64>,
}

impl TrainEvalOutcome {
    pub fn scored(&self) -> impl Iterator<Item = &EvalReport> {
        self.rows.iter().filter_map(|r| match r {
            ReportRow::Scored(e) => Some(e),
            ReportRow::Failed { .. } => None,
        })
    }

    pub fn find(&self, config: &str, model: ModelKind) -> Option<&EvalReport> {
        self.scored().find(|r| r.config_tag == config && r.model_kind == model.name())
    }

    pub fn write_report<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{REPORT_HEADER}")?;
        for row in &self.rows {
            row.write_csv_row(&mut out)?;
        }
        Ok(())
    }

    pub fn write_audit<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scope", "key", "value"])?;
        for a in &self.audit {
            w.write_record([&a.scope, &a.key, &a.value])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Cell {
    tag: String,
    names: Vec<String>,
}

struct CellResult {
    rows: Vec<ReportRow>,
    audit: Vec<AuditEntry>,
    models: Vec<FittedModel>,
    rtl: Option<RtlSample>,
}

fn class_counts_audit(scope: &str, prefix: &str, ds: &Dataset, out: &mut Vec<AuditEntry>) {
    let (neg, pos) = ds.class_counts();
    out.push(audit(scope, &format!("{prefix}_negatives"), neg));
    out.push(audit(scope, &format!("{prefix}_positives"), pos));
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell, train: &Dataset, train_orig: &Dataset, test: &Dataset) -> CellResult {
    let mut res = CellResult { rows: Vec::new(), audit: Vec::new(), models: Vec::new(), rtl: None };
    let prepared = (|| -> Result<_> {
        let tr = train.select_features(&cell.names)?;
        let te = test.select_features(&cell.names)?;
        let stats = fit_normalizer(&tr.features, cfg.normalization.mode, cfg.normalization.window)?;
        let x_train = apply_normalizer(&tr.features, &stats)?;
        let x_test = apply_normalizer(&te.features, &stats)?;
        let x_orig = apply_normalizer(&train_orig.select_features(&cell.names)?.features, &stats)?;
        Ok((tr, te, stats, x_train, x_test, x_orig))
    })();
    let (tr, te, stats, x_train, x_test, x_orig) = match prepared {
        Ok(p) => p,
        Err(e) => {
            res.audit.push(audit(&cell.tag, "error", &e));
            res.rows.push(ReportRow::Failed {
                config: cell.tag.clone(),
                model: ERROR_MODEL.into(),
                message: e.to_string(),
            });
            return res;
        }
    };
    res.audit.push(audit(&cell.tag, "norm_fit_rows", tr.n_samples()));
    res.audit.push(audit(&cell.tag, "norm_constant_columns", stats.constant.iter().filter(|&&c| c).count()));
    let mut lag0 = x_orig.column(0).to_vec();
    lag0.extend(x_test.column(0).iter());
    res.rtl = Some(RtlSample { config: cell.tag.clone(), values: lag0 });

    for spec in &cfg.models {
        let outcome = spec.fit(&x_train, &tr.labels, cfg.seed).and_then(|model| {
            let scores = model.predict_proba(&x_test)?;
            let report = EvalReport::evaluate(&scores, &te.labels, cfg.threshold, spec.kind.name(), cell.tag.clone())?;
            Ok((model, report))
        });
        match outcome {
            Ok((model, report)) => {
                res.rows.push(ReportRow::Scored(report));
                res.models.push(FittedModel { config: cell.tag.clone(), model });
            }
            Err(e) => {
                res.audit.push(audit(&cell.tag, &format!("{}_error", spec.kind.name()), &e));
                res.rows.push(ReportRow::Failed {
                    config: cell.tag.clone(),
                    model: spec.kind.name().into(),
                    message: e.to_string(),
                });
            }
        }
    }
    res
}

/// Runs the whole grid in memory. Features are built once for all cells so
/// every cell sees the same samples and the same split.
pub fn run_train_eval(cfg: &ExperimentConfig) -> Result<TrainEvalOutcome> {
    cfg.validate()?;
    let catalog = load_catalog(cfg)?;
    run_train_eval_on(cfg, &catalog)
}

pub fn run_train_eval_on(cfg: &ExperimentConfig, catalog: &Catalog) -> Result<TrainEvalOutcome> {
    let built = build_features(cfg, catalog, &cfg.grid_configs())?;
    let magnitudes: Vec<f64> = catalog.events().iter().map(|e| e.mag).collect();
    let mut outcome = evaluate_dataset(cfg, &built)?;
    outcome.audit.insert(0, audit("run", "catalog_events", catalog.len()));
    outcome.magnitudes = magnitudes;
    Ok(outcome)
}

/// Split, resampling, normalisation and model fitting on features already
/// built for the whole grid (columns named as by [`RtlConfig::feature_name`]).
pub fn evaluate_dataset(cfg: &ExperimentConfig, built: &BuiltDataset) -> Result<TrainEvalOutcome> {
    let configs = cfg.grid_configs();
    let mut audit_log = vec![
        audit("run", "samples", built.dataset.n_samples()),
        audit("run", "dropped_feature_window", built.dropped_feature_window),
        audit("run", "dropped_label_window", built.dropped_label_window),
    ];
    let (train, test) = chronological_split(&built.dataset, cfg.split_fraction)?;
    audit_log.push(audit("run", "train_last_time", train.sample_times.last().copied().unwrap_or(f64::NAN)));
    audit_log.push(audit("run", "test_first_time", test.sample_times.first().copied().unwrap_or(f64::NAN)));
    class_counts_audit("run", "train", &train, &mut audit_log);
    class_counts_audit("run", "test", &test, &mut audit_log);

    let mut cells: Vec<Cell> = configs
        .iter()
        .map(|c| Cell { tag: c.tag(), names: (0..cfg.n_lags).map(|k| c.feature_name(k)).collect() })
        .collect();
    if cfg.aggregate_cell {
        cells.push(Cell { tag: AGGREGATE_TAG.into(), names: built.dataset.feature_names.clone() });
    }

    let one_class = |ds: &Dataset| {
        let (neg, pos) = ds.class_counts();
        neg == 0 || pos == 0
    };
    let mut outcome = TrainEvalOutcome {
        rows: Vec::new(),
        audit: audit_log,
        models: Vec::new(),
        rtl_samples: Vec::new(),
        magnitudes: Vec::new(),
    };
    if one_class(&train) || one_class(&test) {
        let message = "train or test partition holds a single class".to_string();
        outcome.audit.push(audit("run", "error", &message));
        for cell in &cells {
            outcome.rows.push(ReportRow::Failed {
                config: cell.tag.clone(),
                model: ERROR_MODEL.into(),
                message: message.clone(),
            });
        }
        return Ok(outcome);
    }

    let train_fit = match cfg.resampling {
        Resampling::None => train.clone(),
        Resampling::Over => oversample(&train, cfg.seed)?,
        Resampling::Under => undersample(&train, cfg.seed)?,
    };
    outcome.audit.push(audit("run", "resampling", cfg.resampling.name()));
    class_counts_audit("run", "train_resampled", &train_fit, &mut outcome.audit);

    let results: Vec<CellResult> = cells.par_iter().map(|c| run_cell(cfg, c, &train_fit, &train, &test)).collect();
    for r in results {
        outcome.rows.extend(r.rows);
        outcome.audit.extend(r.audit);
        outcome.models.extend(r.models);
        outcome.rtl_samples.extend(r.rtl);
    }
    Ok(outcome)
}

/// `(bin_lo, bin_hi, count)` with bins of width 0.1 magnitude units.
pub fn magnitude_histogram(mags: &[f64]) -> Vec<(f64, f64, usize)> {
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for &m in mags {
        // nudge so values printed as x.y land in bin x.y
        *bins.entry((m * 10.0 + 1e-9).floor() as i64).or_default() += 1;
    }
    let (Some(&lo), Some(&hi)) = (bins.keys().next(), bins.keys().next_back()) else {
        return Vec::new();
    };
    (lo..=hi).map(|k| (k as f64 / 10.0, (k + 1) as f64 / 10.0, bins.get(&k).copied().unwrap_or(0))).collect()
}

/// `n_bins` equal-width bins spanning the data; a single bin for constant data.
pub fn value_histogram(values: &[f64], n_bins: usize) -> Vec<(f64, f64, usize)> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || n_bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return vec![(lo, hi, finite.len())];
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for v in finite {
        let k = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + k as f64 * width, if k + 1 == n_bins { hi } else { lo + (k + 1) as f64 * width }, c))
        .collect()
}

/// Runs the grid and writes the report, audit log, histograms and models
/// under `output_dir`.
pub fn cmd_train_eval(cfg: &ExperimentConfig) -> Result<TrainEvalOutcome> {
    let outcome = run_train_eval(cfg)?;
    let dir = &cfg.output_dir;
    create_output_dir(dir)?;

    let mut f = create_file(&dir.join(REPORT_FILE))?;
    outcome.write_report(&mut f)?;
    f.flush()?;

    let mut f = create_file(&dir.join(AUDIT_FILE))?;
    outcome.write_audit(&mut f)?;
    f.flush()?;

    let mut f = create_file(&dir.join(MAGNITUDE_HISTOGRAM_FILE))?;
    writeln!(f, "mag_lo,mag_hi,count")?;
    for (lo, hi, c) in magnitude_histogram(&outcome.magnitudes) {
        writeln!(f, "{lo},{hi},{c}")?;
    }
    f.flush()?;

    let mut f = create_file(&dir.join(RTL_HISTOGRAM_FILE))?;
    writeln!(f, "config,bin_lo,bin_hi,count")?;
    for s in &outcome.rtl_samples {
        for (lo, hi, c) in value_histogram(&s.values, RTL_HISTOGRAM_BINS) {
            writeln!(f, "{},{lo},{hi},{c}", s.config)?;
        }
    }
    f.flush()?;

    if cfg.save_models {
        let models_dir = dir.join(MODELS_DIR);
        create_output_dir(&models_dir)?;
        for m in &outcome.models {
            let path = models_dir.join(format!("{}__{}.json", m.config, m.model.kind().name()));
            let mut f = create_file(&path)?;
            m.model.save(&mut f)?;
            f.flush()?;
        }
    }
    Ok(outcome)
}

/// A `report.csv` row as read back; `None` metrics mark a failed model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub config: String,
    pub model: String,
    /// precision, recall, F1, ROC AUC, PR AUC
    pub metrics: Option<[f64; 5]>,
}

pub fn parse_report<R: Read>(reader: R) -> Result<Vec<ParsedRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.join(",") != REPORT_HEADER {
        return Err(Error::Parse { line: 1, msg: format!("expected header `{REPORT_HEADER}`") });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let config = rec.get(0).unwrap_or("").trim().to_string();
        let model = rec.get(1).unwrap_or("").trim().to_string();
        let cells: Vec<&str> = (2..7).map(|i| rec.get(i).unwrap_or("").trim()).collect();
        let metrics = if cells.iter().all(|c| c.is_empty()) {
            None
        } else {
            let mut m = [0.0; 5];
            for (slot, c) in m.iter_mut().zip(&cells) {
                *slot = c.parse().map_err(|_| Error::Parse { line, msg: format!("bad metric `{c}`") })?;
            }
            Some(m)
        };
        rows.push(ParsedRow { config, model, metrics });
    }
    Ok(rows)
}

/// `r50_t180` to `(50, 180)`.
pub fn parse_tag(tag: &str) -> Option<(f64, f64)> {
    let rest = tag.strip_prefix('r')?;
    let (r0, t0) = rest.split_once("_t")?;
    Some((r0.parse().ok()?, t0.parse().ok()?))
}

struct Block {
    label: String,
    // model -> (t0 label, t0 value, metrics)
    best: Vec<(String, String, f64, [f64; 5])>,
}

/// Text table with one block per `r0`. For every model the row shown is the
/// `t0` with the highest ROC AUC (ties to the smaller `t0`). Non-grid cells
/// get their own blocks.
pub fn render_report(rows: &[ParsedRow]) -> Result<String> {
    let mut blocks: Vec<Block> = Vec::new();
    for row in rows {
        let Some(metrics) = row.metrics else { continue };
        let (label, t0_label, t0) = match parse_tag(&row.config) {
            Some((r0, t0)) => (format!("{r0}"), format!("{t0}"), t0),
            None => (row.config.clone(), "-".to_string(), f64::NAN),
        };
        let idx = match blocks.iter().position(|b| b.label == label) {
            Some(i) => i,
            None => {
                blocks.push(Block { label, best: Vec::new() });
                blocks.len() - 1
            }
        };
        let model = ModelKind::from_name(&row.model).map_or(row.model.clone(), |k| k.label().to_string());
        let block = &mut blocks[idx];
        match block.best.iter_mut().find(|b| b.0 == model) {
            Some(b) => {
                let better = metrics[3] > b.3[3] || (metrics[3] == b.3[3] && t0 < b.2);
                if better {
                    *b = (model, t0_label, t0, metrics);
                }
            }
            None => block.best.push((model, t0_label, t0, metrics)),
        }
    }
    if blocks.is_empty() {
        return Err(Error::Data("report has no scored rows".into()));
    }
    let mut out = String::new();
    let header = format!(
        "{:<8} {:<9} {:<22} {:>9} {:>7} {:>7} {:>8} {:>7}\n",
        "r0 (km)", "t0 (d)", "Model", "Precision", "Recall", "F1", "ROC AUC", "PR AUC"
    );
    out.push_str(&header);
    out.push_str(&"-".repeat(header.len() - 1));
    out.push('\n');
    for (i, b) in blocks.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (model, t0, _, m) in &b.best {
            out.push_str(&format!(
                "{:<8} {:<9} {:<22} {:>9.3} {:>7.3} {:>7.3} {:>8.3} {:>7.3}\n",
                b.label, t0, model, m[0], m[1], m[2], m[3], m[4]
            ));
        }
    }
    Ok(out)
}

pub fn cmd_report(report_csv: &Path) -> Result<String> {
    let file = File::open(report_csv)
        .map_err(|e| Error::Config(format!("cannot open report {}: {e}", report_csv.display())))?;
    render_report(&parse_report(std::io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(config: &str, model: &str, roc: f64) -> ParsedRow {
        ParsedRow { config: config.into(), model: model.into(), metrics: Some([0.5, 0.5, 0.5, roc, 0.5]) }
    }

    #[test]
    fn default_grid_matches_expectations() {
        let cfg = ExperimentConfig { synth: Some(SynthSpec::default()), ..ExperimentConfig::default() };
        cfg.validate().unwrap();
        assert_eq!(cfg.grid_configs().len(), 16);
        assert_eq!(cfg.grid_configs()[0].tag(), "r10_t30");
        assert_eq!(cfg.grid_configs()[15].tag(), "r100_t365");
    }

    #[test]
    fn config_requires_exactly_one_source() {
        assert!(ExperimentConfig::default().validate().is_err());
        let both = ExperimentConfig {
            synth: Some(SynthSpec::default()),
            catalog_path: Some("x.csv".into()),
            ..ExperimentConfig::default()
        };
        assert!(both.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            seed = 7
            r0_grid = [50.0]
            t0_grid = [180.0]
            resampling = "under"

            [synth]
            duration_days = 100.0

            [[models]]
            kind = "gradient_boosting"
            n_trees = 10

            [[models]]
            kind = "major_rtl"
            lag = 2
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.resampling, Resampling::Under);
        assert_eq!(cfg.models.len(), 2);
        let p = cfg.models[0].ensemble_params(cfg.seed);
        assert_eq!((p.n_trees, p.tree.max_depth, p.seed), (10, 3, 7));
        assert!(ExperimentConfig::from_toml_str("bogus = 1\n[synth]\n").is_err());
    }

    #[test]
    fn balanced_weight_is_class_ratio() {
        assert_eq!(balanced_class_weight(&[0, 0, 0, 1]), 3.0);
        assert_eq!(balanced_class_weight(&[0, 0]), 1.0);
        let spec = ModelSpec { balanced: true, ..ModelSpec::new(ModelKind::GradientBoosting) };
        assert_eq!(spec.fit_params(&[0, 1, 0, 0, 0], 0).class_weight, 4.0);
        let fixed = ModelSpec { class_weight: Some(2.0), ..spec };
        assert_eq!(fixed.fit_params(&[0, 1, 0, 0, 0], 0).class_weight, 2.0);
    }

    #[test]
    fn tags_parse() {
        assert_eq!(parse_tag("r50_t180"), Some((50.0, 180.0)));
        assert_eq!(parse_tag("r12.5_t30"), Some((12.5, 30.0)));
        assert_eq!(parse_tag("all"), None);
    }

    #[test]
    fn report_keeps_best_t0_per_model() {
        let rows = vec![
            row("r50_t90", "gradient_boosting", 0.7),
            row("r50_t180", "gradient_boosting", 0.8),
            row("r100_t90", "gradient_boosting", 0.6),
            row("r100_t180", "gradient_boosting", 0.6),
        ];
        let text = render_report(&rows).unwrap();
        let body: Vec<&str> = text.lines().skip(2).filter(|l| !l.is_empty()).collect();
        assert_eq!(body.len(), 2);
        assert!(body[0].starts_with("50 ") && body[0].contains("180") && body[0].contains("0.800"));
        assert!(body[1].starts_with("100 ") && body[1].contains(" 90 "));
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(render_report(&[]).is_err());
        let failed = ParsedRow { config: "r50_t180".into(), model: "error".into(), metrics: None };
        assert!(render_report(&[failed]).is_err());
    }

    #[test]
    fn parse_report_reads_error_rows() {
        let text = format!("{REPORT_HEADER}\nr50_t180,logreg,0.5,1,0.6,0.9,0.8\nr50_t180,error,,,,,\n");
        let rows = parse_report(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].metrics.unwrap()[3], 0.9);
        assert!(rows[1].metrics.is_none());
        assert!(parse_report("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn histograms() {
        let h = magnitude_histogram(&[3.0, 3.05, 3.1, 3.35]);
        assert_eq!(h.len(), 4);
        assert_eq!(h[0].2, 2);
        assert_eq!(h[1].2, 1);
        assert_eq!(h[2].2, 0);
        let v = value_histogram(&[0.0, 1.0, 2.0, 10.0], 5);
        assert_eq!(v.iter().map(|b| b.2).sum::<usize>(), 4);
        assert_eq!(v[4].1, 10.0);
        assert_eq!(value_histogram(&[2.0, 2.0], 5), vec![(2.0, 2.0, 2)]);
    }
}
