//! Region-Time-Length (RTL) seismic features and middle-term earthquake
//! prediction.
//!
//! The crate is organised bottom-up:
//!
//! * [`catalog`] parses earthquake catalogs and answers space-time cylinder
//!   queries through a grid index.
//! * [`rtl`] evaluates the R, T and L sums and their product around a point.
//! * [`dataset`] turns a catalog into lagged feature rows with binary labels,
//!   and handles normalisation, chronological splitting and resampling.
//! * [`models`] holds the classifiers: a single-threshold rule, logistic
//!   regression, CART, random forest, AdaBoost and gradient boosting.
//! * [`metrics`] scores predictions (precision, recall, F1, ROC AUC, PR AUC).
//! * [`synth`] generates Gutenberg-Richter / Omori-Utsu catalogs for testing.
//! * [`experiment`] wires everything into the grid experiment used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod rtl;
pub mod synth;

pub use catalog::{parse_catalog, surface_distance_km, Catalog, CatalogEvent, GeoPoint, SpatialIndex};
pub use dataset::{Dataset, LabelRule};
pub use error::{Error, Result};
pub use metrics::{Confusion, EvalReport};
pub use models::TrainedModel;
pub use rtl::{RtlConfig, RtlValue};
