//! Dual label distribution learning for rater-based score prediction.
//!
//! Each sample's integer ratings become two training targets: a rating
//! distribution over 1..=5 and an attractiveness distribution over fine score
//! intervals. A small feedforward network predicts the attractiveness
//! distribution, from which a rating distribution and a scalar score are
//! derived, and all three are supervised jointly.
//!
//! - [`dist`]: CDFs, grid, and distribution construction.
//! - [`losses`]: loss terms and analytic gradients.
//! - [`net`]: the predictor network and its model file format.
//! - [`optim`]: AdamW and the step schedule.
//! - [`train`]: training loop, logs, cross-validation.
//! - [`data`]: rating/feature files, label bundles, synthetic data, k-fold splits.
//! - [`metrics`]: PC/MAE/RMSE and report tables.
//! - [`gradcheck`]: finite-difference gradient verification.

pub mod data;
pub mod dist;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod train;

pub use data::{Dataset, LabelBundle, RatingRecordSet, StdMode, SynthConfig, SyntheticData};
pub use dist::{AttractivenessDistribution, DistributionGrid, Family, LaplaceParams, RatingDistribution};
pub use error::{Error, Result};
pub use losses::{LossBreakdown, LossWeights, ScoreReduction};
pub use metrics::EvalReport;
pub use net::{NetConfig, PredictorNet};
pub use optim::AdamWConfig;
pub use train::{Modules, TrainConfig, TrainLog};
