//! Counterfactual learning-to-rank from logged contextual-bandit feedback.
//!
//! The crate covers the whole offline loop for a show/hide ranking policy:
//!
//! * [`log_data`]: bandit logs, supervised label files, query splits.
//! * [`aggregation`]: impression/feedback counts to graded labels.
//! * [`policy`]: softmax policy over linear or one-hidden-layer scorers.
//! * [`estimators`]: SNIPS, IPS, empirical-average risk, the Lagrangian
//!   surrogate and its gradient.
//! * [`training`]: Adam, counterfactual training, lambda search, and the
//!   cross-entropy baseline.
//! * [`simulator`]: synthetic worlds with exactly computable risk.
//! * [`evaluation`]: trec_eval-compatible ranking metrics and run files.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix it to `f64`, which is what the CLI uses.

pub mod aggregation;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod log_data;
pub mod policy;
pub mod scalar;
pub mod simulator;
pub mod training;

pub use error::{Error, Result};
pub use log_data::{Action, BanditLog, BanditRecord, FeatureVector, QuerySplit, SupervisedRecord};
pub use policy::{ActionDistribution, PolicyParams, ScorerKind};
pub use scalar::Scalar;

pub type FeatureVector64 = FeatureVector<f64>;
pub type BanditRecord64 = BanditRecord<f64>;
pub type BanditLog64 = BanditLog<f64>;
pub type SupervisedRecord64 = SupervisedRecord<f64>;
pub type PolicyParams64 = PolicyParams<f64>;
pub type EstimatorReport64 = estimators::EstimatorReport<f64>;
pub type SyntheticWorld64 = simulator::SyntheticWorld<f64>;
pub type TrainHistory64 = training::TrainHistory<f64>;

pub type FeatureVector32 = FeatureVector<f32>;
pub type BanditLog32 = BanditLog<f32>;
pub type PolicyParams32 = PolicyParams<f32>;
