//! Fine-grained reward metrics for report generation.
//!
//! A scoring system defines per-criterion sub-scores and a total. Synthetic
//! corruptions of reference reports give labeled candidates, which are paired
//! into accepted/rejected examples with margins. A multi-output reward model
//! is trained on those pairs with a margin-enforcing ranking loss and judged
//! by rank correlation against the planted quality.
//!
//! The numeric core ([`model`], [`loss`], [`train`]) is generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix it to `f64`.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod loss;
pub mod model;
pub mod pairing;
pub mod pipeline;
pub mod scalar;
pub mod scoring;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type RewardModel = model::RewardModel<f64>;
pub type RewardModel32 = model::RewardModel<f32>;
pub type Trainer = train::Trainer<f64>;
pub type TrainPair = train::TrainPair<f64>;
pub type LossBreakdown = loss::LossBreakdown<f64>;
