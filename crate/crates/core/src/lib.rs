//! Multicalibration: predictors that are calibrated simultaneously on every
//! set of a rich collection, learned from statistical or guess-and-check
//! access to the true outcome probabilities.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auditor;
pub mod bestinclass;
pub mod bridge;
pub mod error;
pub mod io;
pub mod learners;
pub mod oracles;
pub mod population;
pub mod predictor;

pub use auditor::{check_al_multicalibration, check_calibration, AuditReport};
pub use error::{Error, Result};
pub use learners::{learn_multi_ae, learn_multicalibrated, LearnTrace, MulticalibrationParams};
pub use oracles::{GuessCheck, GuessCheckResponse, OracleConfig, StatisticalQuery};
pub use population::{BoundCollection, GroundTruth, Population, SetPredicate, SubsetCollection};
pub use predictor::{DensePredictor, DiscretizationGrid, UpdateProgram};
