//! Age-conditioned treatment effect estimation with S-, T- and X-learners.
//!
//! The crate covers ingestion of player-game panels, the truncated age
//! basis, OLS and honest random forest base learners, meta-learner curves,
//! percentile bootstrap bands and a simulation harness.

pub mod basis;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod learners;
pub mod linalg;
pub mod meta;
pub mod plot;
pub mod rng;
pub mod simlab;

pub use basis::{truncated_basis, SplineSpec};
pub use dataset::{CovariateSchema, Dataset, GameRecord, PreprocessConfig};
pub use error::{ActeError, Result};
pub use inference::{bootstrap_curve, bootstrap_curves, curve_mse, BootstrapConfig, ResampleUnit};
pub use learners::{RegressorSpec, RfHyperparams};
pub use meta::{fit_meta, CurveEstimate, CurveKind, FittedMeta, MetaLearner, MetaSpec};
pub use simlab::{run_study, ScenarioSpec, SimResult, StudyConfig};
