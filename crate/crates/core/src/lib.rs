//! Test-time uncertainty estimation and budgeted refinement for camera pose
//! regressors.
//!
//! The pipeline scores each predicted pose by retrieving training-set
//! feature embeddings around the predicted position and taking the maximum
//! cosine similarity against the query embedding; predictions whose score
//! clears a threshold are treated as reliable and given a small refinement
//! budget, the rest a large one (or are filtered out entirely). The crate
//! provides:
//!
//! - [`geometry`]: poses, quaternion algebra, error metrics;
//! - [`store`]: the pose-indexed embedding database with radius retrieval
//!   and its on-disk container;
//! - [`replay`]: the query export format (predictions + embeddings, with or
//!   without ground truth);
//! - [`uncertainty`]: cosine scoring, gating, batch scheduling;
//! - [`refine`]: the budgeted refinement loop and a synthetic-field refiner;
//! - [`synth`]: deterministic synthetic scenes with a mock pose regressor;
//! - [`eval`]: median errors, accuracy levels, threshold sweeps,
//!   convergence curves and overhead accounting.

pub mod error;
pub mod eval;
mod fileio;
pub mod geometry;
pub mod refine;
pub mod replay;
pub mod store;
pub mod synth;
pub mod uncertainty;

pub use error::{CoreError, Result};
pub use eval::{AccuracyLevels, OverheadReport, SweepPoint, DEFAULT_ACCURACY_THRESHOLDS};
pub use fileio::write_atomic;
pub use geometry::{Pose, PoseError, Quat};
pub use refine::{EarlyStop, Refiner, RefineTrace, RefinerParams, SyntheticFieldRefiner};
pub use replay::{QueryLabel, QueryRecord};
pub use store::{DBEntry, FeatureEmbedding, IndexConfig, PoseFeatureDB};
pub use synth::{SceneSpec, SynthScene};
pub use uncertainty::{GatingMode, GatingPolicy, ScoredQuery, SimilarityScore};
