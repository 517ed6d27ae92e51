//! Calibration error estimation for object detectors.
//!
//! The crate turns post-NMS detections and ground-truth annotations into
//! `(score, similarity, correctness)` samples and measures how far the
//! detector's confidence is from the conditional expectation of correctness.
//! The main estimator is a leave-one-out Beta-kernel density estimate
//! ([`kde::estimate_ce`]) with an analytic gradient so it can be used as a
//! training loss. Binned baselines (D-ECE, LaECE), the train-time auxiliary terms and
//! temperature scaling live in [`binned`]; [`synth`] provides a benchmark whose
//! true calibration error is known in closed form.

pub mod binned;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod io;
pub mod kde;
pub mod links;
pub mod matching;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{BoundingBox, Similarity};
pub use kde::{CalibrationSample, Execution, KdeConfig};
pub use links::LinkSpec;
pub use matching::{
    CategoryId, Detection, GroundTruthBox, ImageId, MatchConfig, MatchedSample, SizeClass,
};
