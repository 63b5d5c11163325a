//! Drunk-driving detection from off-the-shelf smartwatch signals.
//!
//! The crate implements the full modeling pipeline: ingestion of
//! inter-beat-interval (IBI), heart-rate, and accelerometer streams;
//! cleaning and participant-level normalization; a pluggable arousal
//! estimator that turns irregular IBI/HR data into a 1 Hz arousal
//! probability series; sliding-window segmentation with coverage gating
//! and grid resampling; a per-window time-series feature catalog feeding
//! a LASSO-regularized logistic regression; a two-tower 1D CNN trained
//! directly on the windowed grids; and a leave-one-subject-out (LOSO)
//! evaluation harness with ranking metrics, baselines, and confidence
//! intervals.
//!
//! Real study data is not required anywhere: [`synth`] generates
//! deterministic cohorts with configurable planted alcohol effects, which
//! back the end-to-end tests and the CLI examples.

pub mod data;
pub mod eval;
pub mod features;
pub mod linear;
pub mod manifest;
pub mod neural;
pub(crate) mod par;
pub mod pipeline;
pub mod preprocess;
pub(crate) mod stats;
pub mod synth;
pub mod window;

pub use data::{Cohort, Group, Modality, SampleSeries, Task, TaskLabel};
pub use window::{Pipeline, WindowSegment, WindowSpec};
