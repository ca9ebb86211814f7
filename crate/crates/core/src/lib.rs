//! Two-layer networks trained with local gradient descent-ascent rules
//! (BMVR), the matching backprop baseline, and an offline reduced-rank
//! regression oracle used to check where both end up.
//!
//! The crate is organised bottom-up:
//!
//! * [`types`] holds the shared model state, configuration and checkpoint format.
//! * [`rules`] implements the per-sample update rules.
//! * [`oracle`] computes correlation statistics and the closed-form rank-k optimum.
//! * [`diagnostics`] evaluates objectives, the gain-constrained upper bound and
//!   the teaching-signal comparison.
//! * [`data`] builds synthetic regression data and reads MNIST/CIFAR files.
//! * [`harness`] runs seeded training loops and writes metric logs.
//! * [`plot`] renders metric logs as SVG; [`cli`] wires everything to the `bmvr` binary.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod oracle;
pub mod plot;
pub mod presets;
pub mod rules;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    new_model, schedule_value, InitSpec, Mat, MetricRecord, ModelState, Nonlinearity, Sample,
    ScheduleSpec, TrainConfig, Variant, Vector,
};
