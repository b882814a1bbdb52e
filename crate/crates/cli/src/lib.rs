//! Harness for the pitch-informed target sound extraction pipeline:
//! configuration, dataset synthesis, the two training loops, and
//! evaluation. The `tsepi` binary is a thin argument layer over this crate.

pub mod config;
pub mod data;
pub mod evaluate;
pub mod train;

pub use config::{Preset, RunConfig, SEED_ENV_VAR};
pub use data::{synth_dataset, Dataset};
pub use evaluate::{evaluate, extract, FullReport};
pub use train::{train_pitch, train_tse, PitchSource, PitchTrainArgs, TseTrainArgs};
