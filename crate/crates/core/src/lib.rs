//! Pitch-informed target sound extraction, desk scale and end to end:
//! reverberant mixture synthesis with ground truth, a class-conditional
//! pitch extractor (FiLM-modulated TCN), and a target-sound-extraction
//! network with a learnable Gammatone filterbank encoder whose input is
//! augmented with the extracted pitch sequence.
//!
//! Core math is generic over the scalar type ([`Scalar`]): `f32` for
//! training throughput, `f64` for oracles and gradient checks. Concrete
//! aliases for the common instantiations live at the crate root.

pub mod audio;
pub mod error;
pub mod forge;
pub mod gtfb;
pub mod metrics;
pub mod nn;
pub mod pitch;
pub mod pitchnet;
pub mod rir;
pub mod scalar;
pub mod tse;
pub mod yin;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

/// Default training scalar.
pub type TrainScalar = f32;
/// Scalar for oracles and finite-difference gradient checks.
pub type CheckScalar = f64;

pub type AudioClip32 = audio::AudioClip<f32>;
pub type AudioClip64 = audio::AudioClip<f64>;
pub type Spectrogram32 = audio::Spectrogram<f32>;
pub type Spectrogram64 = audio::Spectrogram<f64>;
pub type Rir64 = rir::Rir<f64>;
pub type PitchNet32 = pitchnet::PitchNet<f32>;
pub type TseNet32 = tse::TseNet<f32>;
