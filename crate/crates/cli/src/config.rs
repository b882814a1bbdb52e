//! Run configuration: TOML-serializable, preset-seeded, with the resolved
//! form written next to every run's outputs.

use serde::{Deserialize, Serialize};
use std::path::Path;
use tsepi_core::pitchnet::PitchNetConfig;
use tsepi_core::tse::{EncoderType, TseConfig};
use tsepi_core::{CoreError, Result};

pub const SEED_ENV_VAR: &str = "TSEPI_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Small models and counts: everything runs on a CPU in minutes.
    Desk,
    /// The published hyperparameters; not expected to run in CI.
    Paper,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epoch index at which the learning rate halves (once).
    pub lr_halve_epoch: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    pub w_snr: f64,
    pub w_si_snr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub pitch_model: PitchNetConfig,
    pub tse_model: TseConfig,
    pub pitch_optim: OptimConfig,
    pub tse_optim: OptimConfig,
    pub loss: LossConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => RunConfig {
                seed: 17,
                pitch_model: PitchNetConfig {
                    depth: 4,
                    channels: 32,
                    embed_dim: 16,
                    ..Default::default()
                },
                tse_model: TseConfig {
                    encoder_type: EncoderType::GtfbLearnable,
                    kernel_length: 32,
                    n_filters: 64,
                    dcc_layers: 6,
                    dcc_channels: 48,
                    label_embed_dim: 64,
                    pitch_proj_dim: 16,
                    ..Default::default()
                },
                pitch_optim: OptimConfig {
                    lr: 1e-3,
                    batch_size: 4,
                    epochs: 5,
                    lr_halve_epoch: None,
                },
                tse_optim: OptimConfig {
                    lr: 1e-3,
                    batch_size: 2,
                    epochs: 5,
                    lr_halve_epoch: None,
                },
                loss: LossConfig { w_snr: 0.9, w_si_snr: 0.1 },
            },
            Preset::Paper => RunConfig {
                seed: 17,
                pitch_model: PitchNetConfig::default(),
                tse_model: TseConfig::default(),
                pitch_optim: OptimConfig {
                    lr: 1e-4,
                    batch_size: 32,
                    epochs: 80,
                    lr_halve_epoch: None,
                },
                tse_optim: OptimConfig {
                    lr: 5e-4,
                    batch_size: 32,
                    epochs: 80,
                    lr_halve_epoch: Some(40),
                },
                loss: LossConfig { w_snr: 0.9, w_si_snr: 0.1 },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pitch_model.validate()?;
        self.tse_model.validate()?;
        tsepi_core::metrics::check_loss_weights(self.loss.w_snr, self.loss.w_si_snr)?;
        if self.pitch_optim.batch_size == 0 || self.tse_optim.batch_size == 0 {
            return Err(CoreError::invalid("batch_size must be positive"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CoreError::invalid(format!("{}: {e}", path.as_ref().display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| CoreError::invalid(format!("serialize config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Apply the `TSEPI_SEED` environment override, when set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(text) = std::env::var(SEED_ENV_VAR) {
            self.seed = text
                .parse()
                .map_err(|e| CoreError::invalid(format!("{SEED_ENV_VAR}={text}: {e}")))?;
        }
        Ok(())
    }
}
