use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tsepi_cli::config::{Preset, RunConfig};
use tsepi_cli::data::{synth_dataset, Dataset};
use tsepi_cli::train::{PitchSource, PitchTrainArgs, TseTrainArgs};
use tsepi_core::forge::ForgeConfig;
use tsepi_core::Result;

#[derive(Parser)]
#[command(name = "tsepi", about = "Pitch-informed target sound extraction pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a reverberant mixture dataset with ground truth.
    SynthData {
        /// Split label (train / val / test); becomes a subdirectory of --out.
        #[arg(long, default_value = "train")]
        split: String,
        /// Number of mixtures.
        #[arg(long)]
        num: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Sources per mixture (one target plus interferers).
        #[arg(long, default_value_t = 2)]
        sources: usize,
        #[arg(long, default_value_t = -5.0)]
        snr_lo: f64,
        #[arg(long, default_value_t = 5.0)]
        snr_hi: f64,
        /// Background-noise SNR in dB relative to the reverberant sum.
        #[arg(long, default_value_t = 40.0)]
        noise_snr: f64,
        /// Also cache per-scene RIR WAVs with JSON sidecars.
        #[arg(long, default_value_t = false)]
        dump_rirs: bool,
    },
    /// Train the stage-1 conditional pitch extractor.
    TrainPitch {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        val_manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "desk")]
        preset: PresetArg,
        /// TOML run config overriding the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Stop after this many optimizer steps.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Train on only the first N samples.
        #[arg(long)]
        overfit: Option<usize>,
    },
    /// Train the stage-2 target sound extractor.
    TrainTse {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "desk")]
        preset: PresetArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        overfit: Option<usize>,
        /// Condition on stage-1 predictions instead of ground-truth pitch.
        #[arg(long)]
        pitch_from_checkpoint: Option<PathBuf>,
        /// Loss weights as "w_snr,w_si_snr" (must sum to 1).
        #[arg(long)]
        loss_weights: Option<String>,
    },
    /// Run two-stage evaluation over a manifest and emit report.json plus
    /// per_class.csv.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pitch_ckpt: PathBuf,
        #[arg(long)]
        tse_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the target class from a mixture WAV.
    Extract {
        #[arg(long)]
        mix: PathBuf,
        #[arg(long)]
        class: usize,
        #[arg(long)]
        pitch_ckpt: PathBuf,
        #[arg(long)]
        tse_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump per-filter parameters and magnitude responses of a trained
    /// GTFB encoder to CSV.
    InspectGtfb {
        #[arg(long)]
        tse_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum PresetArg {
    Desk,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Preset {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

fn resolve_config(preset: PresetArg, path: &Option<PathBuf>) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::preset(preset.into()),
    };
    config.apply_seed_env()?;
    Ok(config)
}

fn parse_loss_weights(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(tsepi_core::CoreError::invalid(format!(
            "loss weights {text:?}: expected \"w_snr,w_si_snr\""
        )));
    }
    let w1: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|e| tsepi_core::CoreError::invalid(format!("bad w_snr: {e}")))?;
    let w2: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|e| tsepi_core::CoreError::invalid(format!("bad w_si_snr: {e}")))?;
    tsepi_core::metrics::check_loss_weights(w1, w2)?;
    Ok((w1, w2))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData {
            split,
            num,
            mut seed,
            out,
            sources,
            snr_lo,
            snr_hi,
            noise_snr,
            dump_rirs,
        } => {
            if let Ok(text) = std::env::var(tsepi_cli::SEED_ENV_VAR) {
                seed = text.parse().map_err(|e| {
                    tsepi_core::CoreError::invalid(format!("TSEPI_SEED={text}: {e}"))
                })?;
            }
            let dir = out.join(&split);
            let forge = ForgeConfig {
                seed,
                n_sources: sources,
                snr_range: (snr_lo, snr_hi),
                noise_snr_db: noise_snr,
            };
            let manifest = synth_dataset(&dir, num, &forge, dump_rirs)?;
            println!("wrote {num} samples; manifest at {}", manifest.display());
        }
        Command::TrainPitch { manifest, val_manifest, out, preset, config, steps, resume, overfit } => {
            let run_config = resolve_config(preset, &config)?;
            std::fs::create_dir_all(&out)?;
            run_config.save(out.join("resolved_config.toml"))?;
            let dataset = Dataset::open(&manifest)?;
            let val = val_manifest.as_ref().map(Dataset::open).transpose()?;
            let outcome = tsepi_cli::train_pitch(PitchTrainArgs {
                dataset: &dataset,
                val: val.as_ref(),
                config: run_config.pitch_model.clone(),
                optim: run_config.pitch_optim.clone(),
                seed: run_config.seed,
                out_dir: &out,
                resume: resume.as_deref(),
                max_steps: steps,
                overfit,
            })?;
            println!(
                "done: {} steps, final loss {:.4}, checkpoint {}",
                outcome.steps_run,
                outcome.final_loss,
                outcome.checkpoint.display()
            );
        }
        Command::TrainTse {
            manifest,
            out,
            preset,
            config,
            steps,
            resume,
            overfit,
            pitch_from_checkpoint,
            loss_weights,
        } => {
            let mut run_config = resolve_config(preset, &config)?;
            if let Some(text) = &loss_weights {
                let (w1, w2) = parse_loss_weights(text)?;
                run_config.loss.w_snr = w1;
                run_config.loss.w_si_snr = w2;
            }
            std::fs::create_dir_all(&out)?;
            run_config.save(out.join("resolved_config.toml"))?;
            let dataset = Dataset::open(&manifest)?;
            let outcome = tsepi_cli::train_tse(TseTrainArgs {
                dataset: &dataset,
                config: run_config.tse_model.clone(),
                optim: run_config.tse_optim.clone(),
                loss: run_config.loss.clone(),
                seed: run_config.seed,
                out_dir: &out,
                resume: resume.as_deref(),
                max_steps: steps,
                overfit,
                pitch_source: if pitch_from_checkpoint.is_some() {
                    PitchSource::Checkpoint
                } else {
                    PitchSource::GroundTruth
                },
                pitch_ckpt: pitch_from_checkpoint.as_deref(),
            })?;
            println!(
                "done: {} steps, final loss {:.4}, checkpoint {}",
                outcome.steps_run,
                outcome.final_loss,
                outcome.checkpoint.display()
            );
        }
        Command::Eval { manifest, pitch_ckpt, tse_ckpt, out } => {
            let dataset = Dataset::open(&manifest)?;
            let report = tsepi_cli::evaluate(&dataset, &pitch_ckpt, &tse_ckpt, &out)?;
            println!(
                "predicted-pitch: SNRi {:.2} dB, SI-SNRi {:.2} dB over {} samples",
                report.predicted_pitch.mean_snri,
                report.predicted_pitch.mean_si_snri,
                report.predicted_pitch.samples.len()
            );
            println!(
                "teacher-forced: SNRi {:.2} dB, SI-SNRi {:.2} dB",
                report.teacher_forced.mean_snri, report.teacher_forced.mean_si_snri
            );
            println!("report at {}", out.join("report.json").display());
        }
        Command::Extract { mix, class, pitch_ckpt, tse_ckpt, out } => {
            tsepi_cli::extract(&mix, class, &pitch_ckpt, &tse_ckpt, &out)?;
            println!("wrote {}", out.display());
        }
        Command::InspectGtfb { tse_ckpt, out } => {
            tsepi_cli::evaluate::inspect_gtfb(&tse_ckpt, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
