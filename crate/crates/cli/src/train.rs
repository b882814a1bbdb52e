//! Training loops for both stages: deterministic batching, per-epoch
//! checkpoints with optimizer state, append-only logs, and resume.

use crate::config::{LossConfig, OptimConfig};
use crate::data::{epoch_order, Dataset};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use tsepi_core::nn::{load_checkpoint, save_checkpoint, Adam, AdamConfig, Gradients, ParamStore};
use tsepi_core::pitch::{PitchGrid, PitchSequence, RPA_THRESHOLD_CENTS};
use tsepi_core::pitchnet::{PitchNet, PitchNetConfig};
use tsepi_core::tse::{TseConfig, TseNet};
use tsepi_core::{CoreError, Result};

pub const PITCH_FORMAT: &str = "tsepi-pitch";
pub const TSE_FORMAT: &str = "tsepi-tse";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PitchCkptHeader {
    pub format: String,
    pub config: PitchNetConfig,
    pub grid: PitchGrid,
    pub seed: u64,
    pub step: u64,
    pub epoch: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TseCkptHeader {
    pub format: String,
    pub config: TseConfig,
    pub grid: PitchGrid,
    pub seed: u64,
    pub step: u64,
    pub epoch: usize,
}

fn check_format(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(CoreError::ConfigMismatch(format!(
            "checkpoint format {found:?}, expected {expected:?}"
        )));
    }
    Ok(())
}

pub fn load_pitch_net(path: &Path) -> Result<(PitchNet<f32>, PitchCkptHeader, Option<Adam<f32>>)> {
    let (header, store, adam): (PitchCkptHeader, ParamStore<f32>, _) = load_checkpoint(path)?;
    check_format(&header.format, PITCH_FORMAT)?;
    let net = PitchNet::from_store(header.config.clone(), store)?;
    Ok((net, header, adam))
}

pub fn load_tse_net(path: &Path) -> Result<(TseNet<f32>, TseCkptHeader, Option<Adam<f32>>)> {
    let (header, store, adam): (TseCkptHeader, ParamStore<f32>, _) = load_checkpoint(path)?;
    check_format(&header.format, TSE_FORMAT)?;
    let net = TseNet::from_store(header.config.clone(), store)?;
    Ok((net, header, adam))
}

struct RunLog {
    file: std::fs::File,
}

impl RunLog {
    fn open(dir: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("train.log"))?;
        Ok(RunLog { file })
    }

    fn line(&mut self, text: &str) -> Result<()> {
        println!("{text}");
        writeln!(self.file, "{text}")?;
        Ok(())
    }
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub final_loss: f64,
    pub steps_run: u64,
}

pub struct PitchTrainArgs<'a> {
    pub dataset: &'a Dataset,
    pub val: Option<&'a Dataset>,
    pub config: PitchNetConfig,
    pub optim: OptimConfig,
    pub seed: u64,
    pub out_dir: &'a Path,
    pub resume: Option<&'a Path>,
    /// Truncate training to this many steps (overrides epochs).
    pub max_steps: Option<u64>,
    /// Restrict to the first N samples (overfit harness).
    pub overfit: Option<usize>,
}

/// Stage-1 training: cross-entropy on the reference bins.
pub fn train_pitch(args: PitchTrainArgs) -> Result<TrainOutcome> {
    std::fs::create_dir_all(args.out_dir)?;
    let mut log = RunLog::open(args.out_dir)?;
    let n = args.overfit.unwrap_or(args.dataset.len()).min(args.dataset.len());
    let batch = args.optim.batch_size.min(n).max(1);
    let steps_per_epoch = n.div_ceil(batch) as u64;
    let total_steps = args
        .max_steps
        .unwrap_or(steps_per_epoch * args.optim.epochs as u64)
        .max(1);

    let (mut net, mut adam, start_step) = match args.resume {
        Some(path) => {
            let (net, header, adam) = load_pitch_net(path)?;
            if header.config != args.config {
                return Err(CoreError::ConfigMismatch(
                    "resume config differs from checkpoint".into(),
                ));
            }
            let adam = adam.ok_or_else(|| {
                CoreError::ConfigMismatch("checkpoint lacks optimizer state".into())
            })?;
            log.line(&format!("resuming from {} at step {}", path.display(), header.step))?;
            (net, adam, header.step)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let net = PitchNet::new(args.config.clone(), &mut rng)?;
            let adam = Adam::new(AdamConfig { lr: args.optim.lr, ..Default::default() });
            (net, adam, 0)
        }
    };

    let mut cache: Vec<Option<(Array2<f32>, usize, PitchSequence)>> = vec![None; n];
    let mut last_loss = f64::NAN;
    let mut last_epoch = (start_step / steps_per_epoch) as usize;
    apply_lr_schedule(&mut adam, &args.optim, last_epoch, &mut log)?;

    for step in start_step..total_steps {
        let epoch = (step / steps_per_epoch) as usize;
        if epoch != last_epoch {
            save_pitch_ckpt(args.out_dir, &net, &adam, args.seed, step, epoch)?;
            if let Some(val) = args.val {
                let rpa = validate_pitch(&net, val, 16)?;
                log.line(&format!("epoch {epoch} val_rpa {rpa:.4}"))?;
            }
            apply_lr_schedule(&mut adam, &args.optim, epoch, &mut log)?;
            last_epoch = epoch;
        }
        let order = epoch_order(n, args.seed, epoch);
        let pos = (step % steps_per_epoch) as usize * batch;
        let mut examples = Vec::with_capacity(batch);
        for &idx in order.iter().cycle().skip(pos).take(batch) {
            if cache[idx].is_none() {
                let ex = args.dataset.load(idx)?;
                cache[idx] = Some((ex.spec_input, ex.class_id, ex.pitch));
            }
            examples.push(cache[idx].clone().unwrap());
        }
        let (loss, grads) = net.batch_step(&examples)?;
        net.apply_step(&mut adam, &grads);
        last_loss = loss;
        if step % 10 == 0 || step + 1 == total_steps {
            log.line(&format!("step {step} epoch {epoch} loss {loss:.6}"))?;
        }
    }

    let final_epoch = (total_steps / steps_per_epoch) as usize;
    let checkpoint =
        save_pitch_ckpt(args.out_dir, &net, &adam, args.seed, total_steps, final_epoch)?;
    Ok(TrainOutcome { checkpoint, final_loss: last_loss, steps_run: total_steps - start_step })
}

fn save_pitch_ckpt(
    dir: &Path,
    net: &PitchNet<f32>,
    adam: &Adam<f32>,
    seed: u64,
    step: u64,
    epoch: usize,
) -> Result<PathBuf> {
    let header = PitchCkptHeader {
        format: PITCH_FORMAT.into(),
        config: net.config.clone(),
        grid: PitchGrid::default(),
        seed,
        step,
        epoch,
    };
    let path = dir.join(format!("pitch_epoch{epoch:03}.ckpt"));
    save_checkpoint(&path, &header, &net.store, Some(adam))?;
    let latest = dir.join("pitch_latest.ckpt");
    save_checkpoint(&latest, &header, &net.store, Some(adam))?;
    Ok(latest)
}

/// Mean RPA of decoded posteriors against the reference labels.
pub fn validate_pitch(net: &PitchNet<f32>, dataset: &Dataset, limit: usize) -> Result<f64> {
    let grid = PitchGrid::default();
    let mut total = 0.0;
    let mut count = 0usize;
    for idx in 0..dataset.len().min(limit) {
        let ex = dataset.load(idx)?;
        let posterior = net.forward(&ex.spec_input, ex.class_id)?;
        let decoded = posterior.decode(0.0, ex.pitch.hop);
        match tsepi_core::pitch::rpa(&decoded, &ex.pitch, &grid, RPA_THRESHOLD_CENTS) {
            Ok(v) => {
                total += v;
                count += 1;
            }
            Err(CoreError::UndefinedResult(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        return Err(CoreError::UndefinedResult("no voiced validation frames".into()));
    }
    Ok(total / count as f64)
}

fn apply_lr_schedule(
    adam: &mut Adam<f32>,
    optim: &OptimConfig,
    epoch: usize,
    log: &mut RunLog,
) -> Result<()> {
    if let Some(halve_at) = optim.lr_halve_epoch {
        let target = if epoch >= halve_at { optim.lr * 0.5 } else { optim.lr };
        if (adam.config.lr - target).abs() > 1e-15 {
            adam.config.lr = target;
            log.line(&format!("epoch {epoch} lr halved to {target:e}"))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PitchSource {
    GroundTruth,
    Checkpoint,
}

pub struct TseTrainArgs<'a> {
    pub dataset: &'a Dataset,
    pub config: TseConfig,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub seed: u64,
    pub out_dir: &'a Path,
    pub resume: Option<&'a Path>,
    pub max_steps: Option<u64>,
    pub overfit: Option<usize>,
    pub pitch_source: PitchSource,
    /// Stage-1 checkpoint when `pitch_source == Checkpoint`.
    pub pitch_ckpt: Option<&'a Path>,
}

/// Stage-2 training with the weighted negative SNR / SI-SNR objective.
/// Teacher-forced by default; `PitchSource::Checkpoint` conditions on
/// stage-1 predictions instead.
pub fn train_tse(args: TseTrainArgs) -> Result<TrainOutcome> {
    std::fs::create_dir_all(args.out_dir)?;
    let mut log = RunLog::open(args.out_dir)?;
    tsepi_core::metrics::check_loss_weights(args.loss.w_snr, args.loss.w_si_snr)?;

    let pitch_net = match args.pitch_source {
        PitchSource::GroundTruth => None,
        PitchSource::Checkpoint => {
            let path = args.pitch_ckpt.ok_or_else(|| {
                CoreError::invalid("pitch_source=checkpoint requires a pitch checkpoint")
            })?;
            let (net, header, _) = load_pitch_net(path)?;
            if header.grid != PitchGrid::default() {
                return Err(CoreError::ConfigMismatch(
                    "pitch checkpoint grid differs from the pipeline grid".into(),
                ));
            }
            Some(net)
        }
    };

    let n = args.overfit.unwrap_or(args.dataset.len()).min(args.dataset.len());
    let batch = args.optim.batch_size.min(n).max(1);
    let steps_per_epoch = n.div_ceil(batch) as u64;
    let total_steps = args
        .max_steps
        .unwrap_or(steps_per_epoch * args.optim.epochs as u64)
        .max(1);

    let (mut net, mut adam, start_step) = match args.resume {
        Some(path) => {
            let (net, header, adam) = load_tse_net(path)?;
            if header.config != args.config {
                return Err(CoreError::ConfigMismatch(
                    "resume config differs from checkpoint".into(),
                ));
            }
            let adam = adam.ok_or_else(|| {
                CoreError::ConfigMismatch("checkpoint lacks optimizer state".into())
            })?;
            log.line(&format!("resuming from {} at step {}", path.display(), header.step))?;
            (net, adam, header.step)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
            let net = TseNet::new(args.config.clone(), &mut rng)?;
            let adam = Adam::new(AdamConfig { lr: args.optim.lr, ..Default::default() });
            (net, adam, 0)
        }
    };

    // cached per-example tensors: mixture, target, class, pitch one-hot
    let mut cache: Vec<Option<(Vec<f32>, Vec<f32>, usize, Array2<f32>)>> = vec![None; n];
    let mut last_loss = f64::NAN;
    let mut last_epoch = (start_step / steps_per_epoch) as usize;
    apply_lr_schedule(&mut adam, &args.optim, last_epoch, &mut log)?;

    for step in start_step..total_steps {
        let epoch = (step / steps_per_epoch) as usize;
        if epoch != last_epoch {
            save_tse_ckpt(args.out_dir, &net, &adam, args.seed, step, epoch)?;
            apply_lr_schedule(&mut adam, &args.optim, epoch, &mut log)?;
            last_epoch = epoch;
        }
        let order = epoch_order(n, args.seed, epoch);
        let pos = (step % steps_per_epoch) as usize * batch;
        let mut batch_loss = 0.0;
        let mut acc: Vec<Option<Array2<f32>>> = Vec::new();
        for &idx in order.iter().cycle().skip(pos).take(batch) {
            if cache[idx].is_none() {
                let ex = args.dataset.load(idx)?;
                let onehot = match &pitch_net {
                    None => ex.pitch_onehot,
                    Some(pn) => {
                        let posterior = pn.forward(&ex.spec_input, ex.class_id)?;
                        let decoded = posterior.decode(0.0, ex.pitch.hop);
                        tsepi_core::pitch::one_hot(&decoded, &args.dataset.grid)?
                            .mapv(|v| v as f32)
                    }
                };
                cache[idx] =
                    Some((ex.mixture.samples, ex.target.samples, ex.class_id, onehot));
            }
            let (mixture, target, class_id, onehot) = cache[idx].as_ref().unwrap();
            let (loss, grads) =
                net.step(mixture, target, *class_id, onehot, args.loss.w_snr, args.loss.w_si_snr)?;
            batch_loss += loss;
            accumulate(&mut acc, grads, 1.0 / batch as f32);
        }
        let grads = Gradients { by_slot: acc };
        net.apply_step(&mut adam, &grads);
        last_loss = batch_loss / batch as f64;
        if step % 10 == 0 || step + 1 == total_steps {
            log.line(&format!("step {step} epoch {epoch} loss {last_loss:.4}"))?;
        }
    }

    let final_epoch = (total_steps / steps_per_epoch) as usize;
    let checkpoint = save_tse_ckpt(args.out_dir, &net, &adam, args.seed, total_steps, final_epoch)?;
    Ok(TrainOutcome { checkpoint, final_loss: last_loss, steps_run: total_steps - start_step })
}

fn accumulate(acc: &mut Vec<Option<Array2<f32>>>, grads: Gradients<f32>, scale: f32) {
    if acc.is_empty() {
        acc.resize_with(grads.by_slot.len(), || None);
    }
    for (slot, grad) in grads.by_slot.into_iter().enumerate() {
        let Some(grad) = grad else { continue };
        let scaled = grad.mapv(|v| v * scale);
        match &mut acc[slot] {
            Some(existing) => *existing += &scaled,
            entry => *entry = Some(scaled),
        }
    }
}

fn save_tse_ckpt(
    dir: &Path,
    net: &TseNet<f32>,
    adam: &Adam<f32>,
    seed: u64,
    step: u64,
    epoch: usize,
) -> Result<PathBuf> {
    let header = TseCkptHeader {
        format: TSE_FORMAT.into(),
        config: net.config.clone(),
        grid: PitchGrid::default(),
        seed,
        step,
        epoch,
    };
    let path = dir.join(format!("tse_epoch{epoch:03}.ckpt"));
    save_checkpoint(&path, &header, &net.store, Some(adam))?;
    let latest = dir.join("tse_latest.ckpt");
    save_checkpoint(&latest, &header, &net.store, Some(adam))?;
    Ok(latest)
}
