//! Two-stage evaluation (mixture -> stage-1 pitch -> stage-2 extraction),
//! report emission, and single-file extraction.

use crate::data::Dataset;
use crate::train::{load_pitch_net, load_tse_net};
use serde::Serialize;
use std::io::Write;
use std::path::Path;
use tsepi_core::audio::{read_wav, resample, write_wav, AudioClip, SAMPLE_RATE};
use tsepi_core::metrics::{EvalReport, SampleEval};
use tsepi_core::pitch::{coss, rpa, PitchGrid, RPA_THRESHOLD_CENTS};
use tsepi_core::pitchnet::PitchNet;
use tsepi_core::tse::TseNet;
use tsepi_core::{CoreError, Result};

/// Both evaluation passes: the genuine two-stage flow (predicted pitch) and
/// the teacher-forced upper bound.
#[derive(Debug, Serialize)]
pub struct FullReport {
    pub predicted_pitch: EvalReport,
    pub teacher_forced: EvalReport,
}

/// Evaluate the full pipeline over a manifest; writes `report.json` and
/// `per_class.csv` into `out_dir`.
pub fn evaluate(
    dataset: &Dataset,
    pitch_ckpt: &Path,
    tse_ckpt: &Path,
    out_dir: &Path,
) -> Result<FullReport> {
    let (pitch_net, pitch_header, _) = load_pitch_net(pitch_ckpt)?;
    let (tse_net, tse_header, _) = load_tse_net(tse_ckpt)?;
    if pitch_header.grid != tse_header.grid {
        return Err(CoreError::ConfigMismatch("pitch/tse checkpoints use different grids".into()));
    }
    if pitch_header.config.n_classes != tse_header.config.n_classes {
        return Err(CoreError::ConfigMismatch(
            "pitch/tse checkpoints disagree on the class count".into(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    let report = run_eval(dataset, &pitch_net, &tse_net)?;
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    write_per_class_csv(&report, &out_dir.join("per_class.csv"))?;
    Ok(report)
}

pub fn run_eval(
    dataset: &Dataset,
    pitch_net: &PitchNet<f32>,
    tse_net: &TseNet<f32>,
) -> Result<FullReport> {
    let grid = PitchGrid::default();
    let mut predicted_rows = Vec::with_capacity(dataset.len());
    let mut teacher_rows = Vec::with_capacity(dataset.len());
    for idx in 0..dataset.len() {
        let ex = dataset.load(idx)?;

        // stage 1
        let posterior = pitch_net.forward(&ex.spec_input, ex.class_id)?;
        let predicted = posterior.decode(0.0, ex.pitch.hop);
        let sample_rpa = match rpa(&predicted, &ex.pitch, &grid, RPA_THRESHOLD_CENTS) {
            Ok(v) => Some(v),
            Err(CoreError::UndefinedResult(_)) => None,
            Err(e) => return Err(e),
        };
        let sample_coss = match coss(&predicted, &ex.pitch, &grid) {
            Ok(v) => Some(v),
            Err(CoreError::UndefinedResult(_)) => None,
            Err(e) => return Err(e),
        };

        // stage 2, twice
        let est_pred = tse_net.forward(&ex.mixture, ex.class_id, &predicted, &grid)?;
        let est_teacher = tse_net.forward(&ex.mixture, ex.class_id, &ex.pitch, &grid)?;

        let mut row =
            SampleEval::from_signals(ex.id, ex.class_id, &est_pred, &ex.target, &ex.mixture)?;
        row.rpa = sample_rpa;
        row.coss = sample_coss;
        predicted_rows.push(row);
        teacher_rows.push(SampleEval::from_signals(
            ex.id,
            ex.class_id,
            &est_teacher,
            &ex.target,
            &ex.mixture,
        )?);
    }
    Ok(FullReport {
        predicted_pitch: EvalReport::from_samples(predicted_rows)?,
        teacher_forced: EvalReport::from_samples(teacher_rows)?,
    })
}

fn write_per_class_csv(report: &FullReport, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "class,count,snri_pred,si_snri_pred,snri_teacher,si_snri_teacher,rpa,coss"
    )?;
    for agg in &report.predicted_pitch.per_class {
        let teacher = report
            .teacher_forced
            .per_class
            .iter()
            .find(|t| t.class_id == agg.class_id);
        let (snri_t, si_snri_t) = teacher.map(|t| (t.snri, t.si_snri)).unwrap_or((f64::NAN, f64::NAN));
        writeln!(
            f,
            "{},{},{:.4},{:.4},{:.4},{:.4},{},{}",
            agg.class_id,
            agg.count,
            agg.snri,
            agg.si_snri,
            snri_t,
            si_snri_t,
            agg.rpa.map(|v| format!("{v:.4}")).unwrap_or_default(),
            agg.coss.map(|v| format!("{v:.4}")).unwrap_or_default(),
        )?;
    }
    Ok(())
}

/// Single-file extraction: resample to the pipeline rate, run both stages,
/// write the estimate.
pub fn extract(
    mix_path: &Path,
    class_id: usize,
    pitch_ckpt: &Path,
    tse_ckpt: &Path,
    out_path: &Path,
) -> Result<()> {
    let (pitch_net, _, _) = load_pitch_net(pitch_ckpt)?;
    let (tse_net, _, _) = load_tse_net(tse_ckpt)?;
    let grid = PitchGrid::default();
    let clip: AudioClip<f32> = read_wav(mix_path)?;
    let clip = resample(&clip, SAMPLE_RATE)?;
    let spec = tsepi_core::audio::stft_magnitude(
        &clip,
        tsepi_core::audio::STFT_WINDOW,
        tsepi_core::audio::STFT_HOP,
    )?;
    let input = tsepi_core::pitchnet::log_magnitude_input(&spec);
    let posterior = pitch_net.forward(&input, class_id)?;
    let pitch = posterior.decode(0.0, tsepi_core::pitch::PITCH_HOP_SECONDS);
    let est = tse_net.forward(&clip, class_id, &pitch, &grid)?;
    write_wav(out_path, &est)?;
    Ok(())
}

/// Dump per-filter center frequency, bandwidth, gain, phase and magnitude
/// response (4096-point) to CSV.
pub fn inspect_gtfb(tse_ckpt: &Path, out_path: &Path) -> Result<()> {
    let (net, _, _) = load_tse_net(tse_ckpt)?;
    let bank = net.gtfb_bank().ok_or_else(|| {
        CoreError::invalid("checkpoint uses a free convolutional encoder, not a GTFB")
    })?;
    write_gtfb_csv(&bank, out_path)
}

pub fn write_gtfb_csv(bank: &tsepi_core::gtfb::GammatoneParams, out_path: &Path) -> Result<()> {
    use rustfft::{num_complex::Complex, FftPlanner};
    let kernels = tsepi_core::gtfb::build_kernels::<f64>(bank)?;
    let n_fft = 4096;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    write!(f, "filter,fc_hz,bw_scale,amp,phase")?;
    let n_bins = 128;
    for b in 0..n_bins {
        write!(f, ",mag_{}", b * (n_fft / 2) / n_bins)?;
    }
    writeln!(f)?;
    for i in 0..bank.n_filters() {
        let mut buf: Vec<Complex<f64>> = kernels
            .row(i)
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(n_fft)
            .collect();
        fft.process(&mut buf);
        write!(
            f,
            "{},{:.3},{:.5},{:.5},{:.5}",
            i, bank.fc[i], bank.bw_scale[i], bank.amp[i], bank.phase[i]
        )?;
        for b in 0..n_bins {
            write!(f, ",{:.6}", buf[b * (n_fft / 2) / n_bins].norm())?;
        }
        writeln!(f)?;
    }
    Ok(())
}
