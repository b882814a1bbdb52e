//! Log-frequency pitch grid (20-cent bins, C1 to B6), one-hot encoding and
//! the sequence-level metrics RPA and COSS.

use crate::error::{CoreError, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Default pitch frame hop in seconds (10 ms, matching the STFT hop).
pub const PITCH_HOP_SECONDS: f64 = 0.01;
/// Default RPA threshold in cents.
pub const RPA_THRESHOLD_CENTS: f64 = 50.0;

/// Quantization of frequency into 20-cent bins from C1 (32.7 Hz) to B6
/// (1975.5 Hz), plus one unvoiced class after the voiced bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchGrid {
    pub f_min: f64,
    pub f_max: f64,
    pub step_cents: f64,
    pub n_bins: usize,
}

impl Default for PitchGrid {
    fn default() -> Self {
        PitchGrid::new(32.7, 1975.5, 20.0)
    }
}

impl PitchGrid {
    pub fn new(f_min: f64, f_max: f64, step_cents: f64) -> Self {
        let span_cents = 1200.0 * (f_max / f_min).log2();
        let n_bins = (span_cents / step_cents).round() as usize + 1;
        PitchGrid { f_min, f_max, step_cents, n_bins }
    }

    /// Index of the unvoiced class (one past the voiced bins).
    pub fn unvoiced_index(&self) -> usize {
        self.n_bins
    }

    /// Total class count: voiced bins plus the unvoiced class.
    pub fn n_classes(&self) -> usize {
        self.n_bins + 1
    }

    /// Nearest bin by cents distance, clamped to the voiced range.
    /// `f = 0` maps to the unvoiced class; negative `f` is an error.
    pub fn hz_to_bin(&self, f: f64) -> Result<usize> {
        if f < 0.0 {
            return Err(CoreError::invalid(format!("negative frequency {f}")));
        }
        if f == 0.0 {
            return Ok(self.unvoiced_index());
        }
        let cents = 1200.0 * (f / self.f_min).log2();
        let bin = (cents / self.step_cents).round();
        Ok(bin.clamp(0.0, (self.n_bins - 1) as f64) as usize)
    }

    /// Center frequency of a voiced bin; the unvoiced class maps to 0 Hz.
    pub fn bin_to_hz(&self, bin: usize) -> Result<f64> {
        if bin == self.unvoiced_index() {
            return Ok(0.0);
        }
        if bin >= self.n_bins {
            return Err(CoreError::invalid(format!(
                "bin {bin} out of range (n_bins {})",
                self.n_bins
            )));
        }
        Ok(self.f_min * 2f64.powf(bin as f64 * self.step_cents / 1200.0))
    }
}

/// Per-frame bin labels; `bins[i] == grid.unvoiced_index()` marks unvoiced.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchSequence {
    pub bins: Vec<usize>,
    /// Frame hop in seconds.
    pub hop: f64,
}

impl PitchSequence {
    pub fn new(bins: Vec<usize>, hop: f64) -> Result<Self> {
        if hop <= 0.0 {
            return Err(CoreError::invalid("hop must be positive"));
        }
        Ok(PitchSequence { bins, hop })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Per-frame frequency in Hz, 0 for unvoiced frames.
    pub fn to_hz(&self, grid: &PitchGrid) -> Result<Vec<f64>> {
        self.bins.iter().map(|&b| grid.bin_to_hz(b)).collect()
    }
}

/// One-hot encode a sequence over `grid.n_classes()` columns.
pub fn one_hot(seq: &PitchSequence, grid: &PitchGrid) -> Result<Array2<f64>> {
    let n_classes = grid.n_classes();
    let mut m = Array2::zeros((seq.len(), n_classes));
    for (i, &b) in seq.bins.iter().enumerate() {
        if b >= n_classes {
            return Err(CoreError::invalid(format!("bin {b} out of range at frame {i}")));
        }
        m[[i, b]] = 1.0;
    }
    Ok(m)
}

/// Raw pitch accuracy: over reference-voiced frames, the fraction whose
/// absolute cents error is within `threshold_cents`. An unvoiced estimate on
/// a voiced reference frame counts as wrong.
pub fn rpa(
    est: &PitchSequence,
    reference: &PitchSequence,
    grid: &PitchGrid,
    threshold_cents: f64,
) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(CoreError::invalid(format!(
            "length mismatch: est {} vs ref {}",
            est.len(),
            reference.len()
        )));
    }
    if (est.hop - reference.hop).abs() > 1e-12 {
        return Err(CoreError::invalid("hop mismatch"));
    }
    let unvoiced = grid.unvoiced_index();
    let mut voiced = 0usize;
    let mut hits = 0usize;
    for (&e, &r) in est.bins.iter().zip(&reference.bins) {
        if r == unvoiced {
            continue;
        }
        voiced += 1;
        if e == unvoiced {
            continue;
        }
        let cents_err = (e as f64 - r as f64).abs() * grid.step_cents;
        if cents_err <= threshold_cents {
            hits += 1;
        }
    }
    if voiced == 0 {
        return Err(CoreError::UndefinedResult("no voiced reference frames".into()));
    }
    Ok(hits as f64 / voiced as f64)
}

/// Cosine similarity between the per-frame frequency-in-Hz vectors of the two
/// sequences, with unvoiced frames mapped to 0 Hz.
pub fn coss(est: &PitchSequence, reference: &PitchSequence, grid: &PitchGrid) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(CoreError::invalid(format!(
            "length mismatch: est {} vs ref {}",
            est.len(),
            reference.len()
        )));
    }
    let a = est.to_hz(grid)?;
    let b = reference.to_hz(grid)?;
    coss_hz(&a, &b)
}

/// Cosine similarity of two raw Hz vectors (0 = unvoiced).
pub fn coss_hz(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::invalid("length mismatch"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        return Err(CoreError::UndefinedResult("both sequences all-unvoiced".into()));
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

/// Write a pitch sequence as CSV: `frame_index,f0_hz,bin_index`.
pub fn write_pitch_csv(
    path: impl AsRef<Path>,
    seq: &PitchSequence,
    grid: &PitchGrid,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "frame_index,f0_hz,bin_index")?;
    for (i, &b) in seq.bins.iter().enumerate() {
        let hz = grid.bin_to_hz(b)?;
        writeln!(f, "{i},{hz:.4},{b}")?;
    }
    Ok(())
}

/// Read a pitch sequence written by [`write_pitch_csv`].
pub fn read_pitch_csv(path: impl AsRef<Path>, hop: f64) -> Result<PitchSequence> {
    let f = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut bins = Vec::new();
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if lineno == 0 && line.starts_with("frame_index") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(CoreError::invalid(format!(
                "{}: line {} has {} fields, want 3",
                path.as_ref().display(),
                lineno + 1,
                fields.len()
            )));
        }
        let bin: usize = fields[2]
            .trim()
            .parse()
            .map_err(|e| CoreError::invalid(format!("line {}: bad bin: {e}", lineno + 1)))?;
        bins.push(bin);
    }
    PitchSequence::new(bins, hop)
}
