//! SNR, SI-SNR, their improvements, and the evaluation report.
//!
//! Reported metrics are capped at [`METRIC_CAP_DB`] so reports stay finite;
//! the training loss uses the uncapped smooth form (see
//! [`crate::tse::combined_loss_graph`]).

use crate::audio::AudioClip;
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Cap for reported SNR/SI-SNR values in dB.
pub const METRIC_CAP_DB: f64 = 60.0;

fn check_lengths<S: Scalar>(est: &AudioClip<S>, reference: &AudioClip<S>) -> Result<()> {
    if est.len() != reference.len() {
        return Err(CoreError::invalid(format!(
            "length mismatch: est {} vs ref {}",
            est.len(),
            reference.len()
        )));
    }
    Ok(())
}

/// Scale-dependent SNR: `10*log10(||ref||^2 / ||ref - est||^2)`, capped.
pub fn snr_db<S: Scalar>(est: &AudioClip<S>, reference: &AudioClip<S>) -> Result<f64> {
    check_lengths(est, reference)?;
    let ref_energy: f64 = reference.samples.iter().map(|&x| x.as_f64().powi(2)).sum();
    if ref_energy <= 0.0 {
        return Err(CoreError::invalid("reference has zero energy"));
    }
    let residual: f64 = est
        .samples
        .iter()
        .zip(&reference.samples)
        .map(|(&e, &r)| (r.as_f64() - e.as_f64()).powi(2))
        .sum();
    if residual == 0.0 {
        return Ok(METRIC_CAP_DB);
    }
    Ok((10.0 * (ref_energy / residual).log10()).min(METRIC_CAP_DB))
}

/// Scale-invariant SNR: project the (mean-removed) estimate onto the
/// reference, compare projection energy against the residual. Capped.
pub fn si_snr_db<S: Scalar>(est: &AudioClip<S>, reference: &AudioClip<S>) -> Result<f64> {
    check_lengths(est, reference)?;
    let n = est.len();
    if n == 0 {
        return Err(CoreError::invalid("empty signals"));
    }
    let mean = |xs: &[S]| xs.iter().map(|&x| x.as_f64()).sum::<f64>() / n as f64;
    let em = mean(&est.samples);
    let rm = mean(&reference.samples);
    let e: Vec<f64> = est.samples.iter().map(|&x| x.as_f64() - em).collect();
    let r: Vec<f64> = reference.samples.iter().map(|&x| x.as_f64() - rm).collect();
    let ref_energy: f64 = r.iter().map(|x| x * x).sum();
    let est_energy: f64 = e.iter().map(|x| x * x).sum();
    if ref_energy <= 0.0 {
        return Err(CoreError::invalid("reference has zero energy"));
    }
    if est_energy <= 0.0 {
        return Err(CoreError::invalid("estimate has zero energy"));
    }
    let dot: f64 = e.iter().zip(&r).map(|(a, b)| a * b).sum();
    let alpha = dot / ref_energy;
    let target_energy = alpha * alpha * ref_energy;
    let noise_energy: f64 = e
        .iter()
        .zip(&r)
        .map(|(a, b)| (a - alpha * b).powi(2))
        .sum();
    if noise_energy == 0.0 {
        return Ok(METRIC_CAP_DB);
    }
    Ok((10.0 * (target_energy / noise_energy).log10()).min(METRIC_CAP_DB))
}

/// Which metric an improvement is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Snr,
    SiSnr,
}

/// `metric(est, ref) - metric(mixture, ref)`.
pub fn improvement<S: Scalar>(
    metric: Metric,
    est: &AudioClip<S>,
    reference: &AudioClip<S>,
    mixture: &AudioClip<S>,
) -> Result<f64> {
    let f = match metric {
        Metric::Snr => snr_db::<S>,
        Metric::SiSnr => si_snr_db::<S>,
    };
    Ok(f(est, reference)? - f(mixture, reference)?)
}

/// Weighted negative SNR/SI-SNR training objective, evaluated pointwise
/// (reporting form; the differentiable form lives with the TSE trainer).
pub fn combined_loss<S: Scalar>(
    est: &AudioClip<S>,
    reference: &AudioClip<S>,
    w_snr: f64,
    w_si_snr: f64,
) -> Result<f64> {
    check_loss_weights(w_snr, w_si_snr)?;
    Ok(-(w_snr * snr_db(est, reference)? + w_si_snr * si_snr_db(est, reference)?))
}

pub fn check_loss_weights(w_snr: f64, w_si_snr: f64) -> Result<()> {
    if w_snr < 0.0 || w_si_snr < 0.0 {
        return Err(CoreError::invalid("loss weights must be nonnegative"));
    }
    if (w_snr + w_si_snr - 1.0).abs() > 1e-9 {
        return Err(CoreError::invalid(format!(
            "loss weights must sum to 1, got {w_snr} + {w_si_snr}"
        )));
    }
    Ok(())
}

/// Per-sample evaluation row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEval {
    pub id: usize,
    pub class_id: usize,
    pub snr_in: f64,
    pub snr_out: f64,
    pub si_snr_in: f64,
    pub si_snr_out: f64,
    pub snri: f64,
    pub si_snri: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rpa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coss: Option<f64>,
}

impl SampleEval {
    pub fn from_signals<S: Scalar>(
        id: usize,
        class_id: usize,
        est: &AudioClip<S>,
        reference: &AudioClip<S>,
        mixture: &AudioClip<S>,
    ) -> Result<Self> {
        let snr_in = snr_db(mixture, reference)?;
        let snr_out = snr_db(est, reference)?;
        let si_snr_in = si_snr_db(mixture, reference)?;
        let si_snr_out = si_snr_db(est, reference)?;
        Ok(SampleEval {
            id,
            class_id,
            snr_in,
            snr_out,
            si_snr_in,
            si_snr_out,
            snri: snr_out - snr_in,
            si_snri: si_snr_out - si_snr_in,
            rpa: None,
            coss: None,
        })
    }
}

/// Aggregate over one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassAggregate {
    pub class_id: usize,
    pub count: usize,
    pub snri: f64,
    pub si_snri: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rpa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coss: Option<f64>,
}

/// Full evaluation report: per-sample rows, per-class aggregates, global
/// means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleEval>,
    pub per_class: Vec<ClassAggregate>,
    pub mean_snri: f64,
    pub mean_si_snri: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_rpa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_coss: Option<f64>,
}

impl EvalReport {
    pub fn from_samples(samples: Vec<SampleEval>) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::invalid("no samples to aggregate"));
        }
        let mut by_class: BTreeMap<usize, Vec<&SampleEval>> = BTreeMap::new();
        for s in &samples {
            by_class.entry(s.class_id).or_default().push(s);
        }
        let mean_of = |vals: Vec<f64>| -> Option<f64> {
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        let per_class: Vec<ClassAggregate> = by_class
            .iter()
            .map(|(&class_id, rows)| ClassAggregate {
                class_id,
                count: rows.len(),
                snri: rows.iter().map(|r| r.snri).sum::<f64>() / rows.len() as f64,
                si_snri: rows.iter().map(|r| r.si_snri).sum::<f64>() / rows.len() as f64,
                rpa: mean_of(rows.iter().filter_map(|r| r.rpa).collect()),
                coss: mean_of(rows.iter().filter_map(|r| r.coss).collect()),
            })
            .collect();
        // global mean via class means weighted by class counts
        let total: usize = per_class.iter().map(|c| c.count).sum();
        let mean_snri =
            per_class.iter().map(|c| c.snri * c.count as f64).sum::<f64>() / total as f64;
        let mean_si_snri =
            per_class.iter().map(|c| c.si_snri * c.count as f64).sum::<f64>() / total as f64;
        let mean_rpa = mean_of(samples.iter().filter_map(|s| s.rpa).collect());
        let mean_coss = mean_of(samples.iter().filter_map(|s| s.coss).collect());
        Ok(EvalReport { samples, per_class, mean_snri, mean_si_snri, mean_rpa, mean_coss })
    }
}
