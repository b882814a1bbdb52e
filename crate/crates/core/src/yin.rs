//! YIN fundamental-frequency tracker, used as the pitch labeling oracle for
//! synthesized direct-path sources.
//!
//! Frames are centered on the same instants as the analysis STFT (window
//! 1024, hop 160 at 16 kHz) so frame counts line up across the pipeline.
//! A frame is voiced when the cumulative mean normalized difference dips
//! below the aperiodicity threshold within the search range.

use crate::audio::{n_frames, AudioClip, STFT_HOP, STFT_WINDOW};
use crate::scalar::Scalar;
use rustfft::{num_complex::Complex, FftPlanner};

#[derive(Debug, Clone)]
pub struct YinConfig {
    /// Integration window for the difference function (samples).
    pub window: usize,
    /// Aperiodicity threshold on the normalized difference.
    pub threshold: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// Frames with RMS below this are unvoiced outright.
    pub rms_gate: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        YinConfig { window: 1024, threshold: 0.15, f_min: 30.0, f_max: 2100.0, rms_gate: 1e-4 }
    }
}

/// Per-frame f0 in Hz (0 = unvoiced), framed to match
/// `n_frames(len, STFT_WINDOW, STFT_HOP)`.
pub fn track_f0<S: Scalar>(clip: &AudioClip<S>, config: &YinConfig) -> Vec<f64> {
    let fs = clip.sample_rate as f64;
    let nf = n_frames(clip.len(), STFT_WINDOW, STFT_HOP);
    let tau_min = (fs / config.f_max).floor().max(2.0) as usize;
    let tau_max = (fs / config.f_min).ceil() as usize;
    let buf_len = config.window + tau_max;
    let fft_size = (buf_len + tau_max).next_power_of_two();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_size);
    let ifft = planner.plan_fft_inverse(fft_size);

    let mut out = Vec::with_capacity(nf);
    let mut frame = vec![0.0f64; buf_len];
    let mut a = vec![Complex::new(0.0, 0.0); fft_size];
    let mut b = vec![Complex::new(0.0, 0.0); fft_size];
    let mut d = vec![0.0f64; tau_max + 1];

    for fi in 0..nf {
        // window centered on the STFT frame center
        let center = (fi * STFT_HOP + STFT_WINDOW / 2) as isize;
        let start = center - (buf_len / 2) as isize;
        for (j, slot) in frame.iter_mut().enumerate() {
            let idx = start + j as isize;
            *slot = if idx >= 0 && (idx as usize) < clip.len() {
                clip.samples[idx as usize].as_f64()
            } else {
                0.0
            };
        }
        let rms = (frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64).sqrt();
        if rms < config.rms_gate {
            out.push(0.0);
            continue;
        }
        difference_function(
            &frame,
            config.window,
            tau_max,
            &fft,
            &ifft,
            &mut a,
            &mut b,
            &mut d,
            fft_size,
        );
        out.push(pick_f0(&d, tau_min, tau_max, config.threshold, fs));
    }
    out
}

/// d(tau) = sum_{j<W} (x_j - x_{j+tau})^2 for tau in 0..=tau_max, via FFT
/// cross-correlation plus running energy terms.
#[allow(clippy::too_many_arguments)]
fn difference_function(
    x: &[f64],
    window: usize,
    tau_max: usize,
    fft: &std::sync::Arc<dyn rustfft::Fft<f64>>,
    ifft: &std::sync::Arc<dyn rustfft::Fft<f64>>,
    a: &mut [Complex<f64>],
    b: &mut [Complex<f64>],
    d: &mut [f64],
    fft_size: usize,
) {
    // corr(tau) = sum_{j<W} x_j x_{j+tau}: correlate x against its first W samples
    for (i, slot) in a.iter_mut().enumerate() {
        *slot = if i < x.len() { Complex::new(x[i], 0.0) } else { Complex::new(0.0, 0.0) };
    }
    for (i, slot) in b.iter_mut().enumerate() {
        *slot = if i < window { Complex::new(x[i], 0.0) } else { Complex::new(0.0, 0.0) };
    }
    fft.process(a);
    fft.process(b);
    for i in 0..fft_size {
        a[i] = a[i] * b[i].conj();
    }
    ifft.process(a);
    let inv = 1.0 / fft_size as f64;

    // prefix energy for the sliding term sum_{j<W} x_{j+tau}^2
    let mut prefix = vec![0.0f64; x.len() + 1];
    for (i, &v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v * v;
    }
    let e0 = prefix[window];
    for (tau, slot) in d.iter_mut().enumerate().take(tau_max + 1) {
        let e_tau = prefix[(tau + window).min(x.len())] - prefix[tau.min(x.len())];
        let corr = a[tau].re * inv;
        *slot = (e0 + e_tau - 2.0 * corr).max(0.0);
    }
}

fn pick_f0(d: &[f64], tau_min: usize, tau_max: usize, threshold: f64, fs: f64) -> f64 {
    // cumulative mean normalized difference
    let mut cmndf = vec![1.0f64; tau_max + 1];
    let mut running = 0.0;
    for tau in 1..=tau_max {
        running += d[tau];
        cmndf[tau] = if running > 0.0 { d[tau] * tau as f64 / running } else { 1.0 };
    }
    // first dip under the threshold, then descend to its local minimum
    let mut tau = tau_min;
    while tau <= tau_max {
        if cmndf[tau] < threshold {
            while tau + 1 <= tau_max && cmndf[tau + 1] < cmndf[tau] {
                tau += 1;
            }
            // subharmonic guard: when a comparable dip exists at half the
            // period (edge frames can nudge the true dip just over the
            // threshold), prefer the shorter period
            loop {
                let half = tau / 2;
                if half < tau_min.max(2) {
                    break;
                }
                let local = (half.saturating_sub(2)..=(half + 2).min(tau_max))
                    .min_by(|&a, &b| cmndf[a].partial_cmp(&cmndf[b]).unwrap())
                    .unwrap();
                if cmndf[local] < (1.3 * cmndf[tau]).max(threshold * 1.2) {
                    tau = local;
                } else {
                    break;
                }
            }
            let refined = parabolic_min(&cmndf, tau, tau_max);
            let f0 = fs / refined;
            return if f0.is_finite() && f0 > 0.0 { f0 } else { 0.0 };
        }
        tau += 1;
    }
    0.0
}

fn parabolic_min(y: &[f64], tau: usize, tau_max: usize) -> f64 {
    if tau == 0 || tau >= tau_max {
        return tau as f64;
    }
    let (a, b, c) = (y[tau - 1], y[tau], y[tau + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() < 1e-12 {
        return tau as f64;
    }
    let shift = 0.5 * (a - c) / denom;
    tau as f64 + shift.clamp(-1.0, 1.0)
}
