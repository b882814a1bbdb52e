//! Gammatone filterbank waveform encoder with optionally learnable
//! parameters: a drop-in replacement for the free 1-D convolutional encoder.
//!
//! Each kernel follows `amp * (t/fs)^(n-1) * exp(-2 pi bw ERB(fc) t/fs)
//! * cos(2 pi fc t/fs + phase)`. The unit-gain prototype is L2-normalized
//! per filter and `amp` scales it afterwards, so `amp` stays a live
//! parameter under training while the default bank (amp = 1) has
//! unit-norm kernels.
//!
//! Raw trainable parameters live in constrained form: center frequencies on
//! the ERB-rate scale through a sigmoid-bounded map (so `0 < fc < fs/2` for
//! any raw value) and bandwidth scales through a softplus.

use crate::error::{CoreError, Result};
use crate::nn::{Graph, ParamId, ParamStore, Var};
use crate::scalar::Scalar;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Glasberg-Moore equivalent rectangular bandwidth in Hz.
pub fn erb(f: f64) -> Result<f64> {
    if f < 0.0 {
        return Err(CoreError::invalid(format!("negative frequency {f}")));
    }
    Ok(24.7 * (4.37 * f / 1000.0 + 1.0))
}

const ERB_SLOPE: f64 = 24.7 * 4.37 / 1000.0;

/// ERB-rate scale (number of ERBs below `f`).
pub fn erb_rate(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

pub fn erb_rate_inv(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

/// `K` center frequencies equally spaced on the ERB-rate scale.
pub fn init_center_freqs(k: usize, f_low: f64, f_high: f64) -> Result<Vec<f64>> {
    if !(f_low > 0.0 && f_high > f_low) {
        return Err(CoreError::invalid(format!("bad frequency bounds [{f_low}, {f_high}]")));
    }
    if k < 2 {
        return Err(CoreError::invalid("need at least 2 filters"));
    }
    let e_lo = erb_rate(f_low);
    let e_hi = erb_rate(f_high);
    Ok((0..k)
        .map(|i| erb_rate_inv(e_lo + (e_hi - e_lo) * i as f64 / (k - 1) as f64))
        .collect())
}

/// Per-filter gammatone parameters in their natural domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammatoneParams {
    pub fc: Vec<f64>,
    pub bw_scale: Vec<f64>,
    pub amp: Vec<f64>,
    pub phase: Vec<f64>,
    pub order: u32,
    pub length: usize,
    pub sample_rate: u32,
    pub learnable: bool,
}

impl GammatoneParams {
    /// Default bank: unit bandwidth scale and gain, zero phase, 4th order.
    pub fn bank(
        k: usize,
        length: usize,
        sample_rate: u32,
        f_low: f64,
        f_high: f64,
        learnable: bool,
    ) -> Result<Self> {
        if f_high >= sample_rate as f64 / 2.0 {
            return Err(CoreError::invalid("f_high must stay below Nyquist"));
        }
        Ok(GammatoneParams {
            fc: init_center_freqs(k, f_low, f_high)?,
            bw_scale: vec![1.0; k],
            amp: vec![1.0; k],
            phase: vec![0.0; k],
            order: 4,
            length,
            sample_rate,
            learnable,
        })
    }

    pub fn n_filters(&self) -> usize {
        self.fc.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.fc.len();
        if self.bw_scale.len() != k || self.amp.len() != k || self.phase.len() != k {
            return Err(CoreError::invalid("parameter vectors must share length"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for &f in &self.fc {
            if !(f > 0.0 && f < nyquist) {
                return Err(CoreError::invalid(format!("fc {f} outside (0, {nyquist})")));
            }
        }
        if self.bw_scale.iter().any(|&b| b <= 0.0) {
            return Err(CoreError::invalid("bw_scale must be positive"));
        }
        Ok(())
    }
}

/// Build the `K x L` kernel matrix (row per filter). The unit-gain prototype
/// row is L2-normalized, then scaled by `amp`.
pub fn build_kernels<S: Scalar>(params: &GammatoneParams) -> Result<Array2<S>> {
    params.validate()?;
    let k = params.n_filters();
    let l = params.length;
    let fs = params.sample_rate as f64;
    let mut kernels = Array2::zeros((k, l));
    for i in 0..k {
        let erb_i = erb(params.fc[i])?;
        let decay = 2.0 * std::f64::consts::PI * params.bw_scale[i] * erb_i;
        let omega = 2.0 * std::f64::consts::PI * params.fc[i];
        let mut row = vec![0.0f64; l];
        for (t, slot) in row.iter_mut().enumerate() {
            let ts = t as f64 / fs;
            // envelope in sample units; the per-row normalization cancels
            // any fixed scale and keeps magnitudes f32-friendly
            *slot = (t as f64).powi(params.order as i32 - 1)
                * (-decay * ts).exp()
                * (omega * ts + params.phase[i]).cos();
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-30);
        for (t, &v) in row.iter().enumerate() {
            kernels[[i, t]] = S::of_f64(params.amp[i] * v / norm);
        }
    }
    Ok(kernels)
}

/// Strided-correlation features.
#[derive(Debug, Clone)]
pub struct EncodedFrames<S: Scalar> {
    /// `K x n_frames`.
    pub features: Array2<S>,
    pub stride: usize,
}

/// Strided correlation of the waveform against every kernel, before the
/// rectifier. Linear in the waveform.
pub fn encode_linear<S: Scalar>(
    waveform: &[S],
    kernels: &Array2<S>,
    stride: usize,
) -> Result<EncodedFrames<S>> {
    let l = kernels.ncols();
    if waveform.len() < l {
        return Err(CoreError::invalid(format!(
            "waveform of {} samples shorter than kernel length {l}",
            waveform.len()
        )));
    }
    let frames = (waveform.len() - l) / stride + 1;
    let mut features = Array2::zeros((kernels.nrows(), frames));
    for f in 0..frames {
        for ki in 0..kernels.nrows() {
            let mut acc = S::zero();
            for t in 0..l {
                acc += kernels[[ki, t]] * waveform[f * stride + t];
            }
            features[[ki, f]] = acc;
        }
    }
    Ok(EncodedFrames { features, stride })
}

/// [`encode_linear`] followed by ReLU.
pub fn encode<S: Scalar>(
    waveform: &[S],
    params: &GammatoneParams,
    stride: usize,
) -> Result<EncodedFrames<S>> {
    let kernels = build_kernels::<S>(params)?;
    let mut enc = encode_linear(waveform, &kernels, stride)?;
    enc.features.mapv_inplace(|x| x.max(S::zero()));
    Ok(enc)
}

/// Raw (unconstrained) trainable gammatone parameters in a store.
#[derive(Debug, Clone, Copy)]
pub struct GtfbParamIds {
    pub fc_raw: ParamId,
    pub bw_raw: ParamId,
    pub amp: ParamId,
    pub phase: ParamId,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn softplus_inv(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

/// Register the four per-filter parameter vectors, initialized so the
/// constrained values reproduce `params` exactly.
pub fn register_gtfb_params<S: Scalar>(
    store: &mut ParamStore<S>,
    prefix: &str,
    params: &GammatoneParams,
) -> Result<GtfbParamIds> {
    params.validate()?;
    let k = params.n_filters();
    let e_max = erb_rate(params.sample_rate as f64 / 2.0);
    let col = |vals: Vec<f64>| {
        Array2::from_shape_vec((k, 1), vals.into_iter().map(|v| S::of_f64(v)).collect()).unwrap()
    };
    // invert the guarded sigmoid map used by `fc_from_raw`
    let fc_raw = col(params
        .fc
        .iter()
        .map(|&f| logit((erb_rate(f) / e_max - FC_GUARD) / (1.0 - 2.0 * FC_GUARD)))
        .collect());
    let bw_raw = col(params.bw_scale.iter().map(|&b| softplus_inv(b)).collect());
    let trainable = params.learnable;
    Ok(GtfbParamIds {
        fc_raw: store.add(format!("{prefix}.fc_raw"), fc_raw, trainable),
        bw_raw: store.add(format!("{prefix}.bw_raw"), bw_raw, trainable),
        amp: store.add(format!("{prefix}.amp"), col(params.amp.clone()), trainable),
        phase: store.add(format!("{prefix}.phase"), col(params.phase.clone()), trainable),
    })
}

/// Margin keeping the sigmoid-bounded center-frequency map away from the
/// open interval's ends.
const FC_GUARD: f64 = 1e-4;

/// Constrained center frequencies from the raw parameter, on the tape.
/// The sigmoid output is kept away from {0, 1} so `fc` stays strictly
/// inside `(0, fs/2)` even at extreme raw values.
pub fn fc_from_raw<S: Scalar>(g: &mut Graph<S>, fc_raw: Var, sample_rate: u32) -> Var {
    let e_max = erb_rate(sample_rate as f64 / 2.0);
    let sig = g.sigmoid(fc_raw);
    let sig = g.scale(sig, 1.0 - 2.0 * FC_GUARD);
    let sig = g.add_scalar(sig, FC_GUARD);
    let e = g.scale(sig, e_max);
    // erb_rate_inv(e) = (10^(e/21.4) - 1) / 0.00437
    let x = g.scale(e, std::f64::consts::LN_10 / 21.4);
    let x = g.exp(x);
    let x = g.add_scalar(x, -1.0);
    g.scale(x, 1.0 / 0.00437)
}

/// Differentiable kernel construction on the tape; mirrors
/// [`build_kernels`] exactly for matching parameter values.
pub fn kernels_graph<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    ids: &GtfbParamIds,
    order: u32,
    length: usize,
    sample_rate: u32,
) -> Var {
    let fs = sample_rate as f64;
    let fc_raw = store.bind(g, ids.fc_raw);
    let bw_raw = store.bind(g, ids.bw_raw);
    let amp = store.bind(g, ids.amp);
    let phase = store.bind(g, ids.phase);

    let fc = fc_from_raw(g, fc_raw, sample_rate);
    let bw = g.softplus(bw_raw);

    let t_row = g.constant(Array2::from_shape_fn((1, length), |(_, t)| {
        S::of_f64(t as f64 / fs)
    }));
    let env_row = g.constant(Array2::from_shape_fn((1, length), |(_, t)| {
        S::of_f64((t as f64).powi(order as i32 - 1))
    }));

    // envelope exp(-2 pi bw ERB(fc) t)
    let erb_fc = g.scale(fc, ERB_SLOPE);
    let erb_fc = g.add_scalar(erb_fc, 24.7);
    let decay = g.mul(bw, erb_fc);
    let env_arg = g.matmul(decay, t_row);
    let env_arg = g.scale(env_arg, -2.0 * std::f64::consts::PI);
    let envelope = g.exp(env_arg);

    // carrier cos(2 pi fc t + phase)
    let carrier_arg = g.matmul(fc, t_row);
    let carrier_arg = g.scale(carrier_arg, 2.0 * std::f64::consts::PI);
    let carrier_arg = g.add_col(carrier_arg, phase);
    let carrier = g.cos(carrier_arg);

    let base = g.mul(envelope, carrier);
    let base = g.mul_row(base, env_row);
    let unit = g.row_l2_normalize(base);
    g.mul_col(unit, amp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::FftPlanner;

    #[test]
    fn erb_values() {
        assert!((erb(0.0).unwrap() - 24.7).abs() < 1e-12);
        assert!((erb(1000.0).unwrap() - 132.639).abs() < 1e-3);
        assert!(erb(-1.0).is_err());
        // monotone
        let mut prev = 0.0;
        for f in (0..80).map(|i| i as f64 * 100.0) {
            let v = erb(f).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn center_freq_init_spacing_uniform_on_erb_rate() {
        let fc = init_center_freqs(2, 50.0, 7800.0).unwrap();
        assert!((fc[0] - 50.0).abs() < 1e-9);
        assert!((fc[1] - 7800.0).abs() < 1e-6);

        let fc = init_center_freqs(512, 50.0, 7800.0).unwrap();
        assert!(fc.windows(2).all(|w| w[1] > w[0]), "strictly increasing");
        let spacings: Vec<f64> =
            fc.windows(2).map(|w| erb_rate(w[1]) - erb_rate(w[0])).collect();
        for s in &spacings {
            assert!((s - spacings[0]).abs() < 1e-9);
        }
    }

    fn fft_peak_hz(kernel: &[f64], fs: f64) -> f64 {
        let n = 4096;
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let mut buf: Vec<rustfft::num_complex::Complex<f64>> = kernel
            .iter()
            .map(|&v| rustfft::num_complex::Complex::new(v, 0.0))
            .chain(std::iter::repeat(rustfft::num_complex::Complex::new(0.0, 0.0)))
            .take(n)
            .collect();
        fft.process(&mut buf);
        let peak = (0..n / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap();
        peak as f64 * fs / n as f64
    }

    #[test]
    fn kernel_fft_peak_at_2khz_within_one_bin() {
        let fs = 16_000u32;
        let params = GammatoneParams {
            fc: vec![2000.0],
            bw_scale: vec![4.0],
            amp: vec![1.0],
            phase: vec![0.0],
            order: 4,
            length: 32,
            sample_rate: fs,
            learnable: false,
        };
        let kernels = build_kernels::<f64>(&params).unwrap();
        let row: Vec<f64> = kernels.row(0).to_vec();
        let peak = fft_peak_hz(&row, fs as f64);
        assert!((peak - 2000.0).abs() <= fs as f64 / 4096.0 + 1e-9, "peak {peak}");
    }

    #[test]
    fn kernel_fft_peak_tracks_fc_in_the_selective_band() {
        // a 32-tap kernel (2 ms) localizes its spectral peak to within a
        // couple of bins only once fc clears the window's bandwidth
        let fs = 16_000u32;
        let fcs: Vec<f64> = (0..24)
            .map(|i| 1800.0 * (4000.0f64 / 1800.0).powf(i as f64 / 23.0))
            .collect();
        let k = fcs.len();
        let params = GammatoneParams {
            fc: fcs.clone(),
            bw_scale: vec![4.0; k],
            amp: vec![1.0; k],
            phase: vec![0.0; k],
            order: 4,
            length: 32,
            sample_rate: fs,
            learnable: false,
        };
        let kernels = build_kernels::<f64>(&params).unwrap();
        let bin_hz = fs as f64 / 4096.0;
        for (i, &fc) in fcs.iter().enumerate() {
            let row: Vec<f64> = kernels.row(i).to_vec();
            let peak = fft_peak_hz(&row, fs as f64);
            assert!(
                (peak - fc).abs() <= 2.0 * bin_hz + 1e-9,
                "fc {fc}: peak {peak} ({} bins off)",
                (peak - fc).abs() / bin_hz
            );
        }
    }

    #[test]
    fn kernels_unit_l2_norm_at_default_gain() {
        let params = GammatoneParams::bank(64, 32, 16_000, 50.0, 7800.0, false).unwrap();
        let kernels = build_kernels::<f64>(&params).unwrap();
        for i in 0..64 {
            let norm: f64 = kernels.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "filter {i}: {norm}");
        }
    }

    #[test]
    fn degenerate_order_one_is_windowed_cosine() {
        let fs = 16_000u32;
        let params = GammatoneParams {
            fc: vec![1000.0],
            bw_scale: vec![1e-6],
            amp: vec![1.0],
            phase: vec![0.0],
            order: 1,
            length: 32,
            sample_rate: fs,
            learnable: false,
        };
        let kernels = build_kernels::<f64>(&params).unwrap();
        // expected: normalized pure cosine
        let raw: Vec<f64> = (0..32)
            .map(|t| (std::f64::consts::TAU * 1000.0 * t as f64 / fs as f64).cos())
            .collect();
        let norm: f64 = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        for t in 0..32 {
            assert!((kernels[[0, t]] - raw[t] / norm).abs() < 1e-4, "tap {t}");
        }
    }

    #[test]
    fn encoder_tone_response_peaks_at_matching_filter() {
        let fs = 16_000u32;
        let params = GammatoneParams::bank(16, 32, fs, 800.0, 7000.0, false).unwrap();
        let kernels = build_kernels::<f64>(&params).unwrap();
        for &probe_idx in &[4usize, 8, 11, 14] {
            let fc = params.fc[probe_idx];
            let wave: Vec<f64> = (0..4000)
                .map(|n| (std::f64::consts::TAU * fc * n as f64 / fs as f64).sin())
                .collect();
            let enc = encode_linear(&wave, &kernels, 16).unwrap();
            // total rectified response energy per filter
            let mut best = (0usize, f64::NEG_INFINITY);
            for ki in 0..16 {
                let e: f64 = enc.features.row(ki).iter().map(|&x| x * x).sum();
                if e > best.1 {
                    best = (ki, e);
                }
            }
            assert!(
                (best.0 as i64 - probe_idx as i64).abs() <= 1,
                "tone at filter {probe_idx} peaked at {}",
                best.0
            );
        }
    }

    #[test]
    fn encode_is_linear_before_rectifier_and_frame_count_matches() {
        let fs = 16_000;
        let params = GammatoneParams::bank(16, 32, fs, 100.0, 7000.0, false).unwrap();
        let kernels = build_kernels::<f64>(&params).unwrap();
        let wave: Vec<f64> = (0..1000)
            .map(|n| (std::f64::consts::TAU * 620.0 * n as f64 / fs as f64).sin())
            .collect();
        let scaled: Vec<f64> = wave.iter().map(|x| 2.5 * x).collect();
        let a = encode_linear(&wave, &kernels, 16).unwrap();
        let b = encode_linear(&scaled, &kernels, 16).unwrap();
        assert_eq!(a.features.ncols(), (1000 - 32) / 16 + 1);
        for (x, y) in a.features.iter().zip(b.features.iter()) {
            assert!((2.5 * x - y).abs() < 1e-9);
        }
        // zero waveform -> zero features
        let z = encode(&vec![0.0f64; 1000], &params, 16).unwrap();
        assert!(z.features.iter().all(|&v| v == 0.0));
        // too-short waveform errors
        assert!(encode(&vec![0.0f64; 8], &params, 16).is_err());
    }

    #[test]
    fn graph_construction_matches_pure_builder() {
        let params = GammatoneParams::bank(12, 32, 16_000, 80.0, 6000.0, true).unwrap();
        let direct = build_kernels::<f64>(&params).unwrap();
        let mut store = ParamStore::<f64>::new();
        let ids = register_gtfb_params(&mut store, "enc", &params).unwrap();
        let mut g = Graph::new();
        let kv = kernels_graph(&mut g, &store, &ids, params.order, params.length, 16_000);
        let from_graph = g.value(kv);
        for (a, b) in direct.iter().zip(from_graph.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn gtfb_gradient_check_all_four_parameters() {
        use crate::nn::gradient_check;
        let params = GammatoneParams::bank(6, 16, 16_000, 200.0, 4000.0, true).unwrap();
        let mut store = ParamStore::<f64>::new();
        let ids = register_gtfb_params(&mut store, "enc", &params).unwrap();
        let wave = Array2::from_shape_fn((1, 128), |(_, n)| {
            (std::f64::consts::TAU * 700.0 * n as f64 / 16_000.0).sin()
                + 0.3 * (std::f64::consts::TAU * 2200.0 * n as f64 / 16_000.0).cos()
        });
        for id in [ids.fc_raw, ids.bw_raw, ids.amp, ids.phase] {
            let err = gradient_check(&mut store, id, 1e-4, |store| {
                let mut g = Graph::new();
                let kernels = kernels_graph(&mut g, store, &ids, 4, 16, 16_000);
                let wv = g.constant(wave.clone());
                let enc = g.encode_strided(wv, kernels, 8);
                let enc = g.relu(enc);
                let sq = g.mul(enc, enc);
                let loss = g.mean_all(sq);
                (g, loss)
            });
            assert!(err < 1e-3, "gradient error {err}");
        }
    }

    #[test]
    fn constraint_maps_keep_fc_and_bw_in_range() {
        // extreme raw values stay inside (0, fs/2) and (0, inf)
        let mut store = ParamStore::<f64>::new();
        let k = 5;
        let raw = Array2::from_shape_vec(
            (k, 1),
            vec![-50.0, -1.0, 0.0, 1.0, 50.0],
        )
        .unwrap();
        let fc_raw = store.add("fc_raw", raw.clone(), true);
        let bw_raw = store.add("bw_raw", raw, true);
        let mut g = Graph::new();
        let fv = store.bind(&mut g, fc_raw);
        let fc = fc_from_raw(&mut g, fv, 16_000);
        for &f in g.value(fc).iter() {
            assert!(f > 0.0 && f < 8000.0, "fc {f}");
        }
        let bv = store.bind(&mut g, bw_raw);
        let bw = g.softplus(bv);
        for &b in g.value(bw).iter() {
            assert!(b > 0.0, "bw {b}");
        }
    }
}
