//! Signal primitives shared by every other module: clips, resampling,
//! framing, spectrograms, convolution, SNR-controlled mixing.
//!
//! All internal audio is mono floating point. The pipeline default is
//! 16 kHz with a 4-second working length; see [`SAMPLE_RATE`] and
//! [`CLIP_SAMPLES`].

mod wav;

pub use wav::{read_wav, write_wav, write_wav_pcm16};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

/// Pipeline sample rate in Hz.
pub const SAMPLE_RATE: u32 = 16_000;
/// Working clip length: 4 seconds at [`SAMPLE_RATE`].
pub const CLIP_SAMPLES: usize = 64_000;
/// STFT analysis window (samples).
pub const STFT_WINDOW: usize = 1024;
/// STFT hop (samples); 10 ms at 16 kHz, shared with the pitch frame rate.
pub const STFT_HOP: usize = 160;

/// Mono sample sequence plus its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip<S: Scalar> {
    pub samples: Vec<S>,
    pub sample_rate: u32,
}

impl<S: Scalar> AudioClip<S> {
    pub fn new(samples: Vec<S>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(CoreError::invalid("sample_rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(CoreError::invalid("clip contains non-finite samples"));
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        AudioClip { samples: vec![S::zero(); len], sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> S {
        self.samples.iter().map(|&s| s * s).sum()
    }

    pub fn rms(&self) -> S {
        if self.samples.is_empty() {
            return S::zero();
        }
        (self.energy() / S::of_usize(self.samples.len())).sqrt()
    }

    pub fn peak(&self) -> S {
        self.samples.iter().fold(S::zero(), |m, &s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: S) -> Self {
        AudioClip {
            samples: self.samples.iter().map(|&s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Zero-pad or crop to exactly `len` samples.
    pub fn fit_length(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, S::zero());
        AudioClip { samples, sample_rate: self.sample_rate }
    }

    pub fn cast<T: Scalar>(&self) -> AudioClip<T> {
        AudioClip {
            samples: self.samples.iter().map(|&s| T::of_f64(s.as_f64())).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Magnitude spectrogram: `n_frames x n_bins`, Hann-windowed.
#[derive(Debug, Clone)]
pub struct Spectrogram<S: Scalar> {
    pub frames: Array2<S>,
    pub window_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl<S: Scalar> Spectrogram<S> {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.frames.ncols()
    }
}

/// Number of analysis frames for a clip of `len` samples.
pub fn n_frames(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / hop + 1
    }
}

fn hann<S: Scalar>(n: usize) -> Vec<S> {
    (0..n)
        .map(|i| {
            let x = std::f64::consts::TAU * i as f64 / n as f64;
            S::of_f64(0.5 * (1.0 - x.cos()))
        })
        .collect()
}

/// Band-limited resampling via windowed-sinc interpolation.
///
/// Output length is `round(len * target/original)`, so duration is preserved
/// within one sample. Downsampling lowers the sinc cutoff to the target
/// Nyquist.
pub fn resample<S: Scalar>(clip: &AudioClip<S>, target_rate: u32) -> Result<AudioClip<S>> {
    if target_rate == 0 {
        return Err(CoreError::invalid("target_rate must be positive"));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let out_len = (clip.len() as f64 * ratio).round() as usize;
    // cutoff relative to the input rate; < 1 when downsampling
    let cutoff = ratio.min(1.0);
    const ZERO_CROSSINGS: f64 = 32.0;
    let half_width = ZERO_CROSSINGS / cutoff;

    let x = &clip.samples;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 / ratio;
        let k_lo = ((t - half_width).ceil()).max(0.0) as usize;
        let k_hi = ((t + half_width).floor()).min((x.len().saturating_sub(1)) as f64) as usize;
        let mut acc = 0.0f64;
        for k in k_lo..=k_hi {
            let d = t - k as f64;
            let sinc = if d.abs() < 1e-12 {
                1.0
            } else {
                let a = std::f64::consts::PI * cutoff * d;
                a.sin() / a
            };
            // Hann taper over the truncated sinc support
            let w = 0.5 * (1.0 + (std::f64::consts::PI * d / half_width).cos());
            acc += x[k].as_f64() * cutoff * sinc * w;
        }
        out.push(S::of_f64(acc));
    }
    AudioClip::new(out, target_rate)
}

/// Hann-windowed magnitude STFT.
///
/// `n_frames = (len - window)/hop + 1`; bins `0..window/2 + 1`.
pub fn stft_magnitude<S: Scalar>(
    clip: &AudioClip<S>,
    window: usize,
    hop: usize,
) -> Result<Spectrogram<S>> {
    if window == 0 || hop == 0 || hop > window {
        return Err(CoreError::invalid("require 0 < hop <= window"));
    }
    if clip.len() < window {
        return Err(CoreError::invalid(format!(
            "clip of {} samples shorter than window {}",
            clip.len(),
            window
        )));
    }
    let nf = n_frames(clip.len(), window, hop);
    let n_bins = window / 2 + 1;
    let win = hann::<S>(window);

    let mut planner = FftPlanner::<S>::new();
    let fft = planner.plan_fft_forward(window);
    let mut frames = Array2::zeros((nf, n_bins));
    let mut buf: Vec<Complex<S>> = vec![Complex::new(S::zero(), S::zero()); window];
    for f in 0..nf {
        let start = f * hop;
        for i in 0..window {
            buf[i] = Complex::new(clip.samples[start + i] * win[i], S::zero());
        }
        fft.process(&mut buf);
        for b in 0..n_bins {
            frames[[f, b]] = buf[b].norm();
        }
    }
    Ok(Spectrogram { frames, window_size: window, hop, sample_rate: clip.sample_rate })
}

/// Scale `interference` so that the target-vs-interference SNR equals
/// `snr_db`, and return `target + scale * interference` plus the scale.
pub fn mix_at_snr<S: Scalar>(
    target: &AudioClip<S>,
    interference: &AudioClip<S>,
    snr_db: f64,
) -> Result<(AudioClip<S>, S)> {
    if target.sample_rate != interference.sample_rate {
        return Err(CoreError::invalid("sample rates differ"));
    }
    if target.len() != interference.len() {
        return Err(CoreError::invalid("lengths differ"));
    }
    let e_t = target.energy().as_f64();
    let e_i = interference.energy().as_f64();
    if e_t <= 0.0 {
        return Err(CoreError::invalid("target has zero energy"));
    }
    if e_i <= 0.0 {
        return Err(CoreError::invalid("interference has zero energy"));
    }
    // 10*log10(e_t / (scale^2 * e_i)) = snr_db
    let scale = (e_t / e_i).sqrt() * 10f64.powf(-snr_db / 20.0);
    let s = S::of_f64(scale);
    let samples = target
        .samples
        .iter()
        .zip(&interference.samples)
        .map(|(&t, &i)| t + s * i)
        .collect();
    Ok((AudioClip { samples, sample_rate: target.sample_rate }, s))
}

/// Full linear convolution truncated to `len(signal)` (same-start alignment):
/// `out[n] = sum_k kernel[k] * signal[n-k]`.
///
/// Large products go through FFT overlap; small kernels run directly.
pub fn convolve<S: Scalar>(signal: &AudioClip<S>, kernel: &[S]) -> Result<AudioClip<S>> {
    if kernel.is_empty() {
        return Err(CoreError::invalid("empty convolution kernel"));
    }
    let n = signal.len();
    let k = kernel.len();
    let out = if n.saturating_mul(k) <= 1 << 22 {
        let mut out = vec![S::zero(); n];
        for (j, &h) in kernel.iter().enumerate() {
            if h == S::zero() {
                continue;
            }
            for i in 0..n.saturating_sub(j) {
                out[i + j] = out[i + j] + h * signal.samples[i];
            }
        }
        out
    } else {
        fft_convolve_truncated(&signal.samples, kernel)
    };
    AudioClip::new(out, signal.sample_rate)
}

fn fft_convolve_truncated<S: Scalar>(x: &[S], h: &[S]) -> Vec<S> {
    let n = x.len();
    let full = n + h.len() - 1;
    let size = full.next_power_of_two();
    let mut planner = FftPlanner::<S>::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);

    let mut a: Vec<Complex<S>> = x
        .iter()
        .map(|&v| Complex::new(v, S::zero()))
        .chain(std::iter::repeat(Complex::new(S::zero(), S::zero())))
        .take(size)
        .collect();
    let mut b: Vec<Complex<S>> = h
        .iter()
        .map(|&v| Complex::new(v, S::zero()))
        .chain(std::iter::repeat(Complex::new(S::zero(), S::zero())))
        .take(size)
        .collect();
    fft.process(&mut a);
    fft.process(&mut b);
    let inv = S::one() / S::of_usize(size);
    for i in 0..size {
        a[i] = a[i] * b[i] * inv;
    }
    ifft.process(&mut a);
    a[..n].iter().map(|c| c.re).collect()
}
