//! Supervised example synthesis: class-labeled harmonic sources, reverberant
//! mixtures with SNR control, direct-path targets, pitch ground truth, and
//! the JSONL manifest binding everything together.
//!
//! Sources are synthetic harmonic complexes so the full pipeline runs with
//! zero external data; the class id determines the f0 band, partial count,
//! spectral rolloff and envelope family. A file-backed origin supports real
//! clips when present.

use crate::audio::{convolve, mix_at_snr, n_frames, AudioClip, CLIP_SAMPLES, SAMPLE_RATE, STFT_HOP, STFT_WINDOW};
use crate::error::{CoreError, Result};
use crate::pitch::{PitchGrid, PitchSequence, PITCH_HOP_SECONDS};
use crate::rir::{default_max_order, direct_path_rir, measure_rt60, simulate_rir, Geometry, RoomSpec};
use crate::scalar::Scalar;
use crate::yin::{track_f0, YinConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Number of sound classes.
pub const N_CLASSES: usize = 27;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SourceOrigin {
    Synthetic { seed: u64 },
    File(PathBuf),
}

/// One class-labeled 4-second source event.
#[derive(Debug, Clone)]
pub struct SourceEvent<S: Scalar> {
    pub clip: AudioClip<S>,
    pub class_label: usize,
    pub origin: SourceOrigin,
}

/// What a class sounds like: f0 band plus timbre knobs.
#[derive(Debug, Clone, Copy)]
pub struct ClassProfile {
    pub f_lo: f64,
    pub f_hi: f64,
    pub n_partials: usize,
    pub rolloff: f64,
    pub noise_db: f64,
}

/// Deterministic class timbres: f0 bands tile [70, 1500] Hz geometrically,
/// so distinct classes have disjoint bands.
pub fn class_profile(class_label: usize) -> Result<ClassProfile> {
    if class_label >= N_CLASSES {
        return Err(CoreError::invalid(format!(
            "class {class_label} out of range (0..{N_CLASSES})"
        )));
    }
    let lo_total = 70.0f64;
    let hi_total = 1500.0f64;
    let ratio = (hi_total / lo_total).powf(1.0 / N_CLASSES as f64);
    let f_lo = lo_total * ratio.powi(class_label as i32);
    Ok(ClassProfile {
        f_lo,
        f_hi: f_lo * ratio,
        n_partials: 3 + class_label % 6,
        rolloff: 0.6 + 0.15 * (class_label % 5) as f64,
        noise_db: -55.0 + (class_label % 3) as f64 * 4.0,
    })
}

/// Synthesize one harmonic-complex event for a class. Deterministic for a
/// fixed generator state.
pub fn synth_source<S: Scalar>(class_label: usize, rng: &mut ChaCha8Rng) -> Result<SourceEvent<S>> {
    let profile = class_profile(class_label)?;
    let seed_tag = rng.gen::<u64>();
    let fs = SAMPLE_RATE as f64;
    let n = CLIP_SAMPLES;

    // keep the f0 trajectory inside the class band: base in the middle,
    // vibrato and drift bounded
    let band = profile.f_hi / profile.f_lo;
    let f0_base = profile.f_lo * band.powf(rng.gen_range(0.25..0.75));
    let vib_depth = rng.gen_range(0.004..0.015);
    let vib_rate = rng.gen_range(4.0..6.5);
    let vib_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let drift_octaves_per_s = rng.gen_range(-0.02..0.02);

    let onset = rng.gen_range(0.0..0.4);
    let offset = rng.gen_range(3.5..3.95);
    let attack = rng.gen_range(0.010..0.060);
    let release = rng.gen_range(0.050..0.200);

    let amps: Vec<f64> = (1..=profile.n_partials)
        .map(|k| (k as f64).powf(-profile.rolloff))
        .collect();

    let mut samples = vec![0.0f64; n];
    let mut phase = 0.0f64;
    for (i, slot) in samples.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let f0 = f0_base
            * (1.0 + vib_depth * (std::f64::consts::TAU * vib_rate * t + vib_phase).sin())
            * 2f64.powf(drift_octaves_per_s * t);
        phase += std::f64::consts::TAU * f0 / fs;
        let env = envelope(t, onset, offset, attack, release);
        if env > 0.0 {
            let mut v = 0.0;
            for (k, &a) in amps.iter().enumerate() {
                let harmonic = (k + 1) as f64;
                if f0 * harmonic < 7500.0 {
                    v += a * (harmonic * phase).sin();
                }
            }
            *slot = env * v;
        }
    }
    // normalize to a randomized peak, then add the noise floor
    let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-12);
    let gain = rng.gen_range(0.25..0.5) / peak;
    let rms = {
        let e: f64 = samples.iter().map(|v| (v * gain).powi(2)).sum();
        (e / n as f64).sqrt()
    };
    let noise_amp = rms * 10f64.powf(profile.noise_db / 20.0);
    let out: Vec<S> = samples
        .iter()
        .map(|&v| S::of_f64(v * gain + noise_amp * rng.gen_range(-1.0..1.0)))
        .collect();
    let clip = AudioClip::new(out, SAMPLE_RATE)?;
    debug_assert!(clip.rms().as_f64() > 1e-5, "synthesized event is silent");
    Ok(SourceEvent { clip, class_label, origin: SourceOrigin::Synthetic { seed: seed_tag } })
}

fn envelope(t: f64, onset: f64, offset: f64, attack: f64, release: f64) -> f64 {
    if t < onset || t > offset + release {
        0.0
    } else if t < onset + attack {
        (t - onset) / attack
    } else if t <= offset {
        1.0
    } else {
        1.0 - (t - offset) / release
    }
}

/// YIN labels on a 10 ms grid, quantized to the pitch grid.
pub fn f0_oracle<S: Scalar>(clip: &AudioClip<S>, grid: &PitchGrid) -> Result<PitchSequence> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(CoreError::invalid(format!(
            "f0 oracle expects {SAMPLE_RATE} Hz, got {}",
            clip.sample_rate
        )));
    }
    let f0 = track_f0(clip, &YinConfig::default());
    let bins = f0.iter().map(|&f| grid.hz_to_bin(f)).collect::<Result<Vec<_>>>()?;
    PitchSequence::new(bins, PITCH_HOP_SECONDS)
}

/// Scene description used by [`build_mixture`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub room: RoomSpec,
    pub geometries: Vec<Geometry>,
    /// Image order override; `None` uses [`default_max_order`].
    pub max_order: Option<usize>,
}

/// Provenance carried with every synthesized sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureMeta {
    pub scene: Scene,
    pub snr_db: f64,
    pub noise_snr_db: f64,
    /// Scale applied to the summed interference by the SNR contract.
    pub interference_scale: f64,
    pub classes: Vec<usize>,
    pub seed: u64,
    pub measured_rt60: Option<f64>,
    pub direct_delay: usize,
}

/// One supervised example.
#[derive(Debug, Clone)]
pub struct MixtureSample<S: Scalar> {
    pub mixture: AudioClip<S>,
    pub target_direct: AudioClip<S>,
    pub target_class: usize,
    pub pitch_ref: PitchSequence,
    pub meta: MixtureMeta,
}

/// Render sources through a scene: reverberant images, the target's
/// direct-path signal, and the measured RT60 of the target's RIR.
pub fn render_scene<S: Scalar>(
    sources: &[SourceEvent<S>],
    scene: &Scene,
) -> Result<(Vec<AudioClip<S>>, AudioClip<S>, Option<f64>, usize)> {
    if sources.is_empty() {
        return Err(CoreError::invalid("no sources"));
    }
    if scene.geometries.len() != sources.len() {
        return Err(CoreError::invalid(format!(
            "{} geometries for {} sources",
            scene.geometries.len(),
            sources.len()
        )));
    }
    let max_order = scene.max_order.unwrap_or_else(|| default_max_order(&scene.room));
    let mut reverberant = Vec::with_capacity(sources.len());
    let mut measured = None;
    for (i, source) in sources.iter().enumerate() {
        let rir = simulate_rir::<S>(&scene.room, &scene.geometries[i], SAMPLE_RATE, max_order)?;
        if i == 0 {
            measured = measure_rt60(&rir).ok();
        }
        reverberant.push(convolve(&source.clip, &rir.taps)?);
    }
    let direct = direct_path_rir::<S>(&scene.geometries[0], SAMPLE_RATE);
    let target_direct = convolve(&sources[0].clip, &direct.taps)?;
    Ok((reverberant, target_direct, measured, direct.direct_delay))
}

/// Build one supervised example. `sources[0]` is the target; classes must be
/// pairwise distinct. `noise_snr_db = f64::INFINITY` disables the noise
/// floor.
pub fn build_mixture<S: Scalar>(
    sources: &[SourceEvent<S>],
    scene: &Scene,
    snr_db: f64,
    noise_snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MixtureSample<S>> {
    if sources.is_empty() {
        return Err(CoreError::invalid("need at least one source"));
    }
    for (i, a) in sources.iter().enumerate() {
        for b in &sources[i + 1..] {
            if a.class_label == b.class_label {
                return Err(CoreError::invalid(format!(
                    "duplicate class {} in one mixture",
                    a.class_label
                )));
            }
        }
    }
    let seed_tag = rng.gen::<u64>();
    let (reverberant, target_direct, measured_rt60, direct_delay) = render_scene(sources, scene)?;

    let target_reverb = &reverberant[0];
    let (mut mixture, interference_scale) = if reverberant.len() > 1 {
        let mut interference = AudioClip::zeros(target_reverb.len(), SAMPLE_RATE);
        for r in &reverberant[1..] {
            for (acc, &v) in interference.samples.iter_mut().zip(&r.samples) {
                *acc += v;
            }
        }
        let (mix, scale) = mix_at_snr(target_reverb, &interference, snr_db)?;
        (mix, scale.as_f64())
    } else {
        (target_reverb.clone(), 1.0)
    };

    if noise_snr_db.is_finite() {
        let core_energy = mixture.energy().as_f64();
        let raw: Vec<f64> = (0..mixture.len()).map(|_| gaussian(rng)).collect();
        let raw_energy: f64 = raw.iter().map(|v| v * v).sum();
        let gain = (core_energy / raw_energy).sqrt() * 10f64.powf(-noise_snr_db / 20.0);
        for (m, v) in mixture.samples.iter_mut().zip(&raw) {
            *m += S::of_f64(v * gain);
        }
    }

    let grid = PitchGrid::default();
    let pitch_ref = f0_oracle(&target_direct, &grid)?;
    debug_assert_eq!(pitch_ref.len(), n_frames(target_direct.len(), STFT_WINDOW, STFT_HOP));

    Ok(MixtureSample {
        mixture,
        target_direct,
        target_class: sources[0].class_label,
        pitch_ref,
        meta: MixtureMeta {
            scene: scene.clone(),
            snr_db,
            noise_snr_db,
            interference_scale,
            classes: sources.iter().map(|s| s.class_label).collect(),
            seed: seed_tag,
            measured_rt60,
            direct_delay,
        },
    })
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Dataset recipe for [`synth_sample`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForgeConfig {
    pub seed: u64,
    pub n_sources: usize,
    pub snr_range: (f64, f64),
    pub noise_snr_db: f64,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig { seed: 17, n_sources: 2, snr_range: (-5.0, 5.0), noise_snr_db: 40.0 }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 || self.n_sources > 4 {
            return Err(CoreError::invalid("n_sources must be in 1..=4"));
        }
        if self.n_sources > N_CLASSES {
            return Err(CoreError::invalid("more sources than classes"));
        }
        Ok(())
    }
}

/// Deterministic per-index generator: the stream id isolates samples so
/// batches can be synthesized in parallel yet bit-identically.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Synthesize supervised example `index` of a virtual dataset.
pub fn synth_sample<S: Scalar>(config: &ForgeConfig, index: u64) -> Result<MixtureSample<S>> {
    config.validate()?;
    let mut rng = sample_rng(config.seed, index);

    // distinct classes
    let mut classes: Vec<usize> = Vec::with_capacity(config.n_sources);
    while classes.len() < config.n_sources {
        let c = rng.gen_range(0..N_CLASSES);
        if !classes.contains(&c) {
            classes.push(c);
        }
    }
    let sources: Vec<SourceEvent<S>> = classes
        .iter()
        .map(|&c| synth_source(c, &mut rng))
        .collect::<Result<_>>()?;
    let (room, geometries) = crate::rir::sample_scene(&mut rng, config.n_sources)?;
    let scene = Scene { room, geometries, max_order: None };
    let snr_db = rng.gen_range(config.snr_range.0..=config.snr_range.1);
    build_mixture(&sources, &scene, snr_db, config.noise_snr_db, &mut rng)
}

// ---- manifest ----

/// One line of the dataset manifest. Paths are relative to the manifest
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub mixture_wav: String,
    pub target_wav: String,
    pub pitch_csv: String,
    pub target_class: usize,
    pub interferer_classes: Vec<usize>,
    pub snr_db: f64,
    pub noise_snr_db: f64,
    pub seed: u64,
    pub room: RoomSpec,
    pub geometries: Vec<Geometry>,
    pub measured_rt60: Option<f64>,
    pub direct_delay: usize,
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for entry in entries {
        serde_json::to_writer(&mut f, entry)?;
        writeln!(f)?;
    }
    Ok(())
}

/// Read a JSONL manifest, checking every referenced file exists. Errors
/// carry the offending line number and file name.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    use std::io::BufRead;
    let path = path.as_ref();
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| CoreError::Manifest { line: lineno, msg: e.to_string() })?;
        for rel in [&entry.mixture_wav, &entry.target_wav, &entry.pitch_csv] {
            let p = dir.join(rel);
            if !p.exists() {
                return Err(CoreError::Manifest {
                    line: lineno,
                    msg: format!("referenced file missing: {}", p.display()),
                });
            }
        }
        entries.push(entry);
    }
    Ok(entries)
}
