//! Dataset synthesis to disk and manifest-backed loading for training.

use ndarray::Array2;
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use tsepi_core::audio::{read_wav, stft_magnitude, write_wav, AudioClip, STFT_HOP, STFT_WINDOW};
use tsepi_core::forge::{synth_sample, ForgeConfig, ManifestEntry, MixtureSample};
use tsepi_core::pitch::{one_hot, read_pitch_csv, write_pitch_csv, PitchGrid, PitchSequence, PITCH_HOP_SECONDS};
use tsepi_core::pitchnet::log_magnitude_input;
use tsepi_core::rir::{default_max_order, simulate_rir};
use tsepi_core::{CoreError, Result};

/// Synthesize `count` supervised examples into `dir`: WAVs, pitch CSVs and
/// the JSONL manifest. Synthesis runs in parallel; per-index generator
/// streams keep the output bit-identical regardless of worker count.
pub fn synth_dataset(
    dir: &Path,
    count: usize,
    forge: &ForgeConfig,
    dump_rirs: bool,
) -> Result<PathBuf> {
    forge.validate()?;
    for sub in ["mixture", "target", "pitch"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    if dump_rirs {
        std::fs::create_dir_all(dir.join("rir"))?;
    }

    let samples: Vec<(usize, MixtureSample<f64>)> = (0..count)
        .into_par_iter()
        .map(|i| synth_sample::<f64>(forge, i as u64).map(|s| (i, s)))
        .collect::<Result<_>>()?;

    let grid = PitchGrid::default();
    let mut entries = Vec::with_capacity(count);
    for (i, sample) in &samples {
        let mixture_wav = format!("mixture/{i:05}.wav");
        let target_wav = format!("target/{i:05}.wav");
        let pitch_csv = format!("pitch/{i:05}.csv");
        write_wav(dir.join(&mixture_wav), &sample.mixture)?;
        write_wav(dir.join(&target_wav), &sample.target_direct)?;
        write_pitch_csv(dir.join(&pitch_csv), &sample.pitch_ref, &grid)?;
        if dump_rirs {
            dump_scene_rirs(dir, *i, sample)?;
        }
        entries.push(ManifestEntry {
            id: *i,
            mixture_wav,
            target_wav,
            pitch_csv,
            target_class: sample.target_class,
            interferer_classes: sample.meta.classes[1..].to_vec(),
            snr_db: sample.meta.snr_db,
            noise_snr_db: sample.meta.noise_snr_db,
            seed: forge.seed,
            room: sample.meta.scene.room,
            geometries: sample.meta.scene.geometries.clone(),
            measured_rt60: sample.meta.measured_rt60,
            direct_delay: sample.meta.direct_delay,
        });
    }
    let manifest = dir.join("manifest.jsonl");
    tsepi_core::forge::write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

/// Per-scene RIR cache: 32-bit float WAV plus a JSON sidecar with the room,
/// geometry, measured RT60 and direct delay.
fn dump_scene_rirs(dir: &Path, id: usize, sample: &MixtureSample<f64>) -> Result<()> {
    let scene = &sample.meta.scene;
    let max_order = scene.max_order.unwrap_or_else(|| default_max_order(&scene.room));
    for (s, geo) in scene.geometries.iter().enumerate() {
        let rir = simulate_rir::<f64>(&scene.room, geo, 16_000, max_order)?;
        let wav = dir.join(format!("rir/{id:05}_src{s}.wav"));
        write_wav(&wav, &AudioClip::new(rir.taps.clone(), 16_000)?)?;
        let sidecar = serde_json::json!({
            "room": scene.room,
            "geometry": geo,
            "measured_rt60": tsepi_core::rir::measure_rt60(&rir).ok(),
            "direct_delay": rir.direct_delay,
            "truncated": rir.truncated,
        });
        std::fs::write(
            dir.join(format!("rir/{id:05}_src{s}.json")),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
    }
    Ok(())
}

/// One supervised example loaded from disk.
pub struct LoadedExample {
    pub id: usize,
    pub mixture: AudioClip<f32>,
    pub target: AudioClip<f32>,
    pub class_id: usize,
    pub pitch: PitchSequence,
    /// Log-magnitude STFT, `bins x frames`.
    pub spec_input: Array2<f32>,
    /// Pitch one-hot at the 10 ms rate, `frames x classes`.
    pub pitch_onehot: Array2<f32>,
}

/// Manifest-backed dataset; examples load lazily per index.
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub grid: PitchGrid,
}

impl Dataset {
    pub fn open(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let entries = tsepi_core::forge::read_manifest(manifest)?;
        if entries.is_empty() {
            return Err(CoreError::Manifest { line: 0, msg: "manifest is empty".into() });
        }
        Ok(Dataset {
            root: manifest.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
            entries,
            grid: PitchGrid::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(&self, index: usize) -> Result<LoadedExample> {
        let entry = &self.entries[index];
        let mixture: AudioClip<f32> = read_wav(self.root.join(&entry.mixture_wav))?;
        let target: AudioClip<f32> = read_wav(self.root.join(&entry.target_wav))?;
        let pitch = read_pitch_csv(self.root.join(&entry.pitch_csv), PITCH_HOP_SECONDS)?;
        let spec = stft_magnitude(&mixture, STFT_WINDOW, STFT_HOP)?;
        if pitch.len() != spec.n_frames() {
            return Err(CoreError::invalid(format!(
                "sample {}: pitch frames {} vs spectrogram frames {}",
                entry.id,
                pitch.len(),
                spec.n_frames()
            )));
        }
        let spec_input = log_magnitude_input(&spec);
        let pitch_onehot = one_hot(&pitch, &self.grid)?.mapv(|v| v as f32);
        Ok(LoadedExample {
            id: entry.id,
            mixture,
            target,
            class_id: entry.target_class,
            pitch,
            spec_input,
            pitch_onehot,
        })
    }
}

/// Deterministic epoch ordering: a seeded permutation per epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}
