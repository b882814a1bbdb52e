//! Mono WAV read/write: PCM 16-bit and 32-bit float.

use super::AudioClip;
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use std::path::Path;

/// Read a mono WAV file (PCM16 or 32-bit float). Multichannel files are
/// rejected.
pub fn read_wav<S: Scalar>(path: impl AsRef<Path>) -> Result<AudioClip<S>> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| CoreError::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(CoreError::Wav(format!(
            "{}: expected mono, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<S> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| S::of_f64(v as f64)))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| S::of_f64(v as f64 / 32768.0)))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(CoreError::Wav(format!(
                "{}: unsupported format {fmt:?}/{bits} bits (want PCM16 or float32 mono)",
                path.display()
            )))
        }
    };
    AudioClip::new(samples, spec.sample_rate)
}

/// Write a mono 32-bit float WAV.
pub fn write_wav<S: Scalar>(path: impl AsRef<Path>, clip: &AudioClip<S>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        writer.write_sample(s.as_f64() as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Write a mono PCM 16-bit WAV (values clamped to [-1, 1]).
pub fn write_wav_pcm16<S: Scalar>(path: impl AsRef<Path>, clip: &AudioClip<S>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        let v = (s.as_f64().clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}
