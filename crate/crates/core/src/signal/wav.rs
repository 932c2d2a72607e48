use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use log::warn;

use super::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Full-scale divisor for 16-bit PCM.
pub const PCM16_SCALE: f64 = 32768.0;

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        hound::Error::FormatError(msg) => Error::Format(format!("{}: {msg}", path.display())),
        hound::Error::Unsupported => {
            Error::Unsupported(format!("{}: unsupported WAV encoding", path.display()))
        }
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads a RIFF/WAVE file holding 16-bit PCM or 32-bit float samples.
///
/// Multichannel files keep channel 0 only. PCM values are divided by 32768.
pub fn read_wav<T: Real>(path: impl AsRef<Path>) -> Result<Waveform<T>> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    if channels > 1 {
        warn!(
            "{}: {channels} channels, keeping channel 0",
            path.display()
        );
    }
    let samples: Vec<T> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .step_by(channels)
            .map(|s| {
                s.map(|v| T::lit(v as f64 / PCM16_SCALE))
                    .map_err(|e| map_hound(path, e))
            })
            .collect::<Result<_>>()?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(|v| T::lit(v as f64)).map_err(|e| map_hound(path, e)))
            .collect::<Result<_>>()?,
        (fmt, bits) => {
            return Err(Error::Unsupported(format!(
                "{}: {bits}-bit {fmt:?} samples (expected 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Quantizes one amplitude to 16-bit PCM: round half away from zero, saturate.
pub(crate) fn quantize_pcm16(x: f64) -> i16 {
    let scaled = (x * PCM16_SCALE).round();
    scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Writes a mono 16-bit PCM WAV file.
pub fn write_wav<T: Real>(path: impl AsRef<Path>, w: &Waveform<T>) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    let mut clipped = 0usize;
    for &s in w.samples() {
        let x = s.as_f64();
        if x.abs() > 1.0 {
            clipped += 1;
        }
        writer
            .write_sample(quantize_pcm16(x))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))?;
    if clipped > 0 {
        warn!("{}: {clipped} samples saturated", path.display());
    }
    Ok(())
}
