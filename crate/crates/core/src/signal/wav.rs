use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Error, Result};

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::Format(msg.to_string()),
        hound::Error::Unsupported => Error::Unsupported("unsupported WAV encoding".into()),
        hound::Error::InvalidSampleFormat => {
            Error::Unsupported("sample format does not match bit depth".into())
        }
        other => Error::Format(other.to_string()),
    }
}

/// Read a PCM WAV file (8/16/24/32-bit integer or 32-bit float), averaging
/// channels down to mono. Integer samples are scaled by `2^(bits-1)`.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format("zero channels".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        (fmt, bits) => {
            return Err(Error::Unsupported(format!("{fmt:?} with {bits} bits")));
        }
    };
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| {
            let mean = frame.iter().map(|&s| s as f64).sum::<f64>() / channels as f64;
            (mean as f32).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Write a mono 16-bit PCM WAV file.
pub fn save_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &clip.samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}
