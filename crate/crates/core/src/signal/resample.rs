use std::f64::consts::PI;

use super::AudioClip;
use crate::error::{Error, Result};

const TAPS: usize = 64;
const KAISER_BETA: f64 = 8.6;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling with a 64-tap Kaiser-windowed sinc kernel.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 || clip.sample_rate == 0 {
        return Err(Error::invalid("sample rates must be positive"));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let n_out = (clip.len() as u64 * target_rate as u64 / clip.sample_rate as u64) as usize;
    let cutoff = ratio.min(1.0);
    let half = (TAPS / 2) as f64;
    let norm = bessel_i0(KAISER_BETA);
    let src = &clip.samples;
    let out = (0..n_out)
        .map(|n| {
            let pos = n as f64 / ratio;
            let base = pos.floor() as isize;
            let mut acc = 0.0;
            for j in (base - TAPS as isize / 2 + 1)..=(base + TAPS as isize / 2) {
                if j < 0 || j as usize >= src.len() {
                    continue;
                }
                let d = pos - j as f64;
                let r = d / half;
                if r.abs() > 1.0 {
                    continue;
                }
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm;
                acc += src[j as usize] as f64 * cutoff * sinc(cutoff * d) * window;
            }
            acc.clamp(-1.0, 1.0) as f32
        })
        .collect();
    Ok(AudioClip::new(out, target_rate))
}

/// Resample to `target_rate` and cut non-overlapping segments of `segment_s`
/// seconds. A trailing remainder shorter than one segment is dropped.
pub fn resample_and_crop(
    clip: &AudioClip,
    target_rate: u32,
    segment_s: f64,
) -> Result<Vec<AudioClip>> {
    if !(segment_s > 0.0) {
        return Err(Error::invalid("segment length must be positive"));
    }
    let resampled = resample(clip, target_rate)?;
    let seg = (target_rate as f64 * segment_s).round() as usize;
    if seg == 0 {
        return Err(Error::invalid("segment shorter than one sample"));
    }
    Ok(resampled
        .samples
        .chunks_exact(seg)
        .map(|c| AudioClip::new(c.to_vec(), target_rate))
        .collect())
}
