//! Log-mel latent space: encoding clips to standardized log-mel frames and
//! decoding generated frames back to audio with Griffin-Lim.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Stft;
use crate::rng;
use crate::signal::{AudioClip, SAMPLE_RATE};

pub const LATENT_FFT: usize = 1024;
pub const LATENT_HOP: usize = 512;
pub const N_MELS: usize = 40;
pub const LATENT_FPS: f64 = SAMPLE_RATE as f64 / LATENT_HOP as f64;
pub const GRIFFIN_LIM_ITERS: usize = 32;
const MEL_FLOOR: f64 = 1e-5;

/// A `channels x frames` latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClip {
    pub values: Array2<f64>,
    pub frame_rate: f64,
}

impl LatentClip {
    pub fn new(values: Array2<f64>) -> Self {
        Self {
            values,
            frame_rate: LATENT_FPS,
        }
    }

    pub fn zeros(channels: usize, frames: usize) -> Self {
        Self::new(Array2::zeros((channels, frames)))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-mel filterbank over `n_fft / 2 + 1` bins, peak gain 1.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    Array2::from_shape_fn((n_mels, n_bins), |(m, b)| {
        let f = b as f64 * sample_rate / n_fft as f64;
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= mid {
            (f - lo) / (mid - lo)
        } else {
            (hi - f) / (hi - mid)
        }
    })
}

/// Natural-log mel magnitudes, `N_MELS x floor(n / 512)`.
pub fn log_mel(clip: &AudioClip) -> Result<Array2<f64>> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::invalid("log-mel expects 16 kHz audio"));
    }
    if clip.len() < LATENT_HOP {
        return Err(Error::invalid("clip shorter than one latent frame"));
    }
    let spec = Stft::new(LATENT_FFT, LATENT_HOP).forward(&clip.samples);
    let mag = spec.mapv(|c| c.norm());
    let bank = mel_filterbank(N_MELS, LATENT_FFT, SAMPLE_RATE as f64);
    Ok(bank.dot(&mag).mapv(|v| (v + MEL_FLOOR).ln()))
}

/// Per-channel standardization statistics of log-mel frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn from_log_mels<'a>(mels: impl IntoIterator<Item = &'a Array2<f64>>) -> Result<Self> {
        let mut sum: Option<Array1<f64>> = None;
        let mut sq: Option<Array1<f64>> = None;
        let mut n = 0usize;
        for m in mels {
            let s = m.sum_axis(Axis(1));
            let q = m.mapv(|v| v * v).sum_axis(Axis(1));
            sum = Some(sum.map_or(s.clone(), |a| a + &s));
            sq = Some(sq.map_or(q.clone(), |a| a + &q));
            n += m.ncols();
        }
        let (sum, sq) = sum.zip(sq).ok_or_else(|| Error::invalid("no clips for latent statistics"))?;
        let mean = &sum / n as f64;
        let var = &sq / n as f64 - &mean * &mean;
        Ok(Self {
            mean: mean.to_vec(),
            std: var.mapv(|v| v.max(1e-6).sqrt()).to_vec(),
        })
    }

    pub fn standardize(&self, log_mel: &Array2<f64>) -> LatentClip {
        let mut z = log_mel.clone();
        for (mut row, (m, s)) in z.outer_iter_mut().zip(self.mean.iter().zip(&self.std)) {
            row.mapv_inplace(|v| (v - m) / s);
        }
        LatentClip::new(z)
    }

    pub fn destandardize(&self, latent: &LatentClip) -> Array2<f64> {
        let mut x = latent.values.clone();
        for (mut row, (m, s)) in x.outer_iter_mut().zip(self.mean.iter().zip(&self.std)) {
            row.mapv_inplace(|v| v * s + m);
        }
        x
    }

    pub fn encode(&self, clip: &AudioClip) -> Result<LatentClip> {
        Ok(self.standardize(&log_mel(clip)?))
    }
}

/// Approximate linear magnitudes from mel magnitudes: each bin takes the
/// filter-weighted average of the per-band mean levels.
fn mel_to_linear(mel: &Array2<f64>, bank: &Array2<f64>) -> Array2<f64> {
    let area = bank.sum_axis(Axis(1));
    let per_band = mel / &area.mapv(|a| a.max(1e-12)).insert_axis(Axis(1));
    let num = bank.t().dot(&per_band);
    let den = bank.sum_axis(Axis(0));
    let mut out = num;
    for (mut row, &d) in out.outer_iter_mut().zip(den.iter()) {
        if d > 1e-12 {
            row.mapv_inplace(|v| v / d);
        } else {
            row.fill(0.0);
        }
    }
    out
}

/// Griffin-Lim phase reconstruction from a linear magnitude spectrogram.
/// The initial phase comes from a fixed seed, so the output is deterministic.
pub fn griffin_lim(magnitude: &Array2<f64>, stft: &Stft, iters: usize) -> Vec<f64> {
    let mut r = rng::stream(0, "griffin-lim");
    let mut spec = magnitude.mapv(|m| Complex::from_polar(m, r.gen_range(0.0..2.0 * PI)));
    for _ in 0..iters {
        let signal = stft.inverse(&spec);
        let rebuilt = stft.forward(&signal);
        ndarray::Zip::from(&mut spec)
            .and(&rebuilt)
            .and(magnitude)
            .for_each(|s, r, &m| {
                let n = r.norm();
                *s = if n > 1e-12 { r * (m / n) } else { Complex::new(m, 0.0) };
            });
    }
    stft.inverse(&spec)
}

/// Decode a standardized latent to audio.
pub fn decode(latent: &LatentClip, stats: &LatentStats, iters: usize) -> AudioClip {
    let log_mel = stats.destandardize(latent);
    let mel = log_mel.mapv(|v| (v.exp() - MEL_FLOOR).max(0.0));
    let bank = mel_filterbank(mel.nrows(), LATENT_FFT, SAMPLE_RATE as f64);
    let linear = mel_to_linear(&mel, &bank);
    let stft = Stft::new(LATENT_FFT, LATENT_HOP);
    let samples = griffin_lim(&linear, &stft, iters)
        .into_iter()
        .map(|v| v.clamp(-1.0, 1.0) as f32)
        .collect();
    AudioClip::new(samples, SAMPLE_RATE)
}
