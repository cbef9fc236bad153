//! Hierarchical A-weighted loudness features and their level-of-detail masks.
//!
//! Channel layout of [`AcousticFeatures`]: for each level `l = 0..=L`, the
//! `2^l` masked loudness rows followed by the `2^l` indicator rows.

mod aweight;
mod dump;
mod hierarchy;
mod stft;

use ndarray::{s, Array2};

pub use aweight::a_weight_gains;
pub use dump::{read_features_bin, write_features_bin, write_features_json, FeatureDump};
pub use hierarchy::{
    band_sums, loudness_hierarchy, loudness_hierarchy_with, median_filter_rows,
    LoudnessHierarchy, LOUDNESS_EPS, MEDIAN_KERNEL,
};
pub use stft::{hann, Stft};

use crate::error::{Error, Result};
use crate::signal::{AudioClip, SAMPLE_RATE};

pub const N_FFT: usize = 1024;
pub const HOP: usize = 256;
/// Frequency bins kept (Nyquist dropped).
pub const N_BINS: usize = N_FFT / 2;
/// Deepest hierarchy level used by the model.
pub const L_MAX: usize = 3;

/// Magnitude spectrogram, `F x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub values: Array2<f64>,
    pub bin_freqs: Vec<f64>,
    pub hop_s: f64,
}

/// 1024-point Hann STFT with hop 256, magnitude only, Nyquist bin dropped.
pub fn stft_magnitude(clip: &AudioClip) -> Result<MagnitudeSpectrogram> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::invalid(format!(
            "expected {SAMPLE_RATE} Hz audio, got {} Hz",
            clip.sample_rate
        )));
    }
    if clip.len() < HOP {
        return Err(Error::invalid("clip shorter than one analysis hop"));
    }
    let complex = Stft::new(N_FFT, HOP).forward(&clip.samples);
    let values = complex.slice(s![..N_BINS, ..]).mapv(|c| c.norm());
    let bin_hz = clip.sample_rate as f64 / N_FFT as f64;
    Ok(MagnitudeSpectrogram {
        values,
        bin_freqs: (0..N_BINS).map(|b| b as f64 * bin_hz).collect(),
        hop_s: HOP as f64 / clip.sample_rate as f64,
    })
}

/// Number of channels in the feature tensor for a given maximum level.
pub fn n_feature_channels(l_max: usize) -> usize {
    2 * ((1 << (l_max + 1)) - 1)
}

/// First channel of level `l` (its value rows; indicators follow).
pub fn level_offset(l: usize) -> usize {
    2 * ((1 << l) - 1)
}

/// Per-level 0/1 masks, `2^l x frames` each.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailMask {
    pub levels: Vec<Array2<f64>>,
}

impl DetailMask {
    /// Levels `<= level` fully on, deeper levels off.
    pub fn pure(level: usize, l_max: usize, frames: usize) -> Self {
        Self {
            levels: (0..=l_max)
                .map(|l| Array2::from_elem((1 << l, frames), if l <= level { 1.0 } else { 0.0 }))
                .collect(),
        }
    }

    /// Everything masked: the null acoustic condition.
    pub fn empty(l_max: usize, frames: usize) -> Self {
        Self {
            levels: (0..=l_max).map(|l| Array2::zeros((1 << l, frames))).collect(),
        }
    }

    pub fn l_max(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn n_frames(&self) -> usize {
        self.levels[0].ncols()
    }
}

/// The masked feature tensor fed to the model, `channels x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticFeatures {
    pub channels: Array2<f64>,
    pub l_max: usize,
}

impl AcousticFeatures {
    pub fn null(l_max: usize, frames: usize) -> Self {
        Self {
            channels: Array2::zeros((n_feature_channels(l_max), frames)),
            l_max,
        }
    }

    pub fn null_like(&self) -> Self {
        Self::null(self.l_max, self.n_frames())
    }

    pub fn n_frames(&self) -> usize {
        self.channels.ncols()
    }

    pub fn is_null(&self) -> bool {
        self.channels.iter().all(|&v| v == 0.0)
    }

    /// True for loudness rows, false for indicator rows.
    pub fn value_rows(l_max: usize) -> Vec<bool> {
        (0..=l_max)
            .flat_map(|l| {
                let n = 1 << l;
                std::iter::repeat(true).take(n).chain(std::iter::repeat(false).take(n))
            })
            .collect()
    }

    /// Zero every channel at the flagged frames.
    pub fn zero_frames(&mut self, masked: &[bool]) {
        for (t, &m) in masked.iter().enumerate() {
            if m {
                self.channels.column_mut(t).fill(0.0);
            }
        }
    }

    /// Highest level whose indicator is on anywhere, if any.
    pub fn active_level(&self) -> Option<usize> {
        (0..=self.l_max).rev().find(|&l| {
            let ind = level_offset(l) + (1 << l);
            self.channels.row(ind).iter().any(|&v| v != 0.0)
        })
    }
}

/// Interleave masked loudness and indicators level by level.
pub fn assemble_features(h: &LoudnessHierarchy, mask: &DetailMask) -> Result<AcousticFeatures> {
    if h.levels.len() != mask.levels.len() {
        return Err(Error::invalid(format!(
            "hierarchy has {} levels, mask has {}",
            h.levels.len(),
            mask.levels.len()
        )));
    }
    let l_max = h.l_max();
    let frames = h.n_frames();
    let mut channels = Array2::zeros((n_feature_channels(l_max), frames));
    for (l, (a, m)) in h.levels.iter().zip(&mask.levels).enumerate() {
        if a.dim() != m.dim() || a.dim() != (1 << l, frames) {
            return Err(Error::invalid(format!(
                "level {l}: loudness {:?} vs mask {:?}",
                a.dim(),
                m.dim()
            )));
        }
        let off = level_offset(l);
        let n = 1 << l;
        channels.slice_mut(s![off..off + n, ..]).assign(&(a * m));
        channels.slice_mut(s![off + n..off + 2 * n, ..]).assign(m);
    }
    Ok(AcousticFeatures { channels, l_max })
}

/// Full hierarchy of a clip at the canonical analysis settings.
pub fn hierarchy_of(clip: &AudioClip, l_max: usize) -> Result<LoudnessHierarchy> {
    loudness_hierarchy(&stft_magnitude(clip)?, l_max)
}

/// Features of `clip` with the pure detail mask at `level`.
pub fn extract(clip: &AudioClip, level: usize, l_max: usize) -> Result<AcousticFeatures> {
    if level > l_max {
        return Err(Error::invalid(format!("level {level} exceeds L_max {l_max}")));
    }
    let h = hierarchy_of(clip, l_max)?;
    assemble_features(&h, &DetailMask::pure(level, l_max, h.n_frames()))
}
