use ndarray::{Array2, Axis};

use super::{a_weight_gains, MagnitudeSpectrogram};
use crate::error::{Error, Result};

/// Additive floor inside the log, per sub-band.
pub const LOUDNESS_EPS: f64 = 1e-5;
/// Temporal median-filter length in frames.
pub const MEDIAN_KERNEL: usize = 5;

/// Hierarchical loudness in dB: level `l` is a `2^l x frames` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LoudnessHierarchy {
    pub levels: Vec<Array2<f64>>,
}

impl LoudnessHierarchy {
    pub fn l_max(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn n_frames(&self) -> usize {
        self.levels[0].ncols()
    }
}

/// Linear A-weighted magnitude sums over contiguous equal-width bin ranges,
/// one matrix per level (before log and smoothing).
pub fn band_sums(spec: &MagnitudeSpectrogram, l_max: usize) -> Result<Vec<Array2<f64>>> {
    let f = spec.values.nrows();
    let parts = 1usize
        .checked_shl(l_max as u32)
        .filter(|&p| p <= f && f % p == 0)
        .ok_or_else(|| {
            Error::InvalidConfig(format!("{f} bins not divisible by 2^{l_max}"))
        })?;
    debug_assert!(parts >= 1);
    let gains = a_weight_gains(&spec.bin_freqs);
    let weighted = &spec.values * &ndarray::Array1::from(gains).insert_axis(Axis(1));
    Ok((0..=l_max)
        .map(|l| {
            let bands = 1usize << l;
            let width = f / bands;
            let mut out = Array2::zeros((bands, weighted.ncols()));
            for i in 0..bands {
                let block = weighted.slice(ndarray::s![i * width..(i + 1) * width, ..]);
                out.row_mut(i).assign(&block.sum_axis(Axis(0)));
            }
            out
        })
        .collect())
}

/// Median along time with replicated edges. Kernel must be odd.
pub fn median_filter_rows(x: &Array2<f64>, kernel: usize) -> Array2<f64> {
    if kernel <= 1 {
        return x.clone();
    }
    let half = kernel / 2;
    let n = x.ncols();
    let mut out = Array2::zeros(x.raw_dim());
    let mut window = vec![0.0; kernel];
    for (r, row) in x.outer_iter().enumerate() {
        for t in 0..n {
            for (j, w) in window.iter_mut().enumerate() {
                let idx = (t + j).saturating_sub(half).min(n - 1);
                *w = row[idx];
            }
            window.sort_by(|a, b| a.total_cmp(b));
            out[[r, t]] = window[half];
        }
    }
    out
}

/// dB loudness per sub-band: `20 log10(sum + eps)`, then a temporal median
/// filter of `median_kernel` frames (1 disables smoothing).
pub fn loudness_hierarchy_with(
    spec: &MagnitudeSpectrogram,
    l_max: usize,
    median_kernel: usize,
) -> Result<LoudnessHierarchy> {
    let sums = band_sums(spec, l_max)?;
    Ok(LoudnessHierarchy {
        levels: sums
            .into_iter()
            .map(|s| {
                let db = s.mapv(|v| 20.0 * (v + LOUDNESS_EPS).log10());
                median_filter_rows(&db, median_kernel)
            })
            .collect(),
    })
}

pub fn loudness_hierarchy(spec: &MagnitudeSpectrogram, l_max: usize) -> Result<LoudnessHierarchy> {
    loudness_hierarchy_with(spec, l_max, MEDIAN_KERNEL)
}
