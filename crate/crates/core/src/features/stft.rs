use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::{num_complex::Complex, Fft, FftPlanner};

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Centered short-time Fourier transform with zero padding.
///
/// Frame `k` is centered on sample `k * hop`; a signal of `n` samples yields
/// `floor(n / hop)` frames.
pub struct Stft {
    pub n_fft: usize,
    pub hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples / self.hop
    }

    /// Complex spectrum, `(n_fft / 2 + 1) x frames`.
    pub fn forward<S: Copy + Into<f64>>(&self, samples: &[S]) -> Array2<Complex<f64>> {
        let n_bins = self.n_fft / 2 + 1;
        let frames = self.n_frames(samples.len());
        let half = (self.n_fft / 2) as isize;
        let mut out = Array2::from_elem((n_bins, frames), Complex::new(0.0, 0.0));
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for k in 0..frames {
            let start = (k * self.hop) as isize - half;
            for (j, slot) in buf.iter_mut().enumerate() {
                let idx = start + j as isize;
                let v = if idx >= 0 && (idx as usize) < samples.len() {
                    samples[idx as usize].into()
                } else {
                    0.0
                };
                *slot = Complex::new(v * self.window[j], 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for b in 0..n_bins {
                out[[b, k]] = buf[b];
            }
        }
        out
    }

    /// Weighted overlap-add inverse of [`Stft::forward`], producing
    /// `frames * hop` samples.
    pub fn inverse(&self, spec: &Array2<Complex<f64>>) -> Vec<f64> {
        let frames = spec.ncols();
        let n_bins = spec.nrows();
        let n_out = frames * self.hop;
        let half = (self.n_fft / 2) as isize;
        let mut out = vec![0.0; n_out];
        let mut norm = vec![0.0; n_out];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for k in 0..frames {
            for b in 0..self.n_fft {
                buf[b] = if b < n_bins {
                    spec[[b, k]]
                } else {
                    spec[[self.n_fft - b, k]].conj()
                };
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = (k * self.hop) as isize - half;
            for j in 0..self.n_fft {
                let idx = start + j as isize;
                if idx >= 0 && (idx as usize) < n_out {
                    let w = self.window[j];
                    out[idx as usize] += buf[j].re / self.n_fft as f64 * w;
                    norm[idx as usize] += w * w;
                }
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-8 {
                *o /= n;
            }
        }
        out
    }
}
