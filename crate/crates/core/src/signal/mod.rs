//! Audio clips, control tracks and the synthetic scene corpus.

mod corpus;
mod resample;
mod synth;
mod wav;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use corpus::{load_control, load_manifest, load_scene, make_corpus, save_control, CorpusEntry, Manifest, Split};
pub use resample::{resample, resample_and_crop};
pub use synth::{
    class_name, fresh_envelope, scene_for_class, synth_scene, Carrier, Envelope, SceneSpec,
    N_CLASSES,
};
pub use wav::{load_wav, save_wav};

/// Canonical sample rate of every clip the model sees.
pub const SAMPLE_RATE: u32 = 16_000;
/// Canonical clip length in seconds.
pub const SEGMENT_SECONDS: f64 = 8.0;
/// Frame rate of control tracks (the video proxy).
pub const CONTROL_FPS: f64 = 20.0;

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(n: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; n], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, gain: f32) -> Self {
        Self::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
        )
    }

    /// Sub-clip `[start, start + len)` in samples.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self::new(self.samples[start..start + len].to_vec(), self.sample_rate)
    }
}

/// Text-prompt proxy: a class id, or the null condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptLabel(pub Option<usize>);

impl PromptLabel {
    pub const NULL: PromptLabel = PromptLabel(None);

    pub fn class(id: usize) -> Self {
        PromptLabel(Some(id))
    }

    pub fn is_null(&self) -> bool {
        self.0.is_none()
    }
}

/// Per-frame event intensities, one channel per class. This is the stand-in
/// for a (possibly edited) target video.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrack {
    /// `n_frames x n_classes`, nonnegative.
    pub frames: Array2<f64>,
    pub frame_rate: f64,
    pub class_id: usize,
}

#[derive(Serialize, Deserialize)]
struct ControlTrackJson {
    frame_rate: f64,
    class_id: usize,
    frames: Vec<Vec<f64>>,
}

impl Serialize for ControlTrack {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ControlTrackJson {
            frame_rate: self.frame_rate,
            class_id: self.class_id,
            frames: self.frames.outer_iter().map(|r| r.to_vec()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ControlTrack {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = ControlTrackJson::deserialize(d)?;
        let width = raw.frames.first().map_or(N_CLASSES, Vec::len);
        if raw.frames.iter().any(|r| r.len() != width) {
            return Err(D::Error::custom("ragged control-track frames"));
        }
        if raw.frames.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(D::Error::custom("control intensities must be finite and >= 0"));
        }
        let flat: Vec<f64> = raw.frames.into_iter().flatten().collect();
        let frames = Array2::from_shape_vec((flat.len() / width.max(1), width), flat)
            .map_err(D::Error::custom)?;
        Ok(ControlTrack {
            frames,
            frame_rate: raw.frame_rate,
            class_id: raw.class_id,
        })
    }
}

impl ControlTrack {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn duration(&self) -> f64 {
        self.n_frames() as f64 / self.frame_rate
    }

    /// Intensity of the track's own class channel.
    pub fn active_channel(&self) -> Vec<f64> {
        self.frames.column(self.class_id).to_vec()
    }

    /// Same shape, all intensities zero.
    pub fn zeroed(&self) -> Self {
        Self {
            frames: Array2::zeros(self.frames.raw_dim()),
            frame_rate: self.frame_rate,
            class_id: self.class_id,
        }
    }

    /// Linearly re-timed copy with `n_out` frames spanning the same duration.
    pub fn regulated(&self, n_out: usize) -> Self {
        let frame_rate = self.frame_rate * n_out as f64 / self.n_frames().max(1) as f64;
        Self {
            frames: regulate_length(self.frames.view(), Axis(0), n_out),
            frame_rate,
            class_id: self.class_id,
        }
    }

    /// Frames `[start, start + len)`.
    pub fn segment(&self, start: usize, len: usize) -> Self {
        Self {
            frames: self
                .frames
                .slice(ndarray::s![start..start + len, ..])
                .to_owned(),
            frame_rate: self.frame_rate,
            class_id: self.class_id,
        }
    }

    pub fn mean_intensity(&self) -> f64 {
        if self.frames.is_empty() {
            0.0
        } else {
            self.frames.sum() / self.n_frames() as f64
        }
    }
}

/// Linear-interpolation length regulation along `axis`: output index `k` reads
/// source position `k * (n_in - 1) / (n_out - 1)`, so both endpoints are kept.
pub fn regulate_length(x: ArrayView2<f64>, axis: Axis, n_out: usize) -> Array2<f64> {
    let n_in = x.len_of(axis);
    let mut out_shape = [x.nrows(), x.ncols()];
    out_shape[axis.index()] = n_out;
    let mut out = Array2::zeros(out_shape);
    if n_in == 0 || n_out == 0 {
        return out;
    }
    for k in 0..n_out {
        let pos = if n_out == 1 {
            0.0
        } else {
            k as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        };
        let i0 = (pos.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        let frac = pos - i0 as f64;
        let a = x.index_axis(axis, i0);
        let b = x.index_axis(axis, i1);
        let mut dst = out.index_axis_mut(axis, k);
        if frac == 0.0 {
            dst.assign(&a);
        } else {
            ndarray::Zip::from(&mut dst)
                .and(&a)
                .and(&b)
                .for_each(|d, &a, &b| *d = a + frac * (b - a));
        }
    }
    out
}
