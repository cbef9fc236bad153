//! Editability estimation: windowed cross-modal similarity between the
//! source audio and the target control track, quantized to a level of
//! detail.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::stft_magnitude;
use crate::flow::GuidanceWeights;
use crate::signal::{scene_for_class, synth_scene, AudioClip, ControlTrack, Envelope, PromptLabel, N_CLASSES};

pub const WINDOW_SECONDS: f64 = 2.0;
/// Calibration constants of the score normalization.
pub const S_MIN: f64 = 0.02;
pub const S_MAX: f64 = 0.32;

/// Shared embedding space for audio windows, control-track windows and
/// prompt labels. Implementations return unit vectors and are deterministic.
pub trait EmbeddingOracle: Sync {
    fn embed_audio(&self, window: &AudioClip) -> Result<Vec<f64>>;
    fn embed_visual(&self, window: &ControlTrack) -> Result<Vec<f64>>;
    fn embed_prompt(&self, prompt: PromptLabel) -> Result<Vec<f64>>;
    fn window_s(&self) -> f64 {
        WINDOW_SECONDS
    }
}

/// Upper band edges in Hz; the first band starts at 0.
pub const BAND_EDGES_HZ: [f64; 8] = [250.0, 500.0, 1000.0, 2000.0, 3000.0, 4000.0, 6000.0, 8000.0];
const ENERGY_EPS: f64 = 1e-12;

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        v.iter_mut().for_each(|x| *x /= n);
        v
    } else {
        uniform(v.len())
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / (n as f64).sqrt(); n]
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Band energies of a clip plus a small floor, before normalization.
pub fn band_energies(clip: &AudioClip) -> Result<Vec<f64>> {
    let spec = stft_magnitude(clip)?;
    let mut e = vec![ENERGY_EPS; BAND_EDGES_HZ.len()];
    for (row, &f) in spec.values.outer_iter().zip(&spec.bin_freqs) {
        let band = BAND_EDGES_HZ.iter().position(|&hi| f < hi).unwrap_or(BAND_EDGES_HZ.len() - 1);
        e[band] += row.iter().map(|m| m * m).sum::<f64>();
    }
    Ok(e)
}

/// Deterministic stand-in embedder: audio maps to its normalized band
/// energies, a control window to its class's spectral template scaled by
/// the window's mean intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintOracle {
    templates: Vec<Vec<f64>>,
}

impl FingerprintOracle {
    pub fn new() -> Result<Self> {
        let templates = (0..N_CLASSES)
            .map(|k| {
                let mut spec = scene_for_class(k, 0);
                spec.envelope = Envelope::constant(1.0);
                let (audio, _, _) = synth_scene(&spec)?;
                Ok(unit(band_energies(&audio)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { templates })
    }

    pub fn template(&self, class_id: usize) -> Result<&[f64]> {
        self.templates
            .get(class_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("class {class_id} has no template")))
    }
}

impl EmbeddingOracle for FingerprintOracle {
    fn embed_audio(&self, window: &AudioClip) -> Result<Vec<f64>> {
        Ok(unit(band_energies(window)?))
    }

    fn embed_visual(&self, window: &ControlTrack) -> Result<Vec<f64>> {
        let intensity = window.mean_intensity();
        let template = self.template(window.class_id)?;
        Ok(unit(template.iter().map(|v| v * intensity).collect()))
    }

    fn embed_prompt(&self, prompt: PromptLabel) -> Result<Vec<f64>> {
        match prompt.0 {
            Some(k) => Ok(self.template(k)?.to_vec()),
            None => Ok(uniform(BAND_EDGES_HZ.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Editability {
    pub score: f64,
    pub window_scores: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean cosine similarity over non-overlapping windows; a trailing partial
/// window is dropped.
pub fn editability_score(
    oracle: &dyn EmbeddingOracle,
    audio: &AudioClip,
    visual: &ControlTrack,
) -> Result<Editability> {
    let window_s = oracle.window_s();
    let duration = audio.duration();
    if (duration - visual.duration()).abs() > 1.0 / visual.frame_rate + 1e-9 {
        return Err(Error::invalid(format!(
            "audio lasts {duration} s but the control track {} s",
            visual.duration()
        )));
    }
    let n = (duration / window_s + 1e-9).floor() as usize;
    if n == 0 {
        return Err(Error::invalid(format!("{duration} s is shorter than one {window_s} s window")));
    }
    let audio_len = (window_s * audio.sample_rate as f64).round() as usize;
    let visual_len = (window_s * visual.frame_rate).round() as usize;
    let window_scores = (0..n)
        .map(|w| {
            let a = oracle.embed_audio(&audio.slice(w * audio_len, audio_len))?;
            let start = (w * visual_len).min(visual.n_frames());
            let len = visual_len.min(visual.n_frames() - start);
            let v = oracle.embed_visual(&visual.segment(start, len))?;
            Ok(cosine(&a, &v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Editability {
        score: mean(&window_scores),
        window_scores,
    })
}

/// Per-window embeddings computed outside this program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalEmbeddings {
    pub audio: Vec<Vec<f64>>,
    pub visual: Vec<Vec<f64>>,
}

impl ExternalEmbeddings {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn score(&self) -> Result<Editability> {
        if self.audio.is_empty() || self.audio.len() != self.visual.len() {
            return Err(Error::invalid(format!(
                "need equal, non-zero window counts; got {} audio and {} visual",
                self.audio.len(),
                self.visual.len()
            )));
        }
        let window_scores: Vec<f64> = self
            .audio
            .iter()
            .zip(&self.visual)
            .map(|(a, v)| {
                if a.len() != v.len() {
                    Err(Error::invalid("embedding dimensions differ"))
                } else {
                    Ok(cosine(a, v))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Editability {
            score: mean(&window_scores),
            window_scores,
        })
    }
}

/// `round(l_max * clamp((s - s_min) / (s_max - s_min), 0, 1))`, ties away
/// from zero.
pub fn quantize_level(s: f64, s_min: f64, s_max: f64, l_max: usize) -> usize {
    let x = ((s - s_min) / (s_max - s_min)).clamp(0.0, 1.0);
    let level = (l_max as f64 * x).round();
    if level.is_nan() {
        0
    } else {
        level as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    /// The built-in [`FingerprintOracle`].
    Fingerprint,
    /// Precomputed per-window embeddings read from a JSON file.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub l_max: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub oracle: OracleKind,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            l_max: crate::features::L_MAX,
            s_min: S_MIN,
            s_max: S_MAX,
            oracle: OracleKind::Fingerprint,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_min.is_finite() && self.s_max.is_finite() && self.s_min < self.s_max {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "need finite s_min < s_max, got {} and {}",
                self.s_min, self.s_max
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditPlan {
    pub score: f64,
    pub level: usize,
    pub l_max: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub guidance: GuidanceWeights,
    pub window_scores: Vec<f64>,
}

impl EditPlan {
    pub fn from_editability(e: Editability, cfg: &AdaptiveConfig, guidance: GuidanceWeights) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            level: quantize_level(e.score, cfg.s_min, cfg.s_max, cfg.l_max),
            score: e.score,
            l_max: cfg.l_max,
            s_min: cfg.s_min,
            s_max: cfg.s_max,
            guidance,
            window_scores: e.window_scores,
        })
    }
}

pub fn plan_edit(
    oracle: &dyn EmbeddingOracle,
    source_audio: &AudioClip,
    target_visual: &ControlTrack,
    cfg: &AdaptiveConfig,
    guidance: GuidanceWeights,
) -> Result<EditPlan> {
    let e = editability_score(oracle, source_audio, target_visual)?;
    EditPlan::from_editability(e, cfg, guidance)
}

/// Mean editability of genuine scenes (audio with its own control track)
/// against mismatched ones (the control track of the next class), for
/// choosing `s_min` and `s_max` to suit an oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCalibration {
    pub n: usize,
    pub genuine_mean: f64,
    pub mismatched_mean: f64,
}

pub fn calibrate(oracle: &dyn EmbeddingOracle, n: usize, seed: u64) -> Result<OracleCalibration> {
    if n == 0 {
        return Err(Error::invalid("calibration needs at least one scene"));
    }
    let mut genuine = 0.0;
    let mut mismatched = 0.0;
    for i in 0..n {
        let class = i % N_CLASSES;
        let scene_seed = crate::rng::derive_seed(seed, &format!("calibration/{i}"));
        let (audio, control, _) = synth_scene(&scene_for_class(class, scene_seed))?;
        let (_, other, _) = synth_scene(&scene_for_class((class + 1) % N_CLASSES, scene_seed))?;
        genuine += editability_score(oracle, &audio, &control)?.score;
        mismatched += editability_score(oracle, &audio, &other)?.score;
    }
    Ok(OracleCalibration {
        n,
        genuine_mean: genuine / n as f64,
        mismatched_mean: mismatched / n as f64,
    })
}
