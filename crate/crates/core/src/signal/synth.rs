//! Parametric event scenes: a carrier waveform shaped by a breakpoint
//! envelope, rendered together with the matching control track.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, ControlTrack, PromptLabel, CONTROL_FPS, SAMPLE_RATE, SEGMENT_SECONDS};
use crate::error::{Error, Result};
use crate::rng;

/// Number of synthetic event classes.
pub const N_CLASSES: usize = 8;

const CLASS_NAMES: [&str; N_CLASSES] = [
    "low_tone",
    "high_tone",
    "up_chirp",
    "down_chirp",
    "noise_burst",
    "low_noise",
    "impulse_train",
    "am_tone",
];

const CLICK_TAU_S: f64 = 0.008;
const CLICK_LEN_S: f64 = 0.04;

pub fn class_name(class_id: usize) -> &'static str {
    CLASS_NAMES.get(class_id).copied().unwrap_or("unknown")
}

/// Piecewise-linear amplitude envelope given as `(time_s, level)` breakpoints.
/// The first and last levels are held outside the breakpoint range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub points: Vec<(f64, f64)>,
}

impl Envelope {
    pub fn constant(level: f64) -> Self {
        Self {
            points: vec![(0.0, level)],
        }
    }

    pub fn validate(&self, duration: f64) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("envelope needs at least one breakpoint"));
        }
        for w in self.points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid("envelope times must be strictly increasing"));
            }
        }
        for &(t, level) in &self.points {
            if !(0.0..=duration).contains(&t) {
                return Err(Error::invalid(format!("envelope time {t} outside clip")));
            }
            if !(0.0..=1.0).contains(&level) {
                return Err(Error::invalid(format!("envelope level {level} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        // Breakpoint count is small; linear scan keeps this obvious.
        for w in pts.windows(2) {
            let ((t0, l0), (t1, l1)) = (w[0], w[1]);
            if t <= t1 {
                return l0 + (l1 - l0) * (t - t0) / (t1 - t0);
            }
        }
        pts[pts.len() - 1].1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Carrier {
    /// Sine tone, optionally amplitude-modulated (`am_depth = 0` disables).
    Tone {
        freq_hz: f64,
        am_hz: f64,
        am_depth: f64,
    },
    /// Linear frequency sweep over the whole clip.
    Chirp { start_hz: f64, end_hz: f64 },
    /// Band-limited Gaussian noise, peak-normalized.
    NoiseBand { low_hz: f64, high_hz: f64 },
    /// Decaying noise clicks at a fixed rate.
    ImpulseTrain { rate_hz: f64, phase_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub class_id: usize,
    pub envelope: Envelope,
    pub carrier: Carrier,
    pub seed: u64,
    pub duration_s: f64,
    pub sample_rate: u32,
}

/// Random attack/sustain/decay events separated by silent gaps.
pub fn fresh_envelope(rng: &mut rng::Rng, duration: f64) -> Envelope {
    let mut points = Vec::new();
    let mut t = rng.gen_range(0.0..0.8);
    loop {
        let attack = rng.gen_range(0.02..0.25);
        let sustain = rng.gen_range(0.3..1.5);
        let decay = rng.gen_range(0.1..0.8);
        let level = rng.gen_range(0.3..1.0);
        let tail = level * rng.gen_range(0.6..1.0);
        let end = t + attack + sustain + decay;
        if end > duration {
            break;
        }
        points.extend([
            (t, 0.0),
            (t + attack, level),
            (t + attack + sustain, tail),
            (end, 0.0),
        ]);
        t = end + rng.gen_range(0.2..1.2);
    }
    if points.is_empty() {
        points = vec![(0.0, 0.0), (0.05, 0.8), (duration - 0.1, 0.6), (duration, 0.0)];
    }
    Envelope { points }
}

/// The canonical scene of a class: class-specific carrier with seeded
/// parameter jitter and a fresh envelope.
pub fn scene_for_class(class_id: usize, seed: u64) -> SceneSpec {
    let mut r = rng::from_seed(seed);
    let mut jitter = |lo: f64, hi: f64| r.gen_range(lo..hi);
    let carrier = match class_id {
        0 => Carrier::Tone {
            freq_hz: jitter(180.0, 240.0),
            am_hz: 0.0,
            am_depth: 0.0,
        },
        1 => Carrier::Tone {
            freq_hz: jitter(4_500.0, 5_500.0),
            am_hz: 0.0,
            am_depth: 0.0,
        },
        2 => Carrier::Chirp {
            start_hz: jitter(380.0, 440.0),
            end_hz: jitter(1_500.0, 1_700.0),
        },
        3 => Carrier::Chirp {
            start_hz: jitter(6_800.0, 7_200.0),
            end_hz: jitter(2_400.0, 2_600.0),
        },
        4 => Carrier::NoiseBand {
            low_hz: 100.0,
            high_hz: 7_500.0,
        },
        5 => Carrier::NoiseBand {
            low_hz: 40.0,
            high_hz: jitter(450.0, 550.0),
        },
        6 => {
            let rate_hz = jitter(2.0, 6.0);
            Carrier::ImpulseTrain {
                rate_hz,
                phase_s: jitter(0.0, 1.0) / rate_hz,
            }
        }
        _ => Carrier::Tone {
            freq_hz: jitter(2_600.0, 2_900.0),
            am_hz: jitter(6.0, 10.0),
            am_depth: 0.8,
        },
    };
    let envelope = fresh_envelope(&mut r, SEGMENT_SECONDS);
    SceneSpec {
        class_id,
        envelope,
        carrier,
        seed,
        duration_s: SEGMENT_SECONDS,
        sample_rate: SAMPLE_RATE,
    }
}

fn band_noise(n: usize, rate: f64, low: f64, high: f64, r: &mut rng::Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(r), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * rate / n as f64;
        if f < low || f > high {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter().map(|v| v / peak).collect()
    } else {
        out
    }
}

/// Carrier waveform and its per-sample intensity profile (1 except for clicks).
fn render_carrier(spec: &SceneSpec, n: usize, r: &mut rng::Rng) -> (Vec<f64>, Vec<f64>) {
    let rate = spec.sample_rate as f64;
    match spec.carrier {
        Carrier::Tone {
            freq_hz,
            am_hz,
            am_depth,
        } => {
            let wave = (0..n)
                .map(|i| {
                    let t = i as f64 / rate;
                    let am = 1.0 - am_depth * 0.5 * (1.0 - (2.0 * PI * am_hz * t).cos());
                    am * (2.0 * PI * freq_hz * t).sin()
                })
                .collect();
            (wave, vec![1.0; n])
        }
        Carrier::Chirp { start_hz, end_hz } => {
            let dur = spec.duration_s;
            let wave = (0..n)
                .map(|i| {
                    let t = i as f64 / rate;
                    let phase = start_hz * t + (end_hz - start_hz) * t * t / (2.0 * dur);
                    (2.0 * PI * phase).sin()
                })
                .collect();
            (wave, vec![1.0; n])
        }
        Carrier::NoiseBand { low_hz, high_hz } => {
            (band_noise(n, rate, low_hz, high_hz, r), vec![1.0; n])
        }
        Carrier::ImpulseTrain { rate_hz, phase_s } => {
            let mut wave = vec![0.0; n];
            let mut intensity = vec![0.0; n];
            let click_len = (CLICK_LEN_S * rate) as usize;
            let mut k = 0usize;
            loop {
                let onset = phase_s + k as f64 / rate_hz;
                let start = (onset * rate).round() as usize;
                if start >= n {
                    break;
                }
                for j in 0..click_len.min(n - start) {
                    let decay = (-(j as f64 / rate) / CLICK_TAU_S).exp();
                    let noise: f64 = StandardNormal.sample(r);
                    wave[start + j] = (0.5 * noise).clamp(-1.0, 1.0) * decay;
                    intensity[start + j] = decay;
                }
                k += 1;
            }
            (wave, intensity)
        }
    }
}

/// Render a scene into audio, the matching control track and the prompt.
///
/// The control track's active channel at frame `k` is the envelope at
/// `k / fps` times the peak carrier intensity within that frame.
pub fn synth_scene(spec: &SceneSpec) -> Result<(AudioClip, ControlTrack, PromptLabel)> {
    if spec.class_id >= N_CLASSES {
        return Err(Error::invalid(format!("class {} out of range", spec.class_id)));
    }
    if !(spec.duration_s > 0.0) || spec.sample_rate == 0 {
        return Err(Error::invalid("scene duration and sample rate must be positive"));
    }
    spec.envelope.validate(spec.duration_s)?;
    let rate = spec.sample_rate as f64;
    let n = (spec.duration_s * rate).round() as usize;
    let mut r = rng::stream(spec.seed, "carrier");
    let (wave, intensity) = render_carrier(spec, n, &mut r);

    let samples = wave
        .iter()
        .enumerate()
        .map(|(i, w)| (w * spec.envelope.at(i as f64 / rate)).clamp(-1.0, 1.0) as f32)
        .collect();

    let n_frames = (spec.duration_s * CONTROL_FPS).round() as usize;
    let mut frames = Array2::zeros((n_frames, N_CLASSES));
    for k in 0..n_frames {
        let lo = ((k as f64 / CONTROL_FPS) * rate).round() as usize;
        let hi = ((((k + 1) as f64) / CONTROL_FPS) * rate).round() as usize;
        let peak = intensity[lo.min(n)..hi.min(n)]
            .iter()
            .fold(0.0f64, |m, &v| m.max(v));
        frames[[k, spec.class_id]] = spec.envelope.at(k as f64 / CONTROL_FPS) * peak;
    }
    let control = ControlTrack {
        frames,
        frame_rate: CONTROL_FPS,
        class_id: spec.class_id,
    };
    Ok((
        AudioClip::new(samples, spec.sample_rate),
        control,
        PromptLabel::class(spec.class_id),
    ))
}
