//! Alignment, structure preservation and prompt fidelity.

use serde::{Deserialize, Serialize};

use crate::adaptive::{cosine, editability_score, EmbeddingOracle};
use crate::error::{Error, Result};
use crate::features::{hierarchy_of, stft_magnitude, HOP, N_FFT};
use crate::signal::{AudioClip, ControlTrack, PromptLabel};

/// Number of sub-clips pooled by [`prompt_fidelity`].
pub const FIDELITY_SUBCLIPS: usize = 5;
const LOG_EPS: f64 = 1e-5;

/// Windowed audio-to-control similarity, computed exactly like the
/// editability score.
pub fn alignment_score(oracle: &dyn EmbeddingOracle, audio: &AudioClip, visual: &ControlTrack) -> Result<f64> {
    Ok(editability_score(oracle, audio, visual)?.score)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureDistance {
    pub envelope_correlation: f64,
    /// dB.
    pub log_spectral_distance: f64,
    /// One of the envelopes was constant; the correlation is reported as 0.
    pub degenerate: bool,
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        None
    } else {
        Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Level-0 loudness curve without the frames whose analysis window reaches
/// into the zero padding at either end; those dip in every clip alike and
/// would correlate unrelated signals.
pub fn envelope(clip: &AudioClip) -> Result<Vec<f64>> {
    let curve = hierarchy_of(clip, 0)?.levels[0].row(0).to_vec();
    let half = N_FFT / 2;
    let first = half.div_ceil(HOP);
    let last = curve
        .len()
        .min((clip.len().saturating_sub(half)) / HOP + 1);
    if last <= first + 1 {
        return Err(Error::invalid("clip too short for an envelope"));
    }
    Ok(curve[first..last].to_vec())
}

pub fn structure_distance(source: &AudioClip, edited: &AudioClip) -> Result<StructureDistance> {
    if source.len() != edited.len() {
        return Err(Error::invalid(format!(
            "clips differ in length: {} vs {} samples",
            source.len(),
            edited.len()
        )));
    }
    let (ea, eb) = (envelope(source)?, envelope(edited)?);
    let corr = pearson(&ea, &eb);

    let (sa, sb) = (stft_magnitude(source)?, stft_magnitude(edited)?);
    let frames = sa.values.ncols();
    let bins = sa.values.nrows() as f64;
    let mut total = 0.0;
    for t in 0..frames {
        let sq: f64 = sa
            .values
            .column(t)
            .iter()
            .zip(sb.values.column(t))
            .map(|(x, y)| {
                let d = 20.0 * ((x + LOG_EPS).log10() - (y + LOG_EPS).log10());
                d * d
            })
            .sum();
        total += (sq / bins).sqrt();
    }
    Ok(StructureDistance {
        envelope_correlation: corr.unwrap_or(0.0),
        log_spectral_distance: total / frames as f64,
        degenerate: corr.is_none(),
    })
}

/// Similarity of each of five equal sub-clips to the prompt.
pub fn subclip_similarities(oracle: &dyn EmbeddingOracle, audio: &AudioClip, prompt: PromptLabel) -> Result<Vec<f64>> {
    let target = oracle.embed_prompt(prompt)?;
    let len = audio.len() / FIDELITY_SUBCLIPS;
    if len == 0 {
        return Err(Error::invalid("clip too short for prompt fidelity"));
    }
    (0..FIDELITY_SUBCLIPS)
        .map(|i| Ok(cosine(&oracle.embed_audio(&audio.slice(i * len, len))?, &target)))
        .collect()
}

/// Max-pooled sub-clip similarity to the prompt, so a short event counts
/// fully.
pub fn prompt_fidelity(oracle: &dyn EmbeddingOracle, audio: &AudioClip, prompt: PromptLabel) -> Result<f64> {
    Ok(subclip_similarities(oracle, audio, prompt)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive::FingerprintOracle;
    use crate::rng;
    use crate::signal::{scene_for_class, synth_scene, Carrier, Envelope, SceneSpec, SAMPLE_RATE};
    use rand_distr::{Distribution, StandardNormal};

    fn scene(class: usize, seed: u64) -> (AudioClip, ControlTrack) {
        let (a, c, _) = synth_scene(&scene_for_class(class, seed)).unwrap();
        (a, c)
    }

    fn noise(seed: u64) -> AudioClip {
        let mut r = rng::from_seed(seed);
        let samples = (0..128_000).map(|_| 0.1 * <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut r)).collect::<Vec<f32>>();
        AudioClip::new(samples, SAMPLE_RATE)
    }

    #[test]
    fn identity_is_perfect_structure() {
        let (a, _) = scene(2, 1);
        let s = structure_distance(&a, &a).unwrap();
        assert_eq!(s.envelope_correlation, 1.0);
        assert_eq!(s.log_spectral_distance, 0.0);
        assert!(!s.degenerate);
    }

    #[test]
    fn halving_shifts_spectrum_by_six_db() {
        let mut spec = scene_for_class(4, 3);
        spec.envelope = Envelope {
            points: vec![(0.0, 0.2), (4.0, 1.0), (8.0, 0.3)],
        };
        let (a, _, _) = synth_scene(&spec).unwrap();
        let half = AudioClip::new(a.samples.iter().map(|v| v * 0.5).collect(), a.sample_rate);
        let s = structure_distance(&a, &half).unwrap();
        assert!(s.envelope_correlation > 1.0 - 1e-9, "{s:?}");
        let expected = 20.0 * 2f64.log10();
        // Bins near the log floor shift by less than 6 dB.
        assert!((s.log_spectral_distance - expected).abs() < 0.1, "{s:?}");
    }

    #[test]
    fn silence_is_degenerate() {
        let (a, _) = scene(0, 1);
        let s = structure_distance(&a, &AudioClip::silence(a.len(), SAMPLE_RATE)).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.envelope_correlation, 0.0);
        assert!(structure_distance(&a, &a.slice(0, 1000)).is_err());
    }

    #[test]
    fn independent_noise_is_uncorrelated() {
        // Overlapping frames and median smoothing leave roughly a hundred
        // effective samples per 8 s clip, so |r| has a null spread near 0.09;
        // check the null distribution rather than every draw.
        let rs: Vec<f64> = (0..100)
            .map(|i| structure_distance(&noise(2 * i), &noise(2 * i + 1)).unwrap().envelope_correlation)
            .collect();
        let mean = rs.iter().sum::<f64>() / 100.0;
        let inside = rs.iter().filter(|r| r.abs() < 0.2).count();
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!(inside >= 95, "{inside} of 100 within 0.2");
    }

    #[test]
    fn alignment_prefers_genuine_pairs() {
        let o = FingerprintOracle::new().unwrap();
        for seed in 0..4 {
            let class = seed as usize;
            let (a, c) = scene(class, seed);
            let genuine = alignment_score(&o, &a, &c).unwrap();
            assert_eq!(genuine, alignment_score(&o, &a, &c).unwrap());
            assert!((-1.0..=1.0).contains(&genuine));
            for other in (0..8).filter(|&k| k != class) {
                let shuffled = ControlTrack { class_id: other, ..c.clone() };
                assert!(genuine > alignment_score(&o, &a, &shuffled).unwrap(), "{class} vs {other}");
            }
        }
    }

    fn burst_clip() -> AudioClip {
        let spec = SceneSpec {
            class_id: 6,
            envelope: Envelope {
                points: vec![(0.0, 0.0), (3.3, 0.0), (3.35, 1.0), (4.5, 1.0), (4.55, 0.0)],
            },
            carrier: Carrier::ImpulseTrain { rate_hz: 8.0, phase_s: 0.0 },
            seed: 3,
            duration_s: 8.0,
            sample_rate: SAMPLE_RATE,
        };
        synth_scene(&spec).unwrap().0
    }

    #[test]
    fn fidelity_takes_the_best_subclip() {
        let o = FingerprintOracle::new().unwrap();
        let clip = burst_clip();
        let sims = subclip_similarities(&o, &clip, PromptLabel::class(6)).unwrap();
        let best = prompt_fidelity(&o, &clip, PromptLabel::class(6)).unwrap();
        assert_eq!(best, sims[2]);
        let mean = sims.iter().sum::<f64>() / 5.0;
        assert!(best > mean);

        // Reordering sub-clips leaves the result unchanged.
        let n = clip.len() / 5;
        let mut order = [4usize, 2, 0, 3, 1].iter().flat_map(|&i| clip.samples[i * n..(i + 1) * n].to_vec()).collect::<Vec<_>>();
        order.extend_from_slice(&clip.samples[5 * n..]);
        let permuted = AudioClip::new(order, SAMPLE_RATE);
        assert_eq!(prompt_fidelity(&o, &permuted, PromptLabel::class(6)).unwrap(), best);
    }

    #[test]
    fn uniform_event_scores_equally_everywhere() {
        let o = FingerprintOracle::new().unwrap();
        let mut spec = scene_for_class(0, 1);
        spec.envelope = Envelope::constant(0.7);
        let (a, _, _) = synth_scene(&spec).unwrap();
        let sims = subclip_similarities(&o, &a, PromptLabel::class(0)).unwrap();
        let best = prompt_fidelity(&o, &a, PromptLabel::class(0)).unwrap();
        for s in sims {
            assert!((s - best).abs() < 1e-6);
        }
    }
}
