//! Training-time augmentation: detail masking, temporal span masking, and
//! condition dropout for classifier-free guidance.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::condition::ConditionBundle;
use crate::error::{Error, Result};
use crate::features::{AcousticFeatures, DetailMask, L_MAX};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    /// Probability of masking the entire feature tensor.
    pub p_full_mask: f64,
    /// Probability of each detail level `0..=L`.
    pub level_distribution: Vec<f64>,
    /// Fraction of frames hidden by temporal masking.
    pub temporal_mask_rate: f64,
    /// Inclusive range of span lengths in feature frames.
    pub temporal_span_frames: (usize, usize),
    /// Probability of replacing prompt and tracks by the null condition.
    pub p_drop_condition: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            p_full_mask: 0.1,
            level_distribution: vec![1.0 / (L_MAX + 1) as f64; L_MAX + 1],
            temporal_mask_rate: 0.3,
            temporal_span_frames: (10, 50),
            p_drop_condition: 0.1,
        }
    }
}

impl AugmentPolicy {
    /// A policy that changes nothing.
    pub fn identity(l_max: usize) -> Self {
        let mut level_distribution = vec![0.0; l_max + 1];
        level_distribution[l_max] = 1.0;
        Self {
            p_full_mask: 0.0,
            level_distribution,
            temporal_mask_rate: 0.0,
            temporal_span_frames: (1, 1),
            p_drop_condition: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} = {p} outside [0, 1]")))
            }
        };
        prob("p_full_mask", self.p_full_mask)?;
        prob("temporal_mask_rate", self.temporal_mask_rate)?;
        prob("p_drop_condition", self.p_drop_condition)?;
        for &p in &self.level_distribution {
            prob("level_distribution entry", p)?;
        }
        let total: f64 = self.level_distribution.iter().sum();
        if self.level_distribution.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "level_distribution sums to {total}, expected 1"
            )));
        }
        let (lo, hi) = self.temporal_span_frames;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!("bad span range ({lo}, {hi})")));
        }
        Ok(())
    }

    pub fn l_max(&self) -> usize {
        self.level_distribution.len() - 1
    }
}

/// Draw a detail mask: all-zero with probability `p_full_mask`, otherwise the
/// pure mask at a level drawn from `level_distribution`.
pub fn sample_detail_mask(policy: &AugmentPolicy, frames: usize, rng: &mut Rng) -> DetailMask {
    let l_max = policy.l_max();
    if rng.gen_bool(policy.p_full_mask) {
        return DetailMask::empty(l_max, frames);
    }
    let level = WeightedIndex::new(&policy.level_distribution)
        .map(|d| d.sample(rng))
        .unwrap_or(l_max);
    DetailMask::pure(level, l_max, frames)
}

/// Frame flags for temporal masking: spans of uniform length are placed at
/// uniform positions until exactly `round(rate * frames)` frames are hidden.
pub fn temporal_mask_frames(policy: &AugmentPolicy, frames: usize, rng: &mut Rng) -> Vec<bool> {
    let mut masked = vec![false; frames];
    let target = (policy.temporal_mask_rate * frames as f64).round() as usize;
    let (lo, hi) = policy.temporal_span_frames;
    let mut count = 0;
    while count < target {
        let len = rng.gen_range(lo..=hi).min(frames);
        let start = rng.gen_range(0..=frames - len);
        for flag in &mut masked[start..start + len] {
            if count == target {
                break;
            }
            if !*flag {
                *flag = true;
                count += 1;
            }
        }
    }
    masked
}

/// Zero all value and indicator channels on randomly chosen frame spans.
pub fn apply_temporal_mask(
    feat: &AcousticFeatures,
    policy: &AugmentPolicy,
    rng: &mut Rng,
) -> AcousticFeatures {
    let mut out = feat.clone();
    if policy.temporal_mask_rate > 0.0 {
        let masked = temporal_mask_frames(policy, feat.n_frames(), rng);
        out.zero_frames(&masked);
    }
    out
}

/// Replace the bundle by the null condition with probability
/// `p_drop_condition`.
pub fn drop_condition(c: &ConditionBundle, policy: &AugmentPolicy, rng: &mut Rng) -> ConditionBundle {
    if rng.gen_bool(policy.p_drop_condition) {
        c.null()
    } else {
        c.clone()
    }
}
