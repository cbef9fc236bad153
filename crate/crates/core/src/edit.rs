//! The editing pipeline: loudness features of the source at a chosen level
//! of detail, the target condition, and guided sampling.

use serde::{Deserialize, Serialize};

use crate::condition::ConditionBundle;
use crate::error::{Error, Result};
use crate::features::{extract, AcousticFeatures, HOP};
use crate::flow::{sample, GuidanceWeights, SamplerConfig};
use crate::latent::{decode, LatentClip, GRIFFIN_LIM_ITERS, LATENT_HOP};
use crate::model::VelocityModel;
use crate::signal::{AudioClip, ControlTrack, PromptLabel};

/// How much of the source audio the model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "level")]
pub enum Detail {
    /// Loudness hierarchy up to this level.
    Level(usize),
    /// Every feature masked: plain generation from the target condition.
    None,
}

pub fn source_features(model: &VelocityModel, source: &AudioClip, detail: Detail) -> Result<AcousticFeatures> {
    let l_max = model.config.l_max;
    match detail {
        Detail::Level(l) if l > l_max => Err(Error::invalid(format!("level {l} above the model's {l_max}"))),
        Detail::Level(l) => extract(source, l, l_max),
        Detail::None => Ok(AcousticFeatures::null(l_max, (source.len() / HOP).max(2))),
    }
}

/// Generate the edited latent.
pub fn edit_latent(
    model: &VelocityModel,
    source: &AudioClip,
    target: &ControlTrack,
    prompt: PromptLabel,
    detail: Detail,
    sampler: &SamplerConfig,
    guidance: GuidanceWeights,
) -> Result<LatentClip> {
    let frames = source.len() / LATENT_HOP;
    if frames < 2 {
        return Err(Error::invalid("source clip too short to edit"));
    }
    let a = source_features(model, source, detail)?;
    let c = ConditionBundle::new(prompt, target.clone(), frames);
    sample(model, sampler, &c, &a, guidance)
}

/// Edit and resynthesize a waveform.
pub fn edit_audio(
    model: &VelocityModel,
    source: &AudioClip,
    target: &ControlTrack,
    prompt: PromptLabel,
    detail: Detail,
    sampler: &SamplerConfig,
    guidance: GuidanceWeights,
) -> Result<AudioClip> {
    let latent = edit_latent(model, source, target, prompt, detail, sampler, guidance)?;
    Ok(decode(&latent, &model.latent_stats(), GRIFFIN_LIM_ITERS))
}
