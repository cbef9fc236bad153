//! Flow-matching training with momentum gradient descent, cosine step-size
//! decay and a two-phase schedule that holds the acoustic pathways fixed
//! for the first part of training.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{save_checkpoint, Group, ParamSet, VelocityModel};
use crate::augment::{apply_temporal_mask, drop_condition, sample_detail_mask, AugmentPolicy};
use crate::condition::ConditionBundle;
use crate::error::{Error, Result};
use crate::features::{assemble_features, hierarchy_of, LoudnessHierarchy};
use crate::flow::{draw_paths, FlowExample, PathDraw};
use crate::latent::{log_mel, LatentClip, LatentStats};
use crate::rng;
use crate::signal::{AudioClip, ControlTrack, PromptLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub total_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    /// Fraction of steps during which the acoustic pathways are frozen.
    pub freeze_fraction: f64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Derived from the run's root seed, never read from a config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_steps: 2000,
            batch_size: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            clip_norm: 1.0,
            freeze_fraction: 0.5,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.total_steps == 0 || self.batch_size == 0 {
            return bad("total_steps and batch_size must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.freeze_fraction) {
            return bad(format!("freeze_fraction {} outside [0, 1]", self.freeze_fraction));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.clip_norm >= 0.0) {
            return bad("learning_rate must be > 0, momentum in [0, 1), clip_norm >= 0".into());
        }
        Ok(())
    }

    /// First step at which the acoustic pathways are updated.
    pub fn unfreeze_step(&self) -> usize {
        (self.freeze_fraction * self.total_steps as f64).ceil() as usize
    }

    pub fn step_size(&self, step: usize) -> f64 {
        self.learning_rate * 0.5 * (1.0 + (PI * step as f64 / self.total_steps as f64).cos())
    }
}

/// One training clip with everything precomputed that does not depend on
/// the augmentation draw.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub latent: LatentClip,
    pub hierarchy: LoudnessHierarchy,
    pub bundle: ConditionBundle,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub items: Vec<TrainItem>,
    pub latent_stats: LatentStats,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

/// Encode scenes into standardized latents and loudness hierarchies of the
/// target audio, and collect normalization statistics.
pub fn build_training_set(scenes: &[(AudioClip, ControlTrack, PromptLabel)], l_max: usize) -> Result<TrainingSet> {
    if scenes.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mels = scenes.iter().map(|(a, _, _)| log_mel(a)).collect::<Result<Vec<_>>>()?;
    let latent_stats = LatentStats::from_log_mels(&mels)?;
    let mut items = Vec::with_capacity(scenes.len());
    for ((audio, control, prompt), mel) in scenes.iter().zip(&mels) {
        let latent = latent_stats.standardize(mel);
        let bundle = ConditionBundle::new(*prompt, control.clone(), latent.dim().1);
        items.push(TrainItem {
            latent,
            hierarchy: hierarchy_of(audio, l_max)?,
            bundle,
        });
    }
    let n_values = (1 << (l_max + 1)) - 1;
    let mut sum = vec![0.0; n_values];
    let mut sq = vec![0.0; n_values];
    let mut count = 0usize;
    for item in &items {
        let rows = item.hierarchy.levels.iter().flat_map(|lvl| lvl.outer_iter());
        for (k, row) in rows.enumerate() {
            sum[k] += row.sum();
            sq[k] += row.iter().map(|v| v * v).sum::<f64>();
        }
        count += item.hierarchy.n_frames();
    }
    let feature_mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let feature_std = sq
        .iter()
        .zip(&feature_mean)
        .map(|(q, m)| (q / count as f64 - m * m).max(1e-6).sqrt())
        .collect();
    Ok(TrainingSet {
        items,
        latent_stats,
        feature_mean,
        feature_std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub loss: f64,
    pub step_size: f64,
    pub grad_norm: f64,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub losses: Vec<f64>,
}

/// Draw the augmented batch for one step. Every example has its own
/// stream, so the draw does not depend on evaluation order.
pub fn augmented_batch(
    data: &TrainingSet,
    schedule: &TrainSchedule,
    policy: &AugmentPolicy,
    step: usize,
) -> Result<(Vec<FlowExample>, Vec<PathDraw>)> {
    let mut pick = rng::stream(schedule.seed, &format!("train/{step}/batch"));
    let mut batch = Vec::with_capacity(schedule.batch_size);
    let mut draws = Vec::with_capacity(schedule.batch_size);
    for i in 0..schedule.batch_size {
        let item = &data.items[pick.gen_range(0..data.items.len())];
        let mut r = rng::stream(schedule.seed, &format!("train/{step}/example/{i}"));
        let mask = sample_detail_mask(policy, item.hierarchy.n_frames(), &mut r);
        let features = assemble_features(&item.hierarchy, &mask)?;
        let features = apply_temporal_mask(&features, policy, &mut r);
        let c = drop_condition(&item.bundle, policy, &mut r);
        let ex = FlowExample {
            x1: item.latent.clone(),
            c,
            a: features,
        };
        draws.extend(draw_paths(std::slice::from_ref(&ex), &mut r));
        batch.push(ex);
    }
    Ok((batch, draws))
}

/// Train in place. `observer` sees every step and the updated model; checkpoints go to
/// `checkpoint` every `checkpoint_every` steps and at the end. A non-finite
/// loss aborts with a divergence error and leaves the last checkpoint on
/// disk untouched.
pub fn train(
    model: &mut VelocityModel,
    data: &TrainingSet,
    schedule: &TrainSchedule,
    policy: &AugmentPolicy,
    checkpoint: Option<&Path>,
    mut observer: impl FnMut(&StepReport, &VelocityModel),
) -> Result<TrainOutcome> {
    schedule.validate()?;
    policy.validate()?;
    if policy.l_max() != model.config.l_max {
        return Err(Error::InvalidConfig(format!(
            "augmentation covers levels 0..={}, model expects 0..={}",
            policy.l_max(),
            model.config.l_max
        )));
    }
    model.set_latent_stats(&data.latent_stats)?;
    model.set_feature_stats(&data.feature_mean, &data.feature_std)?;

    let groups: Vec<Group> = model.layout().slots.iter().map(|s| s.group).collect();
    let mut velocity: ParamSet = model.layout().zeros();
    let unfreeze = schedule.unfreeze_step();
    let mut losses = Vec::with_capacity(schedule.total_steps);

    for step in 0..schedule.total_steps {
        let frozen = step < unfreeze;
        if step == unfreeze {
            for (v, g) in velocity.tensors.iter_mut().zip(&groups) {
                if *g == Group::Modulation {
                    v.fill(0.0);
                }
            }
        }
        let (batch, draws) = augmented_batch(data, schedule, policy, step)?;
        let (loss, mut grad) = model.loss_and_gradient(&batch, &draws)?;
        let live = |g: Group| g == Group::Trunk || (g == Group::Modulation && !frozen);
        let grad_norm = grad.norm_sq(model.layout(), live).sqrt();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::TrainingDivergence { step, loss });
        }
        if schedule.clip_norm > 0.0 && grad_norm > schedule.clip_norm {
            grad.scale(schedule.clip_norm / grad_norm);
        }
        let step_size = schedule.step_size(step);
        for (((p, v), g), group) in model
            .params
            .tensors
            .iter_mut()
            .zip(velocity.tensors.iter_mut())
            .zip(&grad.tensors)
            .zip(&groups)
        {
            if !live(*group) {
                continue;
            }
            *v *= schedule.momentum;
            *v += g;
            p.scaled_add(-step_size, v);
            p.mapv_inplace(|x| x as f32 as f64);
        }
        losses.push(loss);
        observer(
            &StepReport {
                step,
                loss,
                step_size,
                grad_norm,
                frozen,
            },
            model,
        );
        if let Some(path) = checkpoint {
            let due = schedule.checkpoint_every > 0 && (step + 1) % schedule.checkpoint_every == 0;
            if due || step + 1 == schedule.total_steps {
                save_checkpoint(model, path)?;
            }
        }
    }
    Ok(TrainOutcome { losses })
}
