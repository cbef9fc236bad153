//! Evaluation edits: keep a source scene, swap in a different target class
//! whose control track either reuses the source envelope (easy) or follows a
//! fresh one (hard).

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::{fresh_envelope, scene_for_class, synth_scene, AudioClip, ControlTrack, PromptLabel, N_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Easy,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSpec {
    pub id: String,
    pub source_class: usize,
    pub source_seed: u64,
    pub target_class: usize,
    pub target_seed: u64,
    pub kind: EditKind,
}

#[derive(Debug, Clone)]
pub struct EditInstance {
    pub spec: EditSpec,
    pub source: AudioClip,
    pub target: ControlTrack,
    pub prompt: PromptLabel,
}

/// Plan `n` edits; easy and hard alternate.
pub fn plan_edits(n: usize, seed: u64) -> Vec<EditSpec> {
    (0..n)
        .map(|i| {
            let mut r = rng::stream(seed, &format!("edit/{i}"));
            let source_class = r.gen_range(0..N_CLASSES);
            let target_class = (source_class + r.gen_range(1..N_CLASSES)) % N_CLASSES;
            EditSpec {
                id: format!("edit_{i:04}"),
                source_class,
                source_seed: r.gen(),
                target_class,
                target_seed: r.gen(),
                kind: if i % 2 == 0 { EditKind::Easy } else { EditKind::Hard },
            }
        })
        .collect()
}

pub fn render_edit(spec: &EditSpec) -> Result<EditInstance> {
    if spec.source_class >= N_CLASSES || spec.target_class >= N_CLASSES {
        return Err(Error::invalid(format!("{}: class out of range", spec.id)));
    }
    let source_scene = scene_for_class(spec.source_class, spec.source_seed);
    let (source, _, _) = synth_scene(&source_scene)?;
    let mut target_scene = scene_for_class(spec.target_class, spec.target_seed);
    target_scene.envelope = match spec.kind {
        EditKind::Easy => source_scene.envelope.clone(),
        EditKind::Hard => fresh_envelope(&mut rng::stream(spec.target_seed, "hard-envelope"), source_scene.duration_s),
    };
    let (_, target, prompt) = synth_scene(&target_scene)?;
    Ok(EditInstance {
        spec: spec.clone(),
        source,
        target,
        prompt,
    })
}

pub fn make_edit_set(n: usize, seed: u64) -> Result<Vec<EditInstance>> {
    plan_edits(n, seed).iter().map(render_edit).collect()
}
