use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{load_wav, save_wav, scene_for_class, synth_scene, AudioClip, ControlTrack, PromptLabel, N_CLASSES};
use crate::error::{Error, Result};
use crate::rng;

/// Fraction of entries assigned to the validation split.
const VAL_EVERY: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub wav_path: String,
    pub control_path: String,
    pub class_id: usize,
    pub seed: u64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub split_seed: u64,
    pub class_counts: Vec<usize>,
    pub entries: Vec<CorpusEntry>,
}

impl Manifest {
    /// Plan `n` scenes without rendering them. Classes are dealt round-robin
    /// and shuffled, so every class appears `n / 8` or `n / 8 + 1` times.
    pub fn plan(n: usize, split_seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("corpus size must be at least 1"));
        }
        let mut classes: Vec<usize> = (0..n).map(|i| i % N_CLASSES).collect();
        classes.shuffle(&mut rng::stream(split_seed, "classes"));
        let mut class_counts = vec![0; N_CLASSES];
        let entries = classes
            .into_iter()
            .enumerate()
            .map(|(i, class_id)| {
                class_counts[class_id] += 1;
                let id = format!("scene_{i:05}");
                let split = if rng::derive_seed(split_seed, &format!("split/{i}")) % VAL_EVERY == 0 {
                    Split::Val
                } else {
                    Split::Train
                };
                CorpusEntry {
                    wav_path: format!("audio/{id}.wav"),
                    control_path: format!("control/{id}.json"),
                    id,
                    class_id,
                    seed: rng::derive_seed(split_seed, &format!("scene/{i}")),
                    split,
                }
            })
            .collect();
        Ok(Self {
            split_seed,
            class_counts,
            entries,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Render `n` scenes into `out_dir` and write `manifest.json` next to them.
pub fn make_corpus(n: usize, split_seed: u64, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    let manifest = Manifest::plan(n, split_seed)?;
    for sub in ["audio", "control"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for entry in &manifest.entries {
        let (audio, control, _) = synth_scene(&scene_for_class(entry.class_id, entry.seed))?;
        save_wav(out_dir.join(&entry.wav_path), &audio)?;
        save_control(out_dir.join(&entry.control_path), &control)?;
    }
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Read a manifest; returns it with the directory its paths are relative to.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<(Manifest, PathBuf)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest = serde_json::from_slice(&bytes)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, root))
}

pub fn save_control(path: impl AsRef<Path>, track: &ControlTrack) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serde_json::to_vec(track)?).map_err(|e| Error::io(path, e))
}

pub fn load_control(path: impl AsRef<Path>) -> Result<ControlTrack> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Audio, control track and prompt of a manifest entry.
pub fn load_scene(root: &Path, entry: &CorpusEntry) -> Result<(AudioClip, ControlTrack, PromptLabel)> {
    let audio = load_wav(root.join(&entry.wav_path))?;
    let control = load_control(root.join(&entry.control_path))?;
    if control.class_id != entry.class_id {
        return Err(Error::Format(format!(
            "{}: control track class {} disagrees with manifest class {}",
            entry.id, control.class_id, entry.class_id
        )));
    }
    Ok((audio, control, PromptLabel::class(entry.class_id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn ten_entries_with_distinct_seeds() {
        let m = Manifest::plan(10, 5).unwrap();
        assert_eq!(m.entries.len(), 10);
        let seeds: HashSet<u64> = m.entries.iter().map(|e| e.seed).collect();
        assert_eq!(seeds.len(), 10);
    }

    #[test]
    fn plan_is_deterministic() {
        assert_eq!(Manifest::plan(50, 9).unwrap(), Manifest::plan(50, 9).unwrap());
        assert_ne!(Manifest::plan(50, 9).unwrap(), Manifest::plan(50, 10).unwrap());
    }

    #[test]
    fn class_tally_within_binomial_bounds() {
        let m = Manifest::plan(200, 1).unwrap();
        let mut tally = vec![0; N_CLASSES];
        for e in &m.entries {
            tally[e.class_id] += 1;
        }
        assert_eq!(tally, m.class_counts);
        assert!(tally.iter().all(|&c| (15..=35).contains(&c)), "{tally:?}");
    }

    #[test]
    fn both_splits_present() {
        let m = Manifest::plan(200, 1).unwrap();
        let val = m.split(Split::Val).count();
        assert!(val > 5 && val < 40, "val count {val}");
    }

    #[test]
    fn zero_size_rejected() {
        assert!(Manifest::plan(0, 1).is_err());
    }

    #[test]
    fn corpus_written_and_reloaded() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_corpus(3, 4, dir.path()).unwrap();
        let (back, root) = load_manifest(dir.path().join("manifest.json")).unwrap();
        assert_eq!(m, back);
        for e in &back.entries {
            let clip = crate::signal::load_wav(root.join(&e.wav_path)).unwrap();
            assert_eq!(clip.len(), 128_000);
            let ctrl: crate::signal::ControlTrack =
                serde_json::from_slice(&fs::read(root.join(&e.control_path)).unwrap()).unwrap();
            assert_eq!(ctrl.class_id, e.class_id);
        }
    }

    #[test]
    fn unwritable_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        assert!(matches!(
            make_corpus(1, 1, blocker.join("sub")),
            Err(Error::Io { .. })
        ));
    }
}
