use afe_core::adaptive::{plan_edit, AdaptiveConfig, FingerprintOracle};
use afe_core::augment::AugmentPolicy;
use afe_core::edit::{edit_audio, Detail};
use afe_core::flow::{GuidanceWeights, SamplerConfig, Scheme};
use afe_core::model::{build_training_set, load_checkpoint_expecting, train, ModelConfig, TrainSchedule, VelocityModel};
use afe_core::signal::{load_manifest, load_scene, make_corpus, Split, SAMPLE_RATE};
use afe_core::Error;

#[test]
fn corpus_to_trained_model_to_edit() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_corpus(10, 4, dir.path()).unwrap();
    let (loaded, root) = load_manifest(dir.path().join("manifest.json")).unwrap();
    assert_eq!(loaded, manifest);
    let scenes: Vec<_> = loaded
        .split(Split::Train)
        .map(|e| load_scene(&root, e).unwrap())
        .collect();
    assert!(!scenes.is_empty());

    let cfg = ModelConfig {
        width: 8,
        cond_dim: 8,
        n_blocks: 1,
        ..ModelConfig::default()
    };
    let data = build_training_set(&scenes, cfg.l_max).unwrap();
    let mut model = VelocityModel::new(cfg.clone(), 2).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let schedule = TrainSchedule {
        total_steps: 8,
        batch_size: 2,
        ..TrainSchedule::default()
    };
    let outcome = train(&mut model, &data, &schedule, &AugmentPolicy::default(), Some(&ckpt), |_, _| {}).unwrap();
    assert_eq!(outcome.losses.len(), 8);
    assert!(outcome.losses.iter().all(|l| l.is_finite()));
    let restored = load_checkpoint_expecting(&ckpt, &cfg).unwrap();
    assert_eq!(restored, model);

    let other = ModelConfig { width: 12, ..cfg };
    assert!(matches!(load_checkpoint_expecting(&ckpt, &other), Err(Error::IncompatibleCheckpoint(_))));

    let (source, _, _) = &scenes[0];
    let (_, target, prompt) = &scenes[1];
    let oracle = FingerprintOracle::new().unwrap();
    let plan = plan_edit(&oracle, source, target, &AdaptiveConfig::default(), GuidanceWeights::default()).unwrap();
    assert_eq!(plan.window_scores.len(), 4);
    assert!(plan.level <= 3);

    let sampler = SamplerConfig {
        n_steps: 2,
        scheme: Scheme::Euler,
        seed: 1,
    };
    let run = |detail| edit_audio(&restored, source, target, *prompt, detail, &sampler, GuidanceWeights::default()).unwrap();
    let edited = run(Detail::Level(plan.level));
    assert_eq!(edited.sample_rate, SAMPLE_RATE);
    assert!((edited.duration() - source.duration()).abs() < 0.1);
    assert!(edited.samples.iter().all(|s| s.is_finite()));
    assert_eq!(run(Detail::Level(plan.level)), edited);
    assert!(edit_audio(&restored, source, target, *prompt, Detail::Level(4), &sampler, GuidanceWeights::default()).is_err());
}
