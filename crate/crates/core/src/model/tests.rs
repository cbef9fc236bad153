use super::*;
use crate::augment::AugmentPolicy;
use crate::flow::{draw_paths, fm_loss_with, standard_normal};
use crate::signal::{scene_for_class, synth_scene, ControlTrack, PromptLabel};
use rand_distr::StandardNormal;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        latent_channels: 4,
        width: 8,
        cond_dim: 8,
        n_blocks: 2,
        n_classes: 3,
        l_max: 1,
        conv_kernel: 3,
        sync_modulation: true,
    }
}

fn random_example(cfg: &ModelConfig, frames: usize, seed: u64) -> FlowExample {
    let mut r = rng::from_seed(seed);
    let x1 = standard_normal(cfg.latent_channels, frames, &mut r);
    let control = ControlTrack {
        frames: Array2::from_shape_simple_fn((frames + 3, cfg.n_classes), || r.gen_range(0.0..1.0)),
        frame_rate: 20.0,
        class_id: 1,
    };
    let a = AcousticFeatures {
        channels: Array2::from_shape_simple_fn((cfg.feature_channels(), 2 * frames), || {
            StandardNormal.sample(&mut r)
        }),
        l_max: cfg.l_max,
    };
    FlowExample {
        x1,
        c: ConditionBundle::new(PromptLabel::class(1), control, frames),
        a,
    }
}

use rand::Rng as _;

#[test]
fn default_model_fits_budget() {
    let m = VelocityModel::new(ModelConfig::default(), 0).unwrap();
    assert!(m.n_parameters() <= 2_000_000);
    assert!(m.n_parameters() > 10_000);
}

#[test]
fn fresh_model_ignores_acoustic_features() {
    let cfg = tiny_config();
    let m = VelocityModel::new(cfg.clone(), 3).unwrap();
    let ex = random_example(&cfg, 9, 4);
    let x = standard_normal(cfg.latent_channels, 9, &mut rng::from_seed(5));
    for t in [0.0, 0.37, 1.0] {
        let with = m.forward(&x, t, &ex.c, &ex.a).unwrap();
        let without = m.forward(&x, t, &ex.c, &ex.a.null_like()).unwrap();
        assert_eq!(with, without);
    }
}

#[test]
fn null_condition_output_depends_only_on_state_and_time() {
    let cfg = tiny_config();
    let m = VelocityModel::randomized(cfg.clone(), 1).unwrap();
    let e1 = random_example(&cfg, 7, 1);
    let e2 = random_example(&cfg, 7, 2);
    let x = standard_normal(cfg.latent_channels, 7, &mut rng::from_seed(3));
    let y1 = m.forward(&x, 0.4, &e1.c.null(), &e1.a.null_like()).unwrap();
    let y2 = m.forward(&x, 0.4, &e2.c.null(), &e2.a.null_like()).unwrap();
    assert_eq!(y1, y2);
    assert!(y1.is_finite());
    let y3 = m.forward(&x, 0.5, &e1.c.null(), &e1.a.null_like()).unwrap();
    assert_ne!(y1, y3);
}

#[test]
fn shape_mismatches_are_rejected() {
    let cfg = tiny_config();
    let m = VelocityModel::new(cfg.clone(), 0).unwrap();
    let ex = random_example(&cfg, 6, 0);
    let wrong = LatentClip::zeros(cfg.latent_channels + 1, 6);
    assert!(m.forward(&wrong, 0.5, &ex.c, &ex.a).is_err());
    let short = LatentClip::zeros(cfg.latent_channels, 5);
    assert!(m.forward(&short, 0.5, &ex.c, &ex.a).is_err());
    let bad_a = AcousticFeatures::null(cfg.l_max + 1, 12);
    assert!(m.forward(&ex.x1, 0.5, &ex.c, &bad_a).is_err());
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn loss_gradient_matches_central_differences() {
    let cfg = tiny_config();
    for seed in 0..3 {
        let mut m = VelocityModel::randomized(cfg.clone(), seed).unwrap();
        assert!(m.n_parameters() <= 5_000);
        let batch: Vec<_> = (0..2).map(|i| random_example(&cfg, 6, 100 * seed + i)).collect();
        let draws = draw_paths(&batch, &mut rng::from_seed(seed));
        let (loss, grad) = m.loss_and_gradient(&batch, &draws).unwrap();
        assert!((loss - fm_loss_with(&m, &batch, &draws).unwrap()).abs() < 1e-12 * loss);
        let h = 1e-4;
        let mut worst = 0.0f64;
        let flat: Vec<f64> = grad.flat().collect();
        let groups: Vec<Group> = m
            .layout()
            .slots
            .iter()
            .flat_map(|s| std::iter::repeat(s.group).take(s.shape.0 * s.shape.1))
            .collect();
        for i in 0..flat.len() {
            if groups[i] == Group::Buffer {
                continue;
            }
            let orig = *m.params.scalar_mut(i);
            *m.params.scalar_mut(i) = orig + h;
            let hi = fm_loss_with(&m, &batch, &draws).unwrap();
            *m.params.scalar_mut(i) = orig - h;
            let lo = fm_loss_with(&m, &batch, &draws).unwrap();
            *m.params.scalar_mut(i) = orig;
            worst = worst.max(relative_error(flat[i], (hi - lo) / (2.0 * h)));
        }
        assert!(worst < 1e-4, "seed {seed}: worst relative error {worst}");
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = tiny_config();
    let m = VelocityModel::randomized(cfg.clone(), 7).unwrap();
    save_checkpoint(&m, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, m);
    let ex = random_example(&cfg, 5, 1);
    let y = m.forward(&ex.x1, 0.3, &ex.c, &ex.a).unwrap();
    let y2 = back.forward(&ex.x1, 0.3, &ex.c, &ex.a).unwrap();
    assert_eq!(y.values.as_slice().unwrap(), y2.values.as_slice().unwrap());

    let fresh = VelocityModel::new(cfg.clone(), 2).unwrap();
    save_checkpoint(&fresh, &path).unwrap();
    let back = load_checkpoint_expecting(&path, &cfg).unwrap();
    assert_eq!(
        back.forward(&ex.x1, 0.3, &ex.c, &ex.a).unwrap(),
        back.forward(&ex.x1, 0.3, &ex.c, &ex.a.null_like()).unwrap()
    );

    let other = ModelConfig { width: 16, ..cfg };
    assert!(matches!(
        load_checkpoint_expecting(&path, &other),
        Err(Error::IncompatibleCheckpoint(_))
    ));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[12] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::IncompatibleCheckpoint(_))));
    std::fs::write(&path, b"nope").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
}

fn tiny_training_set() -> (ModelConfig, TrainingSet) {
    let scenes: Vec<_> = (0..4).map(|i| synth_scene(&scene_for_class(i, i as u64)).unwrap()).collect();
    let cfg = ModelConfig {
        width: 4,
        cond_dim: 4,
        n_blocks: 1,
        ..ModelConfig::default()
    };
    let data = build_training_set(&scenes, cfg.l_max).unwrap();
    (cfg, data)
}

#[test]
fn frozen_phase_keeps_modulation_fixed() {
    let (cfg, data) = tiny_training_set();
    let schedule = TrainSchedule {
        total_steps: 40,
        batch_size: 1,
        freeze_fraction: 0.5,
        ..TrainSchedule::default()
    };
    let mut m = VelocityModel::new(cfg, 0).unwrap();
    let start_mod = m.modulation_params();
    let start_trunk = m.trunk_params();
    let mut first_change = None;
    let mut trunk_moved_while_frozen = false;
    train(&mut m, &data, &schedule, &AugmentPolicy::default(), None, |r, model| {
        if first_change.is_none() && model.modulation_params() != start_mod {
            first_change = Some(r.step);
        }
        if r.frozen && model.trunk_params() != start_trunk {
            trunk_moved_while_frozen = true;
        }
    })
    .unwrap();
    assert_eq!(first_change, Some(20));
    assert!(trunk_moved_while_frozen);

    let schedule = TrainSchedule {
        freeze_fraction: 1.0,
        total_steps: 10,
        ..schedule
    };
    let mut m = VelocityModel::new(m.config.clone(), 0).unwrap();
    let before = m.modulation_params();
    train(&mut m, &data, &schedule, &AugmentPolicy::default(), None, |_, _| {}).unwrap();
    assert_eq!(m.modulation_params(), before);
}

#[test]
fn training_is_deterministic_and_checkpoints() {
    let (cfg, data) = tiny_training_set();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let schedule = TrainSchedule {
        total_steps: 6,
        batch_size: 2,
        checkpoint_every: 2,
        ..TrainSchedule::default()
    };
    let policy = AugmentPolicy::default();
    let mut a = VelocityModel::new(cfg.clone(), 1).unwrap();
    let mut b = VelocityModel::new(cfg, 1).unwrap();
    let la = train(&mut a, &data, &schedule, &policy, Some(&path), |_, _| {}).unwrap();
    let lb = train(&mut b, &data, &schedule, &policy, None, |_, _| {}).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a, b);
    assert_eq!(load_checkpoint(&path).unwrap(), a);
    assert_eq!(a.latent_stats(), {
        let mut s = data.latent_stats.clone();
        s.mean.iter_mut().chain(s.std.iter_mut()).for_each(|v| *v = *v as f32 as f64);
        s
    });
}

#[test]
fn bad_schedules_are_config_errors() {
    let (cfg, data) = tiny_training_set();
    let mut m = VelocityModel::new(cfg, 0).unwrap();
    let policy = AugmentPolicy::default();
    for schedule in [
        TrainSchedule { freeze_fraction: 1.5, ..Default::default() },
        TrainSchedule { total_steps: 0, ..Default::default() },
    ] {
        assert!(matches!(
            train(&mut m, &data, &schedule, &policy, None, |_, _| {}),
            Err(Error::InvalidConfig(_))
        ));
    }
    assert!(matches!(
        train(&mut m, &data, &TrainSchedule::default(), &AugmentPolicy::identity(1), None, |_, _| {}),
        Err(Error::InvalidConfig(_))
    ));
}
