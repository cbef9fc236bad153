use std::path::{Path, PathBuf};

use afe_core::adaptive::{
    quantize_level, EditPlan, Editability, EmbeddingOracle, ExternalEmbeddings, FingerprintOracle, OracleKind,
};
use afe_core::config::RunConfig;
use afe_core::edit::{edit_audio, Detail};
use afe_core::eval::{make_edit_set, run_experiment, write_report_json, write_tradeoff_csv, ExperimentSetup};
use afe_core::features::{extract, write_features_bin, write_features_json};
use afe_core::model::{build_training_set, load_checkpoint_expecting, train, VelocityModel};
use afe_core::signal::{
    load_control, load_manifest, load_scene, load_wav, make_corpus, resample, save_wav, AudioClip, PromptLabel,
    Split, SAMPLE_RATE,
};
use afe_core::{Error, Result};
use serde::Serialize;

use crate::{Command, DumpFormat, OracleArgs};

const PROGRESS_EVERY: usize = 100;

/// Written next to every artifact so it can be traced to its configuration.
#[derive(Serialize)]
struct Provenance<'a, T: Serialize> {
    command: &'a str,
    config_fingerprint: String,
    seed: u64,
    #[serde(flatten)]
    details: T,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_provenance(path: &Path, command: &str, cfg: &RunConfig, details: impl Serialize) -> Result<()> {
    write_json(
        path,
        &Provenance {
            command,
            config_fingerprint: cfg.fingerprint(),
            seed: cfg.seed,
            details,
        },
    )
}

pub fn dispatch(command: &Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Synth { out, .. } => synth(out, cfg),
        Command::Features {
            input,
            out,
            format,
            level,
        } => features(input, out, *format, *level, cfg),
        Command::Train { manifest, out, .. } => train_cmd(manifest, out, cfg),
        Command::Edit {
            checkpoint,
            source,
            control,
            class,
            out,
            level,
            full_mask,
            oracle,
            ..
        } => {
            let detail = match (level, full_mask) {
                (_, true) => Some(Detail::None),
                (Some(l), _) => Some(Detail::Level(*l)),
                _ => None,
            };
            edit_cmd(checkpoint, source, control, *class, out, detail, oracle, cfg)
        }
        Command::Score {
            source,
            control,
            oracle,
        } => score_cmd(source.as_deref(), control.as_deref(), oracle, cfg),
        Command::Eval { checkpoint, out, csv, .. } => eval_cmd(checkpoint, out, csv.as_deref(), cfg),
    }
}

fn synth(out: &Path, cfg: &RunConfig) -> Result<()> {
    let manifest = make_corpus(cfg.corpus.n, cfg.corpus_seed(), out)?;
    write_provenance(
        &out.join("run.json"),
        "synth",
        cfg,
        serde_json::json!({ "n": manifest.entries.len() }),
    )?;
    eprintln!("wrote {} scenes to {}", manifest.entries.len(), out.display());
    Ok(())
}

fn load_audio(path: &Path) -> Result<AudioClip> {
    let clip = load_wav(path)?;
    if clip.sample_rate == SAMPLE_RATE {
        Ok(clip)
    } else {
        resample(&clip, SAMPLE_RATE)
    }
}

fn features(input: &Path, out: &Path, format: DumpFormat, level: Option<usize>, cfg: &RunConfig) -> Result<()> {
    let l_max = cfg.features.l_max;
    let level = level.unwrap_or(l_max);
    if level > l_max {
        return Err(Error::InvalidConfig(format!("--level {level} exceeds l_max {l_max}")));
    }
    let f = extract(&load_audio(input)?, level, l_max)?;
    match format {
        DumpFormat::Json => write_features_json(out, &f)?,
        DumpFormat::Bin => write_features_bin(out, &f)?,
    }
    write_provenance(&sidecar(out), "features", cfg, serde_json::json!({ "level": level }))
}

#[derive(Serialize)]
struct TrainDetails {
    n_train: usize,
    n_parameters: usize,
    losses: Vec<f64>,
}

fn train_cmd(manifest_path: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let (manifest, root) = load_manifest(manifest_path)?;
    let scenes = manifest
        .split(Split::Train)
        .map(|e| load_scene(&root, e))
        .collect::<Result<Vec<_>>>()?;
    let data = build_training_set(&scenes, cfg.model.l_max)?;
    let mut model = VelocityModel::new(cfg.model.clone(), cfg.model_seed())?;
    let schedule = cfg.train_schedule();
    let outcome = train(&mut model, &data, &schedule, &cfg.augment, Some(out), |r, _| {
        if r.step % PROGRESS_EVERY == 0 {
            eprintln!("step {:>6}  loss {:.4}  grad {:.3}", r.step, r.loss, r.grad_norm);
        }
    })?;
    write_provenance(
        &sidecar(out),
        "train",
        cfg,
        TrainDetails {
            n_train: scenes.len(),
            n_parameters: model.n_parameters(),
            losses: outcome.losses,
        },
    )
}

fn load_model(path: &Path, cfg: &RunConfig) -> Result<VelocityModel> {
    if !path.exists() {
        return Err(Error::InvalidConfig(format!("checkpoint {} does not exist", path.display())));
    }
    load_checkpoint_expecting(path, &cfg.model)
}

fn external_embeddings(oracle: &OracleArgs) -> Result<ExternalEmbeddings> {
    let path = oracle
        .embeddings
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--oracle external needs --embeddings".into()))?;
    ExternalEmbeddings::load(path)
}

/// Editability from whichever oracle the config selects.
fn editability(
    audio: Option<&AudioClip>,
    control: Option<&afe_core::signal::ControlTrack>,
    oracle: &OracleArgs,
    cfg: &RunConfig,
) -> Result<Editability> {
    match cfg.adaptive.oracle {
        OracleKind::External => external_embeddings(oracle)?.score(),
        OracleKind::Fingerprint => match (audio, control) {
            (Some(a), Some(c)) => afe_core::adaptive::editability_score(&FingerprintOracle::new()?, a, c),
            _ => Err(Error::InvalidConfig("the fingerprint oracle needs --source and --control".into())),
        },
    }
}

#[derive(Serialize)]
struct EditDetails {
    ac: bool,
    detail: Detail,
    target_class: usize,
    plan: Option<EditPlan>,
}

#[allow(clippy::too_many_arguments)]
fn edit_cmd(
    checkpoint: &Path,
    source: &Path,
    control: &Path,
    class: usize,
    out: &Path,
    forced: Option<Detail>,
    oracle: &OracleArgs,
    cfg: &RunConfig,
) -> Result<()> {
    let model = load_model(checkpoint, cfg)?;
    if class >= model.config.n_classes {
        return Err(Error::InvalidInput(format!("class {class} out of range")));
    }
    let audio = load_audio(source)?;
    let mut target = load_control(control)?;
    target.class_id = class;
    let (detail, plan) = match forced {
        Some(d) => (d, None),
        None => {
            let e = editability(Some(&audio), Some(&target), oracle, cfg)?;
            let plan = EditPlan::from_editability(e, &cfg.adaptive, cfg.guidance)?;
            (Detail::Level(plan.level), Some(plan))
        }
    };
    let edited = edit_audio(
        &model,
        &audio,
        &target,
        PromptLabel::class(class),
        detail,
        &cfg.sampler_config(),
        cfg.guidance,
    )?;
    save_wav(out, &edited)?;
    write_provenance(
        &sidecar(out),
        "edit",
        cfg,
        EditDetails {
            ac: plan.is_some(),
            detail,
            target_class: class,
            plan,
        },
    )
}

#[derive(Serialize)]
struct ScoreOutput {
    score: f64,
    level: usize,
    windows: Vec<f64>,
}

fn score_cmd(source: Option<&Path>, control: Option<&Path>, oracle: &OracleArgs, cfg: &RunConfig) -> Result<()> {
    let audio = source.map(load_audio).transpose()?;
    let track = control.map(load_control).transpose()?;
    let e = editability(audio.as_ref(), track.as_ref(), oracle, cfg)?;
    let a = &cfg.adaptive;
    let out = ScoreOutput {
        level: quantize_level(e.score, a.s_min, a.s_max, a.l_max),
        score: e.score,
        windows: e.window_scores,
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

fn eval_cmd(checkpoint: &Path, out: &Path, csv: Option<&Path>, cfg: &RunConfig) -> Result<()> {
    if cfg.adaptive.oracle != OracleKind::Fingerprint {
        return Err(Error::InvalidConfig(
            "evaluation scores generated audio, so it needs the fingerprint oracle".into(),
        ));
    }
    let model = load_model(checkpoint, cfg)?;
    let oracle = FingerprintOracle::new()?;
    let eval = cfg.eval_config();
    let edits = make_edit_set(eval.n_edits, eval.seed)?;
    let setup = ExperimentSetup {
        model: &model,
        oracle: &oracle as &dyn EmbeddingOracle,
        eval: &eval,
        sampler: cfg.sampler_config(),
        guidance: cfg.guidance,
        adaptive: cfg.adaptive,
        config_fingerprint: cfg.fingerprint(),
        seed: cfg.seed,
    };
    let report = run_experiment(&setup, &edits)?;
    write_report_json(out, &report)?;
    if let Some(csv) = csv {
        write_tradeoff_csv(csv, &report)?;
    }
    for (key, agg) in &report.aggregates {
        eprintln!(
            "{key:<10} n={:<4} alignment {:.3}  envelope {:.3}  lsd {:.2}",
            agg.n, agg.alignment, agg.envelope_correlation, agg.log_spectral_distance
        );
    }
    Ok(())
}
