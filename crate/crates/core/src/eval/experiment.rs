//! Edit every instance under each level of detail, full masking and
//! adaptive level selection, then score the results.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::editset::{EditInstance, EditKind};
use super::metrics::{alignment_score, prompt_fidelity, structure_distance};
use crate::adaptive::{calibrate, plan_edit, AdaptiveConfig, EmbeddingOracle, OracleCalibration};
use crate::edit::{edit_audio, Detail};
use crate::error::{Error, Result};
use crate::flow::{GuidanceWeights, SamplerConfig};
use crate::model::VelocityModel;
use crate::rng;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
const CALIBRATION_SCENES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_edits: usize,
    /// Derived from the run's root seed, never read from a config file.
    #[serde(skip)]
    pub seed: u64,
    /// Fixed levels of detail to run for every edit.
    pub sweep: Vec<usize>,
    /// Also run with every acoustic feature masked.
    pub v2a: bool,
    /// Also run with the level chosen from the editability score.
    pub adaptive: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_edits: 60,
            seed: 0,
            sweep: vec![0, 1, 2, 3],
            v2a: true,
            adaptive: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fixed,
    Adaptive,
    V2a,
}

/// Key of a (mode, level) group in the aggregate table.
pub fn group_key(mode: Mode, level: Option<usize>) -> String {
    match (mode, level) {
        (Mode::Fixed, Some(l)) => format!("fixed_{l}"),
        (Mode::Adaptive, _) => "adaptive".into(),
        _ => "v2a".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub edit_id: String,
    pub kind: EditKind,
    pub source_class: usize,
    pub target_class: usize,
    pub mode: Mode,
    pub level: Option<usize>,
    pub editability: f64,
    pub alignment: f64,
    pub envelope_correlation: f64,
    pub log_spectral_distance: f64,
    pub degenerate: bool,
    pub prompt_fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: Mode,
    pub level: Option<usize>,
    pub n: usize,
    pub mean_level: Option<f64>,
    pub alignment: f64,
    pub envelope_correlation: f64,
    pub log_spectral_distance: f64,
    pub prompt_fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub config_fingerprint: String,
    pub seed: u64,
    pub oracle_calibration: OracleCalibration,
    pub rows: Vec<EvalRow>,
    pub aggregates: BTreeMap<String, Aggregate>,
}

impl MetricReport {
    /// Values of one metric for a group, in edit order.
    pub fn column(&self, key: &str, metric: impl Fn(&EvalRow) -> f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| group_key(r.mode, r.level) == key)
            .map(metric)
            .collect()
    }
}

fn aggregate(rows: &[EvalRow]) -> BTreeMap<String, Aggregate> {
    let mut groups: BTreeMap<String, Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(group_key(r.mode, r.level)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(key, rs)| {
            let n = rs.len();
            let mean = |f: &dyn Fn(&EvalRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n as f64;
            let first = rs[0];
            let levels: Vec<f64> = rs.iter().filter_map(|r| r.level.map(|l| l as f64)).collect();
            let agg = Aggregate {
                mode: first.mode,
                level: if first.mode == Mode::Fixed { first.level } else { None },
                n,
                mean_level: (!levels.is_empty()).then(|| levels.iter().sum::<f64>() / levels.len() as f64),
                alignment: mean(&|r| r.alignment),
                envelope_correlation: mean(&|r| r.envelope_correlation),
                log_spectral_distance: mean(&|r| r.log_spectral_distance),
                prompt_fidelity: mean(&|r| r.prompt_fidelity),
            };
            (key, agg)
        })
        .collect()
}

pub struct ExperimentSetup<'a> {
    pub model: &'a VelocityModel,
    pub oracle: &'a dyn EmbeddingOracle,
    pub eval: &'a EvalConfig,
    pub sampler: SamplerConfig,
    pub guidance: GuidanceWeights,
    pub adaptive: AdaptiveConfig,
    pub config_fingerprint: String,
    /// Root seed recorded in the report.
    pub seed: u64,
}

fn evaluate_edit(setup: &ExperimentSetup<'_>, edit: &EditInstance) -> Result<Vec<EvalRow>> {
    let plan = plan_edit(setup.oracle, &edit.source, &edit.target, &setup.adaptive, setup.guidance)?;
    // Every mode of one edit starts from the same noise, so comparisons are
    // paired.
    let sampler = SamplerConfig {
        seed: rng::derive_seed(setup.sampler.seed, &edit.spec.id),
        ..setup.sampler
    };
    let mut runs: Vec<(Mode, Option<usize>)> = setup.eval.sweep.iter().map(|&l| (Mode::Fixed, Some(l))).collect();
    if setup.eval.adaptive {
        runs.push((Mode::Adaptive, Some(plan.level)));
    }
    if setup.eval.v2a {
        runs.push((Mode::V2a, None));
    }
    let mut cache: BTreeMap<Option<usize>, Vec<f64>> = BTreeMap::new();
    let mut rows = Vec::with_capacity(runs.len());
    for (mode, level) in runs {
        let metrics = match cache.get(&level) {
            Some(m) => m.clone(),
            None => {
                let detail = level.map_or(Detail::None, Detail::Level);
                let audio = edit_audio(
                    setup.model,
                    &edit.source,
                    &edit.target,
                    edit.prompt,
                    detail,
                    &sampler,
                    setup.guidance,
                )?;
                let s = structure_distance(&edit.source, &audio)?;
                let m = vec![
                    alignment_score(setup.oracle, &audio, &edit.target)?,
                    s.envelope_correlation,
                    s.log_spectral_distance,
                    if s.degenerate { 1.0 } else { 0.0 },
                    prompt_fidelity(setup.oracle, &audio, edit.prompt)?,
                ];
                cache.insert(level, m.clone());
                m
            }
        };
        rows.push(EvalRow {
            edit_id: edit.spec.id.clone(),
            kind: edit.spec.kind,
            source_class: edit.spec.source_class,
            target_class: edit.spec.target_class,
            mode,
            level,
            editability: plan.score,
            alignment: metrics[0],
            envelope_correlation: metrics[1],
            log_spectral_distance: metrics[2],
            degenerate: metrics[3] != 0.0,
            prompt_fidelity: metrics[4],
        });
    }
    Ok(rows)
}

/// Run every edit under every configured mode. Edits are processed in
/// parallel; rows come back in edit order.
pub fn run_experiment(setup: &ExperimentSetup<'_>, edits: &[EditInstance]) -> Result<MetricReport> {
    let l_max = setup.model.config.l_max;
    if let Some(&bad) = setup.eval.sweep.iter().find(|&&l| l > l_max) {
        return Err(Error::InvalidConfig(format!("sweep level {bad} above the model's {l_max}")));
    }
    if setup.adaptive.l_max > l_max {
        return Err(Error::InvalidConfig(format!(
            "adaptive l_max {} above the model's {l_max}",
            setup.adaptive.l_max
        )));
    }
    let per_edit: Vec<Vec<EvalRow>> = edits
        .par_iter()
        .map(|e| evaluate_edit(setup, e))
        .collect::<Result<_>>()?;
    let rows: Vec<EvalRow> = per_edit.into_iter().flatten().collect();
    Ok(MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_fingerprint: setup.config_fingerprint.clone(),
        seed: setup.seed,
        oracle_calibration: calibrate(setup.oracle, CALIBRATION_SCENES, setup.eval.seed)?,
        aggregates: aggregate(&rows),
        rows,
    })
}

pub fn write_report_json(path: impl AsRef<Path>, report: &MetricReport) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serde_json::to_vec_pretty(report)?).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct TradeoffLine<'a> {
    group: &'a str,
    n: usize,
    mean_level: Option<f64>,
    alignment: f64,
    envelope_correlation: f64,
    log_spectral_distance: f64,
    prompt_fidelity: f64,
}

/// One line per group: structure, alignment and fidelity side by side.
pub fn write_tradeoff_csv(path: impl AsRef<Path>, report: &MetricReport) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for (key, a) in &report.aggregates {
        w.serialize(TradeoffLine {
            group: key,
            n: a.n,
            mean_level: a.mean_level,
            alignment: a.alignment,
            envelope_correlation: a.envelope_correlation,
            log_spectral_distance: a.log_spectral_distance,
            prompt_fidelity: a.prompt_fidelity,
        })
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
