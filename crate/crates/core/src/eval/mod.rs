//! Evaluation: metrics, statistics, the edit set and experiment runs.

mod editset;
mod experiment;
mod metrics;
mod stats;

pub use editset::{make_edit_set, plan_edits, render_edit, EditInstance, EditKind, EditSpec};
pub use experiment::{
    group_key, run_experiment, write_report_json, write_tradeoff_csv, Aggregate, EvalConfig, EvalRow,
    ExperimentSetup, MetricReport, Mode, REPORT_SCHEMA_VERSION,
};
pub use metrics::{
    alignment_score, envelope, pearson, prompt_fidelity, structure_distance, subclip_similarities, StructureDistance,
    FIDELITY_SUBCLIPS,
};
pub use stats::{paired_t_test_greater, PairedTest};
