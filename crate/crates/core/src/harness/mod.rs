//! Experiment orchestration and artifacts.

pub mod artifacts;
mod config;
mod run;
mod similarity;
mod stability;
mod sweeps;

pub use artifacts::EpochRecord;
pub use config::{ExperimentConfig, HarnessConfig, Method};
pub use run::{run_experiment, run_with_backbone, steps_to_fraction, task_spec, RunResult};
pub use similarity::{cosine_matrix, prompt_similarity_matrix, write_similarity_csv, SimilarityMatrix};
pub use stability::{render_stability, stability_report, StabilityRow};
pub use sweeps::{
    compare_methods, run_dropout_comparison, run_grid, run_m_ablation, write_curves, Comparison, ConditionStats,
    DropoutComparison, DropoutPair, DropoutSummary, MAblation, MPoint, ScoreTable,
};
