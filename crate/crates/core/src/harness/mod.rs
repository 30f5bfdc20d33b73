//! Experiment orchestration: configuration, seeded runs, ablations and
//! result files.

mod ablation;
mod config;
mod experiment;
mod output;

pub use ablation::{
    default_init_settings, run_ablation_init, run_ablation_node_blocks, run_rademacher_curve, BlockAblationRow,
    InitAblationRow, InitSetting, RademacherCurve, Stat, DEFAULT_BLOCK_GRID, INIT_ABLATION_EPOCHS,
};
pub use config::{DatasetConfig, DatasetKind, ExperimentConfig, LayerSpec, Seeds, Variant};
pub use experiment::{
    accuracy, build_stack, default_init, finish_run, independent_accuracies, prepare_run, represent_tasks,
    run_experiment, run_variants, run_variants_on, squared_loss, stack_digest, train_sequence, HeadInit, Pools,
    PreparedRun, RunResult, TaskReps, Trained,
};
pub use output::{
    emit_block_ablation, emit_init_ablation, emit_rademacher, emit_results, r_matrix_file_name, read_results,
    SUMMARY_HEADER,
};
