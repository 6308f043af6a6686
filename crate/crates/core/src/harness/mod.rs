//! End-to-end experiment driver: config parsing, stage-cached pipeline,
//! manifests and plots.

mod config;
mod pipeline;
mod plots;

pub use config::{
    locate_key, parse_config, parse_config_str, ExperimentConfig, ExperimentSection, ModelConfig,
    RmConfig, WorldConfig,
};
pub use pipeline::{
    load_manifest, load_world, mean_std, prepare_world, run_epoch_ablation, run_epoch_ablation_in,
    run_full_experiment, run_full_experiment_in, verify_manifest, Artifact, RunManifest, RunRecord,
    RunSpec, SharedWorld, StageRecord, ABLATION_MANIFEST_FILE, DATASET_FILE, GOLD_FILE,
    MANIFEST_FILE, MANIFEST_FORMAT_VERSION, REFERENCE_FILE, TOOL_VERSION, WORLD_FILE,
};
pub use plots::{ablation_plot, emit_plots};
