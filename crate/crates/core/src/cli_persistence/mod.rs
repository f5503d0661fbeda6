//! Run configuration, checkpoint files and the command-line front end.

mod checkpoint;
mod cli;
mod config;
mod state;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedArray, RngState, FORMAT_VERSION, MAGIC};
pub use cli::{
    cli_main, dataset_splits, default_run_root, evaluate_samples, fit_aux_prior, pgm_bytes, read_samples, train_model,
    write_dataset, write_samples, DatasetManifest, MetricRecord, SampleManifest, AUX_CHECKPOINT_FILE, CHECKPOINT_FILE,
    CONFIG_FILE, DEFAULT_RUN_ROOT, MANIFEST_FILE, METRICS_FILE, RUN_DIR_ENV, SAMPLES_DIR,
};
pub use config::{apply_override, config_hash, DataConfig, DataPreset, EvalConfig, RunConfig, TrainConfig};
pub use state::{aux_checkpoint, load_aux, load_model, model_checkpoint, restore_trainer, AUX_KIND, MODEL_KIND};
