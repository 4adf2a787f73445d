//! Configuration, datasets, metrics and experiment recipes.

pub mod config;
pub mod data;
pub mod experiment;
pub mod idx;
pub mod metrics;
pub mod models;

pub use config::{DatasetParams, ExperimentConfig, InqParams, ModelSize, Recipe, SuggestionParams, Task, TrainParams};
pub use data::{generate_dataset, load_dataset, Splits};
pub use experiment::{
    evaluate_model, evaluate_probs, metric_names, primary_metric, quantize_model, run_experiment, run_jobs,
    select_training_sets, train_float, ExperimentReport, Row, SelectionRun, Table,
};
pub use models::{architecture, build_model};
