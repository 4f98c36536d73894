//! Experiment configuration, stage computations and the cached on-disk
//! runner.

mod config;
mod experiment;
mod runner;
mod stages;

pub use config::{
    default_models, DataSource, EmbedConfig, EvalConfig, ExperimentConfig, FeaturizeConfig, ModelSpec, RankConfig,
    RetrievalConfig, Scope, SegmentConfig, WindowConfig,
};
pub use experiment::Experiment;
pub use runner::{
    format_aggregates, format_queries, format_recall_scores, load_feature_set, model_path, parse_aggregates, parse_queries,
    plot, run_pipeline, run_stage, sha256_hex, train_stage, Manifest, Outcome, Stage, StageRecord, CONFIG, MANIFEST,
};
pub use stages::*;
