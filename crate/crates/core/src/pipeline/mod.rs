//! Experiment plumbing: ingestion, splits, loss, training, metrics,
//! synthetic benchmarks and the repeated-run protocol.

mod config;
mod experiment;
mod featurize;
mod loss;
mod metrics;
mod split;
mod synth;
mod train;

pub use config::{ExperimentConfig, FeaturizerKind, ModelKind};
pub use experiment::{
    load_dataset, run_experiment, run_experiment_on, AggregateRow, ExperimentResults, RunRecord,
};
pub use featurize::{
    feature_csv, featurize_hashed, hash_token, read_feature_csv, read_text_corpus, Corpus,
};
pub use loss::masked_bce_loss;
pub use metrics::{compute_metrics, Confusion, MetricSummary, Metrics, MetricsReport};
pub use split::{make_split, SplitSpec};
pub use synth::{synth_corpus, synth_longrange, LongRangeBenchmark};
pub use train::{train, ChosenOrderRecord, TrainOptions, TrainOutcome};
