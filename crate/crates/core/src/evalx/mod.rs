//! Evaluation: datasets, ranking metrics, synthetic episodes and the
//! think-off / think-on / aligned experiment runner.

pub mod dataset;
pub mod experiment;
pub mod metrics;
pub mod synth;

pub use dataset::{load_dataset, parse_dataset, to_jsonl, DatasetError, EpisodeRecord};
pub use experiment::{
    evaluate, run_experiment, BackendSpec, DatasetSource, ExperimentConfig, Method, Metric, RemoteSpec,
    ReportRow, ReportTable,
};
pub use metrics::{ndcg_at_k, recall_at_k, MetricError};
pub use synth::{synth_dataset, CotStyle};
