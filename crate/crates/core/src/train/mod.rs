//! Training loop, evaluation, ablation sweeps, metrics and gradient checks.

mod ablate;
mod config;
mod gradcheck;
mod metrics;
mod run;

pub use ablate::{ablate, ablation_jsonl, ablation_table, baseline_rows, cumulative_rows, AblationResult, AblationRow, AblationStatus};
pub use config::RunConfig;
pub use gradcheck::{gradcheck, random_batch, GradcheckConfig, GradcheckReport, GroupCheck};
pub use metrics::{macro_f1, per_class, ClassMetrics, Confusion, MetricsReport};
pub use run::{
    evaluate, evaluate_encoded, evaluate_raw, load_embeddings_for, load_split, load_trained, split_validation, train,
    train_in_memory, train_prepared, EpochRecord, TrainArtifacts, TrainOutcome,
};
