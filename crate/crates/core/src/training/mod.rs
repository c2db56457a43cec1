//! Optimization, scoring, cost accounting and ablation suites.

pub mod ablation;
pub mod metrics;
pub mod optim;
pub mod report;
pub mod train;

pub use ablation::{run_ablation, variants, AblationRow, Suite, Variant};
pub use metrics::{metrics, ConfusionMatrix, Metrics};
pub use optim::{Optimizer, OptimizerKind};
pub use report::{
    ablation_csv, write_ablation_csv, write_json, RunReport, SampleRoute, TraceReport,
};
pub use train::{
    cost, cross_entropy, evaluate, mean_loss, train, EvalReport, Evaluation, PreparedData,
    TrainConfig, TrainOutcome,
};
