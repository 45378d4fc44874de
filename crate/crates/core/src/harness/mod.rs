//! Training, evaluation and the ablation runner.

mod ablation;
mod evaluate;
mod optim;
mod train;

pub use ablation::{
    published, render_table, run_ablation, run_variant, AblationReport, AblationRow, RunSettings, Splits,
    PUBLISHED_RESULTS, REFERENCE_FOOTNOTE,
};
pub use evaluate::{config_digest, evaluate, EvalConfig, GroundTruthStub, MetricsReport, Predictor, Trained};
pub use optim::{OptimConfig, Sgd};
pub use train::{read_log, train, validation_loss, write_log, LogRecord, TrainConfig, TrainOutcome};
