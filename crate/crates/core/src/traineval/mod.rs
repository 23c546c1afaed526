//! Training, evaluation, ablation and error-map export.

mod ablate;
mod eval;
mod export;
mod metrics;
mod optim;
mod train;

pub use ablate::{ablate, AblationGrid, AblationRow, AblationTable};
pub use eval::{
    evaluate, predict_last, predict_mae, reconstructors, EvalReport, IntervalMetrics, LinearLsq, MeanField,
    ModelReconstructor, Oracle, Reconstructor, ReconstructorArgs, ZeroField,
};
pub use export::{export_error_maps, read_pgm16, ExportedStep};
pub use metrics::{mae, mae_loss, max_ae};
pub use optim::{global_norm, Adam, AdamConfig};
pub use train::{train, EpochSummary, TrainConfig, TrainReport, Trainer};
