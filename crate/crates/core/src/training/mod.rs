//! Adam with an optional moving-average filter over its updates, learning-rate
//! schedules driven by gradient coherence, and the training loop.

mod coherence;
mod optim;
mod schedule;
mod train;

pub use coherence::{sigma_g, Coherence};
pub use optim::{apply_update, AdamConfig, AdamState, EmaConfig, EmaMode, EmaState};
pub use schedule::{Scheduler, SchedulerConfig, SchedulerKind};
pub use train::{
    evaluate, probe_coherence, train, train_from, LossReduction, MetricRecord, StopReason, TrainConfig, TrainOutcome,
    DATA_STREAM, EVAL_STREAM, INIT_STREAM, PROBE_STREAM, TASK_STREAM,
};
