//! Loss, optimizer, schedule and the training loop.

pub mod loss;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use loss::{cross_entropy, cross_entropy_grad};
pub use optim::{sgd_momentum_step, Sgd};
pub use schedule::{lr_at, Schedule};
pub use trainer::{
    accuracy, argmax, evaluate, evaluate_checkpoint, load_checkpoint, metrics_text, sidecar_path, train, train_run,
    write_run, EpochMetrics, TrainConfig, TrainOutcome, CHECKPOINT_FILE, METRICS_FILE,
};
