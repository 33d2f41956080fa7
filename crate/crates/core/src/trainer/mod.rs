//! Minibatch AdamW training, evaluation, checkpoints and the end-to-end
//! gradient check.

mod batch;
mod checkpoint;
mod config;
mod eval;
mod gradcheck;
mod metrics;
mod optim;
mod train;

pub use batch::{build_loss_graph, LossGraph};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::TrainConfig;
pub use eval::{
    check_integrators, decode_batch, encode_batch, evaluate, relative_l2, AlignmentRow,
    IntegratorCheck, IntegratorReport, SchemeGapRow,
};
pub use gradcheck::{
    gradcheck, gradient_error, tiny_configs, GradCheckConfig, GradCheckReport, GradCheckRow,
};
pub use metrics::{write_epoch_csv, write_eval_csv, EpochMetrics, EvalMetrics, MetricsRecord};
pub use optim::{decays, gradient_norm, lr_schedule, optimizer_step, AdamState};
pub use train::{init_model, thread_pool, train, Trainer, THREADS_ENV};
