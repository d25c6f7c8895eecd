//! Flow-matching training: objectives, the optimizer, and stage orchestration.

pub mod flow;
pub mod optim;
pub mod stage;

pub use flow::{draw_audio, draw_pair, fm_loss, fm_loss_on, fm_loss_reduced, joint_loss, Interpolant, LossWeights, Reduction};
pub use optim::{AdamW, AdamWConfig};
pub use stage::{
    eval_loss, fusion_groups, train_stage, EvalRecord, MetricRecord, Stage, StageConfig, TrainOptions, TrainReport,
};
