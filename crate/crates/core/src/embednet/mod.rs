//! Disentangled appearance/landmark encoder, its critics and losses, and
//! the two training stages.

mod config;
mod data;
mod losses;
mod model;
mod train;

pub use config::{
    stage1_schedule, stage2_schedule, CheckpointMeta, EncoderConfig, LossWeights, MarginConfig, UpdateSchedule,
};
pub use data::{Dataset, Sample};
pub use losses::{
    build_appearance_loss, build_landmark_loss, build_mi_loss, loss_appearance, loss_id, loss_landmark, loss_mi,
};
pub use model::{
    build_critic, build_encoder, build_id_loss, critic_score, encode, encode_batch, init_critic, init_encoder,
    init_id_head, init_model, normalize_columns, stack_images, EmbeddingTriple, EncoderNodes, CRITIC_A, CRITIC_G,
    ENCODER, ID_HEAD, TRUSTED,
};
pub use train::{
    critic_scores, stage1_graph, stage1_inputs, stage2_graph, stage2_inputs, stage2_pair_pools, train_stage1,
    train_stage2, Checkpoint, Stage1Config, Stage2Config, TrainPair, TrainReport,
};
