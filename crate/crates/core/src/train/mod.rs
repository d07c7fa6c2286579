//! Optimization: supervised, adversarial and ROI-GAN steps, the epoch loop
//! and checkpoints.

mod adam;
mod batch;
mod checkpoint;
mod config;
mod evaluate;
mod steps;
mod trainer;

pub use adam::{Adam, Moments, ADAM_EPS};
pub use batch::Batch;
pub use checkpoint::{Checkpoint, Entry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{GeneratorKind, KeyDoc, TrainConfig, Variant, KEYS};
pub use evaluate::{evaluate, Evaluation};
pub use steps::{
    train_step_gan, train_step_plain, train_step_roigan, Networks, Optimizers, StepLosses, GLOBAL_DISC, GLOBAL_GEN,
    LOCAL_DISC, LOCAL_GEN,
};
pub use trainer::{
    history_csv, load_networks, predict, EpochRecord, Trainer, BEST_CHECKPOINT, HISTORY_FILE, HISTORY_HEADER,
    LAST_CHECKPOINT,
};
