//! Losses, optimizer and the adversarial training loop.

pub mod adam;
pub mod losses;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use losses::{bce_with_logits, loss_discriminator, loss_generator, GeneratorLoss};
pub use train::{
    batch, read_metrics, train, EpochMetrics, GeneratorLossValues, RunOutputs, StepReport,
    TrainConfig, TrainOutcome, Trainer,
};
