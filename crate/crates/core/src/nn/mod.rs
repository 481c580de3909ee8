//! The 3D ConvNet: layers with exact backward passes, ADAM, schedule, training.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod inception;
pub mod loss;
pub mod network;
pub mod pool;
pub mod schedule;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, load_for_transfer, save_checkpoint, Checkpoint};
pub use inception::InceptionSpec;
pub use loss::softmax_cross_entropy;
pub use network::{network_backward, network_forward, network_loss, ModelParams, NetworkConfig};
pub use schedule::{PlateauController, PlateauEvent, TrainSchedule};
pub use train::{evaluate, train, train_from, Dataset, EpochRecord, Evaluation, StopReason, TrainOutcome};
