//! Local training on a vehicle's shard.

pub mod data;
pub mod net;

pub use data::{
    load_mnist, partition, synth_dataset, synth_split, DataError, Dataset, Partition, RowRef, Shard, Split, SynthSpec,
};
pub use net::{local_train, local_train_on, loss, loss_on, predict, sgd_step, Batch, Loss, TrainError, TrainerModel};
