//! The learning substrate: datasets and non-iid partitioning, a small MLP
//! trained with minibatch SGD, FedAvg aggregation and evaluation.

mod dataset;
mod fedavg;
mod model;
mod partition;
mod train;

pub use dataset::{generate_synthetic_dataset, Dataset, SyntheticConfig};
pub use fedavg::{fedavg, ClientUpdate};
pub use model::{MlpShape, ModelParameters};
pub use partition::{partition_non_iid, PartitionConfig};
pub use train::{
    evaluate, local_train, local_train_epochs, loss_and_gradient, predict, ClientData, ComputeModel, TrainingConfig,
};

use alloc::vec::Vec;

/// The parameter delta a client produced from the global model: its data
/// signature for similarity clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientFingerprint {
    pub client_id: u32,
    pub delta: Vec<f32>,
    pub norm: f64,
}

impl GradientFingerprint {
    pub fn new(client_id: u32, delta: Vec<f32>) -> Self {
        let norm = libm::sqrt(delta.iter().map(|&d| d as f64 * d as f64).sum::<f64>());
        Self { client_id, delta, norm }
    }

    /// `local - global`, element-wise.
    pub fn from_update(client_id: u32, global: &ModelParameters, local: &ModelParameters) -> Self {
        let delta = local.values.iter().zip(&global.values).map(|(l, g)| l - g).collect();
        Self::new(client_id, delta)
    }
}
