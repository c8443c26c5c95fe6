//! Networks with configurable activations, small dense linear algebra, and
//! the synthetic tasks and rank/symmetry checks used to compare activations.

pub mod activation;
pub mod analysis;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod rng;
pub mod tasks;

pub use activation::{catalog_get, ActivationSpec};
pub use linalg::{LinalgError, Matrix};
pub use network::{init_network, mlp_specs, LayerSpec, Network};
pub use optim::{train, Loss, OptimizerKind, OptimizerState, TrainConfig, TrainHistory};
pub use tasks::{generate_dataset, Dataset, TaskName, TaskSpec};
