//! Minimal dense reverse-mode autodiff used by the workload embedding models.

mod gradcheck;
mod graph;
mod init;
mod mlp;
mod optim;
mod params;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use init::dense_init;
pub use mlp::{Activation, DenseLayer, Mlp};
pub use optim::{Adam, AdamConfig};
pub use params::{LayerRecord, Param, ParamSet, ParamsFile, PARAMS_SCHEMA_VERSION};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("bad parameter file: {0}")]
    Format(String),
}
