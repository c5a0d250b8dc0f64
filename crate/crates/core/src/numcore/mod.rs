//! Dense numerics: tensors, the reverse-mode tape, gradient checking,
//! cosine similarity and snapshot PCA.

mod flat;
mod gradcheck;
mod graph;
mod pca;
mod tensor;

pub use flat::{cosine, FlatVector};
pub use gradcheck::{grad_check, grad_check_coords, GraphFunction, ScalarFunction};
pub use graph::{Gradients, Graph, Op, Var};
pub use pca::{jacobi_eigen, pca_snapshot, Eigen, PcaResult};
pub use tensor::Tensor;
