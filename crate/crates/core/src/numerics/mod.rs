//! Dense numerics: tensors, reverse- and forward-mode differentiation,
//! spectral norms and seeded random streams.

pub mod dual;
pub mod graph;
pub mod kernels;
pub mod rng;
pub mod spectral;
pub mod tensor;

pub use dual::{jvp, jvp_with_value, Dual, Scalar};
pub use graph::{vjp, Gradients, Graph, Reduction, Var};
pub use spectral::{power_iteration_smax, PowerIterationOptions, SpectralEstimate};
pub use tensor::Tensor;
