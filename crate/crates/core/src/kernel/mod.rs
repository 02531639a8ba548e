//! Dense numeric kernel: tensors, a reverse-mode tape, randomness, and
//! finite-difference checking.

pub mod gradcheck;
pub mod linalg;
pub mod random;
pub mod sparse;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradients, GradCheck};
pub use linalg::{frobenius_norm_sq, jacobi_singular_values, spectral_norm_estimate, spectral_norm_exact};
pub use random::{gumbel_softmax_sample, keyed_uniform, splitmix64, TrainRng};
pub use sparse::Csr;
pub use tape::{softmax_along, BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;
