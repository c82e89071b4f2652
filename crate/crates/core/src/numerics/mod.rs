//! Dense tensor arithmetic, compensated reductions and the counter-based
//! random source shared by every other module.

mod rng;
mod sum;
mod tensor;

pub use rng::RngStream;
pub use sum::{compensated_sum, CompensatedSum};
pub use tensor::Tensor;
