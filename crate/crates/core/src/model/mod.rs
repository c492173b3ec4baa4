//! Mass grid, tensor fields and the discrete operations shared by every solver.

pub mod convolution;
pub mod field;
pub mod grid;
pub mod io;

pub use convolution::{convolve_lower, convolve_lower_with_leak, Convolution};
pub use field::{outer_product, tensor_product, tensor_product_with_limit, Field, DEFAULT_J_MAX_TENSOR};
pub use grid::{MassGrid, QuadratureRule};
