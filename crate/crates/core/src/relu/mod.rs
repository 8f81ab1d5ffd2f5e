//! The constrained ReLU class `Phi(L, m, S, B)`: evaluation, exact gradients,
//! projections, training and the sample-size-driven size selector.

mod arch;
mod network;
mod train;

pub use arch::{architecture_for, beta, iota, is_admissible, ArchitectureSpec};
pub use network::{Architecture, ReluNetwork};
pub use train::{fit_arrays, fit_least_squares, Fit, Optimizer, TrainConfig};
