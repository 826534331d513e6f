//! Neural-network layers that carry uncertainty.
//!
//! Every layer maps a tensor (or a [`RandomVariable`]) to a tensor (or a
//! `RandomVariable`) under the single [`Layer`] contract. Variational layers
//! differ from their deterministic counterparts only in how their parameters
//! are initialized and regularized; the KL penalties they produce are side
//! effects queried through [`Layer::losses`] after each call.

pub mod distributions;
pub mod error;
pub mod gp;
pub mod layers;
pub mod output;
pub mod parallel;
pub mod reversible;
pub mod rng;
pub mod tensor;
pub mod train;

pub use distributions::{Distribution, RandomVariable};
pub use error::{Error, Result};
pub use layers::{Ctx, Layer, Value};
pub use tensor::{Gradients, Parameter, Tape, Tensor, Var};
