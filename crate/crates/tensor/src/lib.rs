//! A small dense-tensor engine for architecture-search experiments.
//!
//! Everything is `f64` and row-major. Computation is recorded on a
//! [`Tape`] as it runs (define-by-run); [`Tape::backward`] replays the
//! recording in reverse to produce exact gradients for every leaf that
//! requires them. Parameters live in a [`ParamSet`] outside the tape and
//! are bound into each fresh tape through a [`Binding`], so a tape never
//! outlives a single forward/backward pass.
//!
//! ```
//! use twophase_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::from_vec(vec![3.0]), true);
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[6.0]);
//! ```

mod conv;
mod error;
pub mod gradcheck;
mod ops;
pub mod optim;
mod param;
mod pool;
mod tape;
mod tensor;

pub use conv::ConvSpec;
pub use error::{Result, TensorError};
pub use gradcheck::finite_diff_gradient;
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use param::{Binding, Param, ParamId, ParamSet};
pub use pool::PoolSpec;
pub use tape::{BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;
