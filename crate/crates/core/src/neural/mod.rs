//! Small dense feed-forward networks with hand-written backpropagation.
//!
//! One [`Mlp`] type hosts every learned model in the crate: the dynamics
//! refinement, the barrier function and the rejection scorer. Arrays are
//! stored `(examples, features)`.

mod io;
mod loss;
mod mlp;
mod optim;
mod train;

pub use loss::{Loss, LossEval, MeanSquaredError, SignHinge, WeightedBce};
pub use mlp::{Dense, Gradients, Mlp, ModelRole, OutputActivation, Trace};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{gradient_check, stack_rows, train, Dataset, GradientCheck, TrainConfig};
