//! Nonnegative CP decomposition with projection neural flows, discrete-time
//! projection networks and a particle swarm over their equilibria.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod baselines;
pub mod bench;
pub mod datagen;
pub mod dtpnn;
pub mod flow;
pub mod io;
mod linalg;
pub mod model;
pub mod swarm;
pub mod tensor;

pub use error::{CpdError, Result};
pub use model::{
    barrier_gradient, barrier_objective, barrier_precondition, evaluate, gradient, objective,
    precondition, BarrierParams, BlockObjective, ObjectiveEval, Preconditioner, Ridge,
};
pub use tensor::{
    fold, hadamard_gram, khatri_rao, kruskal_full, mttkrp, mttkrp_column, relative_error, unfold,
    DenseTensor, KruskalModel, Matrix,
};
