//! Shared numerical kernels: sparse matrices and symmetric eigensolvers.

pub mod eigen;
pub mod sparse;

pub use eigen::{
    dense_from_op, dense_symmetric_eigen, residual_norms, solve_smallest, EigenPairs, FnOp,
    IterOpts, LinOp, SolveError, DENSE_LIMIT,
};
pub use sparse::Csr;
