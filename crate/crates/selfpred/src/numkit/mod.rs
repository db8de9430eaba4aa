//! Dense linear algebra, SVD, reverse-mode differentiation, and
//! splittable RNG streams used across the workspace.

pub mod graph;
pub mod mat;
pub mod quad;
pub mod rng;
pub mod svd;

pub use graph::{grad_check, Graph, GraphError, NodeId};
pub use mat::Mat;
pub use quad::{gauss_hermite, gaussian_expectation};
pub use rng::{sample_index, StreamRng};
pub use svd::{
    matrix_rank_estimate, orthogonal_init, pinv_solve, svd, PinvSolution, SvdError, SvdResult,
};
