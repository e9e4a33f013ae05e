//! Nearest-subspace search in ℓ1 distance using Cauchy random embeddings.
//!
//! A query and a collection of low-dimensional subspaces are projected by a
//! random `d × D` matrix with i.i.d. standard Cauchy entries. Small ℓ1
//! regressions in the embedded space shortlist candidates, independent
//! trials widen the shortlist, and an optional ambient-dimension pass picks
//! the final answer.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cauchy;
pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod l1_solver;
pub mod matrix;
pub mod search;
pub mod subspace;

pub use cauchy::{cauchy_quantile, sample_sketch, stability_check, RngSpec, SketchMatrix};
pub use error::{Error, Result};
pub use l1_solver::{
    distance_to_subspace, oracle_l1, solve_l1, L1Solution, SolveStatus, SolverOptions,
};
pub use matrix::{matvec, orthonormalize, DenseMatrix};
pub use subspace::{fit_subspace, DistanceRecord, QueryVector, SubspaceCollection, SubspaceModel};
pub use search::{
    build_index, gap_statistic, query_exhaustive, query_sketched, suggest_dimension, QueryResult,
    SearchConfig, SketchedIndex,
};
