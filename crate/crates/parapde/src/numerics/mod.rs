//! Minimal dense/sparse linear algebra used by the assembly and training
//! layers: CSR matrices, small SPD solves, and conjugate gradient with an
//! optional Jacobi preconditioner.
//!
//! Everything is double precision; all types are immutable after
//! construction and operations are pure functions.

mod cg;
mod dense;
mod sparse;

pub use cg::{cg_solve, cg_solve_detailed, CgSolution};
pub use dense::{CholeskyFactor, DenseMatrix};
pub use sparse::SparseMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
