//! Per-parameter quadratic residual forms.
//!
//! Both discretizations in this crate reduce, for a fixed parameter, to an
//! exactly representable quadratic: loss(w) = w' N w - 2 b' w + c with N
//! symmetric positive semi-definite. The minimizer is the finite element
//! solution and the value at any w is the squared residual norm of w.

use crate::error::{Error, Result};
use crate::numerics::{self, cg_solve_detailed, SparseMatrix};

#[derive(Debug, Clone)]
pub struct QuadraticResidual {
    pub normal: SparseMatrix,
    pub load: Vec<f64>,
    pub constant: f64,
    /// Dofs frozen to zero before solves (degenerate columns), if any.
    pub fixed_zero: Vec<usize>,
}

impl QuadraticResidual {
    pub fn dim(&self) -> usize {
        self.load.len()
    }

    /// loss(w) = w' N w - 2 b' w + c; clamped at zero against roundoff.
    pub fn loss(&self, w: &[f64]) -> Result<f64> {
        let nw = self.normal.mul_vec(w)?;
        let value =
            numerics::dot(w, &nw) - 2.0 * numerics::dot(&self.load, w) + self.constant;
        Ok(value.max(0.0))
    }

    /// Gradient 2 (N w - b) of the loss in coefficient space.
    pub fn loss_gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.normal.mul_vec(w)?;
        for (gi, bi) in g.iter_mut().zip(&self.load) {
            *gi = 2.0 * (*gi - bi);
        }
        Ok(g)
    }

    /// sqrt(loss(w) / loss(0)); fails when the load scale vanishes.
    pub fn relative_residual(&self, w: &[f64]) -> Result<f64> {
        if self.constant <= 0.0 {
            return Err(Error::ZeroLoadScale);
        }
        Ok((self.loss(w)? / self.constant).sqrt())
    }

    /// Minimizes the quadratic: solves N w = b by Jacobi-preconditioned CG.
    /// Null dofs are assumed to have been pinned at assembly time.
    pub fn minimize(&self, tol: f64) -> Result<Vec<f64>> {
        let diag = self.normal.diagonal();
        let sol = cg_solve_detailed(&self.normal, &self.load, tol, Some(&diag))?;
        if !sol.converged {
            return Err(Error::CgDidNotConverge {
                iters: sol.iterations,
                rel_residual: sol.rel_residual,
            });
        }
        Ok(sol.x)
    }
}

/// Flags dofs whose normal-matrix column is numerically zero relative to the
/// mean diagonal; such dofs are underdetermined and get pinned to zero.
pub fn detect_null_dofs(normal: &SparseMatrix) -> Vec<usize> {
    let n = normal.rows();
    if n == 0 {
        return Vec::new();
    }
    let mut col_norm2 = vec![0.0f64; n];
    for (_, c, v) in normal.iter() {
        col_norm2[c] += v * v;
    }
    let mean_diag = normal.diagonal().iter().sum::<f64>() / n as f64;
    let threshold = 1e-12 * mean_diag;
    (0..n)
        .filter(|&i| col_norm2[i].sqrt() <= threshold)
        .collect()
}

/// Zeroes out rows/columns of the flagged dofs and puts a unit on their
/// diagonal so the system stays SPD.
pub fn pin_dofs(triplets: &mut Vec<(usize, usize, f64)>, load: &mut [f64], pinned: &[usize]) {
    if pinned.is_empty() {
        return;
    }
    let mask: std::collections::HashSet<usize> = pinned.iter().copied().collect();
    triplets.retain(|&(r, c, _)| !mask.contains(&r) && !mask.contains(&c));
    for &d in pinned {
        triplets.push((d, d, 1.0));
        load[d] = 0.0;
    }
}
