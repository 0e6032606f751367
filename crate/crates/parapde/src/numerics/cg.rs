use super::SparseMatrix;
use crate::error::{Error, Result};

/// Outcome of a conjugate gradient solve. On iteration-cap failure the best
/// iterate is still returned alongside the error, never silently accepted.
#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradient for SPD systems.
///
/// Stops when ||Ax - b|| <= tol * ||b||. The iteration cap is 10 n; hitting
/// it returns `CgDidNotConverge` (inspect `solution` via [`cg_solve_detailed`]
/// if the best iterate is needed).
pub fn cg_solve(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let sol = cg_solve_detailed(a, b, tol, None)?;
    if sol.converged {
        Ok(sol.x)
    } else {
        Err(Error::CgDidNotConverge {
            iters: sol.iterations,
            rel_residual: sol.rel_residual,
        })
    }
}

/// Like [`cg_solve`] but always returns the solution object; `jacobi` supplies
/// an optional diagonal preconditioner.
pub fn cg_solve_detailed(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    jacobi: Option<&[f64]>,
) -> Result<CgSolution> {
    assert!(tol > 0.0, "cg tolerance must be positive");
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.cols(),
            context: "cg matrix must be square",
        });
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
            context: "cg rhs",
        });
    }
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x: vec![0.0; n],
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        });
    }
    let apply_prec = |r: &[f64]| -> Vec<f64> {
        match jacobi {
            Some(d) => r
                .iter()
                .zip(d)
                .map(|(ri, di)| if *di != 0.0 { ri / di } else { *ri })
                .collect(),
            None => r.to_vec(),
        }
    };

    let max_iters = 10 * n;
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = apply_prec(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ax = vec![0.0; n];

    let mut best_x = x.clone();
    let mut best_res = 1.0f64;

    for iter in 0..max_iters {
        let res = norm(&r) / b_norm;
        if res < best_res {
            best_res = res;
            best_x.copy_from_slice(&x);
        }
        if res <= tol {
            return Ok(CgSolution {
                x,
                iterations: iter,
                rel_residual: res,
                converged: true,
            });
        }
        a.mul_vec_into(&p, &mut ax);
        let pap = dot(&p, &ax);
        if !(pap > 0.0) || !pap.is_finite() {
            // matrix not SPD along this direction; report best effort
            return Ok(CgSolution {
                x: best_x,
                iterations: iter,
                rel_residual: best_res,
                converged: false,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ax[i];
        }
        z = apply_prec(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = norm(&r) / b_norm;
    if res <= tol {
        return Ok(CgSolution {
            x,
            iterations: max_iters,
            rel_residual: res,
            converged: true,
        });
    }
    if res < best_res {
        best_res = res;
        best_x = x;
    }
    Ok(CgSolution {
        x: best_x,
        iterations: max_iters,
        rel_residual: best_res,
        converged: false,
    })
}
