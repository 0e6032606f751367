//! Two-level prolongation matrices for the finite element spaces in use:
//! vertex P1, per-triangle P0, lowest-order Raviart-Thomas edge fluxes, and
//! the vertex-based skeleton trace space. These both transfer coefficients
//! between levels and provide the sparsity patterns of the trainable
//! prolongation layers.

use super::MeshHierarchy;
use crate::numerics::SparseMatrix;

/// Nodal interpolation of piecewise linears from level j-1 to level j:
/// coarse vertices carry over, midpoints average their parent edge
/// endpoints.
pub fn p1_prolongation(hier: &MeshHierarchy, j: usize) -> SparseMatrix {
    assert!(j >= 1 && j <= hier.max_level());
    let coarse = hier.level(j - 1);
    let fine = hier.level(j);
    let nv = coarse.num_vertices();
    let mut triplets = Vec::with_capacity(fine.num_vertices() * 2);
    for v in 0..fine.num_vertices() {
        if v < nv {
            triplets.push((v, v, 1.0));
        } else {
            let [a, b] = coarse.edges[v - nv];
            triplets.push((v, a, 0.5));
            triplets.push((v, b, 0.5));
        }
    }
    SparseMatrix::from_triplets(fine.num_vertices(), nv, &triplets)
}

/// Each child triangle inherits its parent's value.
pub fn p0_prolongation(hier: &MeshHierarchy, j: usize) -> SparseMatrix {
    assert!(j >= 1 && j <= hier.max_level());
    let coarse = hier.level(j - 1);
    let fine = hier.level(j);
    let mut triplets = Vec::with_capacity(fine.num_triangles());
    for (t, children) in hier.tri_children[j - 1].iter().enumerate() {
        for &c in children {
            triplets.push((c, t, 1.0));
        }
    }
    SparseMatrix::from_triplets(fine.num_triangles(), coarse.num_triangles(), &triplets)
}

/// Skeleton trace prolongation. Traces are piecewise linear per edge and
/// single-valued at vertices, so surviving coarse vertices carry over and
/// every new vertex bisects a coarse edge and averages its endpoints.
pub fn skeleton_prolongation(hier: &MeshHierarchy, j: usize) -> SparseMatrix {
    // identical stencil to nodal P1 interpolation on this refinement pattern
    p1_prolongation(hier, j)
}

/// Lowest-order Raviart-Thomas embedding: the flux of the coarse field
/// through each fine edge, evaluated exactly via the edge midpoint.
pub fn rt0_prolongation(hier: &MeshHierarchy, j: usize) -> SparseMatrix {
    assert!(j >= 1 && j <= hier.max_level());
    let coarse = hier.level(j - 1);
    let fine = hier.level(j);
    let parent = &hier.tri_parent[j];
    let mut triplets = Vec::with_capacity(fine.num_edges() * 3);
    for ef in 0..fine.num_edges() {
        let tf = fine.edge_tris[ef].0;
        let tc = parent[tf];
        let mid = fine.edge_midpoint(ef);
        let n = fine.edge_normal(ef);
        let len = fine.edge_length(ef);
        let area = coarse.tri_area[tc];
        let [a, b, c] = coarse.triangles[tc];
        for (i, p) in [a, b, c].into_iter().enumerate() {
            let ec = coarse.tri_edges[tc][i];
            let sign = coarse.rt0_sign(tc, i);
            // basis opposite vertex p: sign/(2 area) (x - p), unit flux dof
            let pv = coarse.vertices[p];
            let bx = sign / (2.0 * area) * (mid[0] - pv[0]);
            let by = sign / (2.0 * area) * (mid[1] - pv[1]);
            let flux = len * (bx * n[0] + by * n[1]);
            if flux.abs() > 1e-14 {
                triplets.push((ef, ec, flux));
            }
        }
    }
    SparseMatrix::from_triplets(fine.num_edges(), coarse.num_edges(), &triplets)
}

/// Keeps only the rows with `Some` new index (dof elimination).
pub fn restrict_rows(m: &SparseMatrix, keep: &[Option<usize>], new_rows: usize) -> SparseMatrix {
    let mut triplets = Vec::with_capacity(m.nnz());
    for (r, c, v) in m.iter() {
        if let Some(nr) = keep[r] {
            triplets.push((nr, c, v));
        }
    }
    SparseMatrix::from_triplets(new_rows, m.cols(), &triplets)
}

/// Keeps only the columns with `Some` new index.
pub fn restrict_columns(m: &SparseMatrix, keep: &[Option<usize>], new_cols: usize) -> SparseMatrix {
    let mut triplets = Vec::with_capacity(m.nnz());
    for (r, c, v) in m.iter() {
        if let Some(nc) = keep[c] {
            triplets.push((r, nc, v));
        }
    }
    SparseMatrix::from_triplets(m.rows(), new_cols, &triplets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_hierarchy;
    use rand::prelude::*;

    #[test]
    fn p1_preserves_constants() {
        let h = build_unit_square_hierarchy(3).unwrap();
        for j in 1..=3 {
            let p = p1_prolongation(&h, j);
            let ones = vec![1.0; p.cols()];
            for v in p.mul_vec(&ones).unwrap() {
                assert!((v - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn p1_hat_spreads_halves_to_neighbouring_midpoints() {
        let h = build_unit_square_hierarchy(2).unwrap();
        let coarse = h.level(1);
        let p = p1_prolongation(&h, 2);
        let v = 4; // some coarse vertex
        let mut hat = vec![0.0; p.cols()];
        hat[v] = 1.0;
        let fine_vals = p.mul_vec(&hat).unwrap();
        let nv = coarse.num_vertices();
        for (fv, val) in fine_vals.iter().enumerate() {
            if fv == v {
                assert_eq!(*val, 1.0);
            } else if fv >= nv {
                let [a, b] = coarse.edges[fv - nv];
                let expect = if a == v || b == v { 0.5 } else { 0.0 };
                assert_eq!(*val, expect);
            } else {
                assert_eq!(*val, 0.0);
            }
        }
    }

    #[test]
    fn p1_row_sums_are_one_and_columns_cover() {
        let h = build_unit_square_hierarchy(2).unwrap();
        let p = p1_prolongation(&h, 2);
        let mut row_sum = vec![0.0; p.rows()];
        for (r, _, v) in p.iter() {
            row_sum[r] += v;
        }
        for s in row_sum {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn p1_is_exact_on_coarse_space() {
        // the prolonged coefficient vector reproduces the coarse function at
        // random points
        let h = build_unit_square_hierarchy(3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for j in 1..=3 {
            let coarse = h.level(j - 1);
            let fine = h.level(j);
            let p = p1_prolongation(&h, j);
            let coeffs: Vec<f64> = (0..p.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fine_coeffs = p.mul_vec(&coeffs).unwrap();
            let eval = |lvl: &crate::mesh::MeshLevel, c: &[f64], x: [f64; 2]| -> f64 {
                // locate containing triangle by barycentric test
                for &[a, b, cc] in lvl.triangles.iter() {
                    let (pa, pb, pc) = (lvl.vertices[a], lvl.vertices[b], lvl.vertices[cc]);
                    let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0]);
                    let l1 = ((x[0] - pa[0]) * (pc[1] - pa[1]) - (x[1] - pa[1]) * (pc[0] - pa[0])) / det;
                    let l2 = ((pb[0] - pa[0]) * (x[1] - pa[1]) - (pb[1] - pa[1]) * (x[0] - pa[0])) / det;
                    let l0 = 1.0 - l1 - l2;
                    if l0 >= -1e-12 && l1 >= -1e-12 && l2 >= -1e-12 {
                        return l0 * c[a] + l1 * c[b] + l2 * c[cc];
                    }
                }
                panic!("point {x:?} not located at level {}", lvl.level);
            };
            for _ in 0..20 {
                let x = [rng.random_range(0.01..0.99), rng.random_range(0.01..0.99)];
                let cv = eval(coarse, &coeffs, x);
                let fv = eval(fine, &fine_coeffs, x);
                assert!((cv - fv).abs() <= 1e-13, "level {j}: {cv} vs {fv}");
            }
        }
    }

    #[test]
    fn p0_preserves_constants() {
        let h = build_unit_square_hierarchy(3).unwrap();
        let p = p0_prolongation(&h, 3);
        let ones = vec![1.0; p.cols()];
        for v in p.mul_vec(&ones).unwrap() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn skeleton_all_ones_trace_maps_to_all_ones() {
        let h = build_unit_square_hierarchy(2).unwrap();
        let p = skeleton_prolongation(&h, 2);
        let ones = vec![1.0; p.cols()];
        for v in p.mul_vec(&ones).unwrap() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    /// Assembled divergence of an RT0 coefficient vector as a P0 field.
    fn rt0_divergence(level: &crate::mesh::MeshLevel, c: &[f64]) -> Vec<f64> {
        (0..level.num_triangles())
            .map(|t| {
                let area = level.tri_area[t];
                (0..3)
                    .map(|i| level.rt0_sign(t, i) / area * c[level.tri_edges[t][i]])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn rt0_prolongation_commutes_with_divergence() {
        let h = build_unit_square_hierarchy(3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for j in 1..=3 {
            let coarse = h.level(j - 1);
            let fine = h.level(j);
            let p = rt0_prolongation(&h, j);
            let p0 = p0_prolongation(&h, j);
            let c: Vec<f64> = (0..p.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fine_c = p.mul_vec(&c).unwrap();
            let div_coarse = rt0_divergence(coarse, &c);
            let div_fine = rt0_divergence(fine, &fine_c);
            let div_prolonged = p0.mul_vec(&div_coarse).unwrap();
            for t in 0..fine.num_triangles() {
                assert!(
                    (div_fine[t] - div_prolonged[t]).abs() <= 1e-12 * (1.0 + div_prolonged[t].abs()),
                    "level {j}, triangle {t}: {} vs {}",
                    div_fine[t],
                    div_prolonged[t]
                );
            }
        }
    }

    #[test]
    fn rt0_prolongation_reproduces_constant_fields() {
        // a globally constant vector field lies in RT0 on both levels; its
        // fine dofs must match the prolonged coarse dofs
        let h = build_unit_square_hierarchy(2).unwrap();
        let coarse = h.level(1);
        let fine = h.level(2);
        let p = rt0_prolongation(&h, 2);
        for field in [[1.0, 0.0], [0.0, 1.0], [0.4, -2.0]] {
            let dof = |lvl: &crate::mesh::MeshLevel| -> Vec<f64> {
                (0..lvl.num_edges())
                    .map(|e| {
                        let n = lvl.edge_normal(e);
                        lvl.edge_length(e) * (n[0] * field[0] + n[1] * field[1])
                    })
                    .collect()
            };
            let coarse_dofs = dof(coarse);
            let fine_dofs = dof(fine);
            let prolonged = p.mul_vec(&coarse_dofs).unwrap();
            for e in 0..fine.num_edges() {
                assert!(
                    (prolonged[e] - fine_dofs[e]).abs() <= 1e-13,
                    "edge {e}: {} vs {}",
                    prolonged[e],
                    fine_dofs[e]
                );
            }
        }
    }
}
