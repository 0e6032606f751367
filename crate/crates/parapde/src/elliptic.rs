//! First-order-system least-squares discretization of the parametric
//! diffusion problem -div(a(p) grad u) = f on the unit square with u = 0 on
//! the boundary.
//!
//! The first-order unknown is w = (sigma, u) in RT0 x P1 with the essential
//! boundary condition on u enforced by dof elimination. The loss of a
//! coefficient vector is the exact squared L2 residual
//!
//!   || sigma - a(p) grad u ||^2 + || div sigma + f ||^2,
//!
//! integrated with quadrature that is exact for the piecewise polynomial
//! integrands, and is represented as the quadratic form w' N w - 2 b' w + c.

use crate::error::{Error, Result};
use crate::mesh::{MeshHierarchy, MeshLevel};
use crate::numerics::SparseMatrix;
use crate::quadrature;
use crate::residual::QuadraticResidual;
use std::sync::Arc;

/// Piecewise constant diffusion over the four quadrants of the unit square.
/// Quadrants are numbered row-major from the top: 1 = top-left,
/// 2 = top-right, 3 = bottom-left, 4 = bottom-right. Internal interfaces
/// resolve half-open: the left quadrants take x < 1/2, the top ones y >= 1/2.
pub fn diffusion_eval(x: [f64; 2], p: &[f64]) -> Result<f64> {
    assert_eq!(p.len(), 4, "diffusion field takes 4 parameters");
    if !(0.0..=1.0).contains(&x[0]) || !(0.0..=1.0).contains(&x[1]) {
        return Err(Error::OutsideDomain { x: x[0], y: x[1] });
    }
    let left = x[0] < 0.5;
    let top = x[1] >= 0.5;
    let idx = match (top, left) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    };
    Ok(p[idx])
}

/// Right-hand side of the diffusion problem.
#[derive(Clone)]
pub enum EllipticRhs {
    /// Constant source; the paper experiment uses f = 1.
    Constant(f64),
    /// Arbitrary smooth source integrated with a rule of the given degree.
    Function {
        f: Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>,
        degree: usize,
    },
}

impl EllipticRhs {
    fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            EllipticRhs::Constant(c) => *c,
            EllipticRhs::Function { f, .. } => f(x),
        }
    }

    fn quad_degree(&self) -> usize {
        match self {
            EllipticRhs::Constant(_) => 2,
            EllipticRhs::Function { degree, .. } => (*degree).max(2),
        }
    }
}

/// Global ordering [sigma dofs | u dofs]; u dofs exist only at interior
/// vertices.
#[derive(Debug, Clone)]
pub struct FoslsLayout {
    pub n_sigma: usize,
    pub n_u: usize,
    /// Interior vertex -> u dof index (before the n_sigma offset).
    pub vertex_dof: Vec<Option<usize>>,
}

impl FoslsLayout {
    pub fn new(level: &MeshLevel) -> Self {
        let mut vertex_dof = vec![None; level.num_vertices()];
        let mut n_u = 0;
        for v in 0..level.num_vertices() {
            if !level.vertex_on_boundary[v] {
                vertex_dof[v] = Some(n_u);
                n_u += 1;
            }
        }
        FoslsLayout {
            n_sigma: level.num_edges(),
            n_u,
            vertex_dof,
        }
    }

    pub fn n_total(&self) -> usize {
        self.n_sigma + self.n_u
    }
}

/// Assembled least-squares system for one parameter value.
#[derive(Debug, Clone)]
pub struct FoslsSystem {
    pub p: Vec<f64>,
    pub quadratic: QuadraticResidual,
}

pub struct FoslsProblem {
    pub hier: Arc<MeshHierarchy>,
    pub level: usize,
    pub layout: FoslsLayout,
    pub rhs: EllipticRhs,
}

impl FoslsProblem {
    pub fn new(hier: Arc<MeshHierarchy>, level: usize, rhs: EllipticRhs) -> Self {
        let layout = FoslsLayout::new(hier.level(level));
        FoslsProblem {
            hier,
            level,
            layout,
            rhs,
        }
    }

    pub fn mesh(&self) -> &MeshLevel {
        self.hier.level(self.level)
    }

    /// Assembles N_p, b_p, c_p so that the quadratic form equals the exact
    /// squared L2 residual of the first-order system at every coefficient
    /// vector. The diffusion coefficient is constant per triangle (the
    /// level-1 edges align with the quadrant interfaces).
    pub fn assemble(&self, p: &[f64]) -> Result<FoslsSystem> {
        for (i, &pi) in p.iter().enumerate() {
            if !(pi > 0.0) {
                return Err(Error::ParameterOutOfRange(format!(
                    "diffusion parameter {i} = {pi} violates uniform ellipticity"
                )));
            }
        }
        let mesh = self.mesh();
        let layout = &self.layout;
        let n = layout.n_total();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(36 * mesh.num_triangles());
        let mut load = vec![0.0; n];
        let mut constant = 0.0;
        let rule = quadrature::triangle_rule(self.rhs.quad_degree());

        for t in 0..mesh.num_triangles() {
            let [va, vb, vc] = mesh.triangles[t];
            let verts = [mesh.vertices[va], mesh.vertices[vb], mesh.vertices[vc]];
            let area = mesh.tri_area[t];
            if area <= 0.0 {
                return Err(Error::DegenerateTriangle { tri: t, area });
            }
            let a_k = diffusion_eval(mesh.centroid(t), p)?;

            // P1 hat gradients: grad l_i = rot90(v_{i+2} - v_{i+1}) / (2A)
            let mut grads = [[0.0f64; 2]; 3];
            for i in 0..3 {
                let u = verts[(i + 2) % 3];
                let w = verts[(i + 1) % 3];
                grads[i] = [-(u[1] - w[1]) / (2.0 * area), (u[0] - w[0]) / (2.0 * area)];
            }
            let signs = [mesh.rt0_sign(t, 0), mesh.rt0_sign(t, 1), mesh.rt0_sign(t, 2)];

            // local dofs: 3 RT0 edges then up to 3 interior vertices
            let mut local: Vec<usize> = (0..3).map(|i| mesh.tri_edges[t][i]).collect();
            let mut u_locals: Vec<(usize, usize)> = Vec::new(); // (local vertex, global dof)
            for (i, &v) in [va, vb, vc].iter().enumerate() {
                if let Some(d) = layout.vertex_dof[v] {
                    u_locals.push((i, layout.n_sigma + d));
                    local.push(layout.n_sigma + d);
                }
            }
            let nl = local.len();
            let mut n_local = vec![0.0; nl * nl];
            let mut b_local = vec![0.0; nl];

            for &(l0, l1, l2, wq) in rule {
                let x = [
                    l0 * verts[0][0] + l1 * verts[1][0] + l2 * verts[2][0],
                    l0 * verts[0][1] + l1 * verts[1][1] + l2 * verts[2][1],
                ];
                let weight = wq * area;
                let fx = self.rhs.eval(x);

                // B applied to each local basis: (vector part, scalar part)
                let mut bvec = [[0.0f64; 2]; 6];
                let mut bscal = [0.0f64; 6];
                for i in 0..3 {
                    let c = signs[i] / (2.0 * area);
                    bvec[i] = [c * (x[0] - verts[i][0]), c * (x[1] - verts[i][1])];
                    bscal[i] = -signs[i] / area; // -div
                }
                for (k, &(i, _)) in u_locals.iter().enumerate() {
                    bvec[3 + k] = [-a_k * grads[i][0], -a_k * grads[i][1]];
                    bscal[3 + k] = 0.0;
                }
                // data pair (0, f)
                for i in 0..nl {
                    for j in 0..nl {
                        n_local[i * nl + j] += weight
                            * (bvec[i][0] * bvec[j][0]
                                + bvec[i][1] * bvec[j][1]
                                + bscal[i] * bscal[j]);
                    }
                    b_local[i] += weight * fx * bscal[i];
                }
                constant += weight * fx * fx;
            }

            for i in 0..nl {
                load[local[i]] += b_local[i];
                for j in 0..nl {
                    triplets.push((local[i], local[j], n_local[i * nl + j]));
                }
            }
        }

        Ok(FoslsSystem {
            p: p.to_vec(),
            quadratic: QuadraticResidual {
                normal: SparseMatrix::from_triplets(n, n, &triplets),
                load,
                constant,
                fixed_zero: Vec::new(),
            },
        })
    }

    /// Least-squares Galerkin solution: the unique minimizer of the residual
    /// over the trial space, via the SPD normal equations.
    pub fn solve_lsg(&self, system: &FoslsSystem) -> Result<Vec<f64>> {
        system.quadratic.minimize(1e-10)
    }

    /// Evaluates u_h at every vertex (zero on the boundary).
    pub fn u_vertex_values(&self, w: &[f64]) -> Vec<f64> {
        self.layout
            .vertex_dof
            .iter()
            .map(|d| d.map_or(0.0, |d| w[self.layout.n_sigma + d]))
            .collect()
    }

    /// Evaluates sigma_h at each triangle centroid.
    pub fn sigma_centroid_values(&self, w: &[f64]) -> Vec<[f64; 2]> {
        let mesh = self.mesh();
        (0..mesh.num_triangles())
            .map(|t| {
                let cen = mesh.centroid(t);
                let area = mesh.tri_area[t];
                let mut s = [0.0, 0.0];
                for i in 0..3 {
                    let coeff = w[mesh.tri_edges[t][i]];
                    let sign = mesh.rt0_sign(t, i);
                    let v = mesh.vertices[mesh.triangles[t][i]];
                    s[0] += coeff * sign / (2.0 * area) * (cen[0] - v[0]);
                    s[1] += coeff * sign / (2.0 * area) * (cen[1] - v[1]);
                }
                s
            })
            .collect()
    }

    /// Gram matrix of the trial norm (L2 + H(div) for sigma, L2 + H1 for u),
    /// used to measure coefficient errors in the norm the residual certifies.
    pub fn u_norm_gram(&self) -> SparseMatrix {
        let mesh = self.mesh();
        let layout = &self.layout;
        let n = layout.n_total();
        let mut triplets = Vec::with_capacity(36 * mesh.num_triangles());
        let rule = quadrature::triangle_rule(2);
        for t in 0..mesh.num_triangles() {
            let [va, vb, vc] = mesh.triangles[t];
            let verts = [mesh.vertices[va], mesh.vertices[vb], mesh.vertices[vc]];
            let area = mesh.tri_area[t];
            let mut grads = [[0.0f64; 2]; 3];
            for i in 0..3 {
                let u = verts[(i + 2) % 3];
                let w = verts[(i + 1) % 3];
                grads[i] = [-(u[1] - w[1]) / (2.0 * area), (u[0] - w[0]) / (2.0 * area)];
            }
            let signs = [mesh.rt0_sign(t, 0), mesh.rt0_sign(t, 1), mesh.rt0_sign(t, 2)];
            for &(l0, l1, l2, wq) in rule {
                let x = [
                    l0 * verts[0][0] + l1 * verts[1][0] + l2 * verts[2][0],
                    l0 * verts[0][1] + l1 * verts[1][1] + l2 * verts[2][1],
                ];
                let weight = wq * area;
                // sigma block: phi_i . phi_j + div phi_i div phi_j
                for i in 0..3 {
                    let ci = signs[i] / (2.0 * area);
                    let pi = [ci * (x[0] - verts[i][0]), ci * (x[1] - verts[i][1])];
                    let di = signs[i] / area;
                    for j in 0..3 {
                        let cj = signs[j] / (2.0 * area);
                        let pj = [cj * (x[0] - verts[j][0]), cj * (x[1] - verts[j][1])];
                        let dj = signs[j] / area;
                        triplets.push((
                            mesh.tri_edges[t][i],
                            mesh.tri_edges[t][j],
                            weight * (pi[0] * pj[0] + pi[1] * pj[1] + di * dj),
                        ));
                    }
                }
                // u block: l_i l_j + grad l_i . grad l_j
                let lambda = [l0, l1, l2];
                for (i, &vi) in [va, vb, vc].iter().enumerate() {
                    let Some(di) = layout.vertex_dof[vi] else { continue };
                    for (j, &vj) in [va, vb, vc].iter().enumerate() {
                        let Some(dj) = layout.vertex_dof[vj] else { continue };
                        triplets.push((
                            layout.n_sigma + di,
                            layout.n_sigma + dj,
                            weight
                                * (lambda[i] * lambda[j]
                                    + grads[i][0] * grads[j][0]
                                    + grads[i][1] * grads[j][1]),
                        ));
                    }
                }
            }
        }
        SparseMatrix::from_triplets(n, n, &triplets)
    }

    /// Recomputes the loss directly from pointwise residual evaluations with
    /// a degree-6 rule, bypassing the assembled quadratic form.
    pub fn loss_by_quadrature(&self, p: &[f64], w: &[f64]) -> Result<f64> {
        let mesh = self.mesh();
        let layout = &self.layout;
        let rule = quadrature::triangle_rule(6);
        let mut total = 0.0;
        for t in 0..mesh.num_triangles() {
            let [va, vb, vc] = mesh.triangles[t];
            let verts = [mesh.vertices[va], mesh.vertices[vb], mesh.vertices[vc]];
            let area = mesh.tri_area[t];
            let a_k = diffusion_eval(mesh.centroid(t), p)?;
            let mut grads = [[0.0f64; 2]; 3];
            for i in 0..3 {
                let u = verts[(i + 2) % 3];
                let w2 = verts[(i + 1) % 3];
                grads[i] = [-(u[1] - w2[1]) / (2.0 * area), (u[0] - w2[0]) / (2.0 * area)];
            }
            let signs = [mesh.rt0_sign(t, 0), mesh.rt0_sign(t, 1), mesh.rt0_sign(t, 2)];
            let mut grad_u = [0.0, 0.0];
            for (i, &v) in [va, vb, vc].iter().enumerate() {
                if let Some(d) = layout.vertex_dof[v] {
                    grad_u[0] += w[layout.n_sigma + d] * grads[i][0];
                    grad_u[1] += w[layout.n_sigma + d] * grads[i][1];
                }
            }
            let mut div_sigma = 0.0;
            for i in 0..3 {
                div_sigma += w[mesh.tri_edges[t][i]] * signs[i] / area;
            }
            for &(l0, l1, l2, wq) in rule {
                let x = [
                    l0 * verts[0][0] + l1 * verts[1][0] + l2 * verts[2][0],
                    l0 * verts[0][1] + l1 * verts[1][1] + l2 * verts[2][1],
                ];
                let mut sigma = [0.0, 0.0];
                for i in 0..3 {
                    let c = w[mesh.tri_edges[t][i]] * signs[i] / (2.0 * area);
                    sigma[0] += c * (x[0] - verts[i][0]);
                    sigma[1] += c * (x[1] - verts[i][1]);
                }
                let r1 = [sigma[0] - a_k * grad_u[0], sigma[1] - a_k * grad_u[1]];
                let r2 = div_sigma + self.rhs.eval(x);
                total += wq * area * (r1[0] * r1[0] + r1[1] * r1[1] + r2 * r2);
            }
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_hierarchy;
    use crate::numerics;
    use rand::prelude::*;

    fn problem(level: usize) -> FoslsProblem {
        let hier = Arc::new(build_unit_square_hierarchy(level).unwrap());
        FoslsProblem::new(hier, level, EllipticRhs::Constant(1.0))
    }

    #[test]
    fn diffusion_quadrant_lookup() {
        let p = [10.0, 20.0, 30.0, 40.0];
        assert_eq!(diffusion_eval([0.25, 0.75], &p).unwrap(), 10.0); // top-left
        assert_eq!(diffusion_eval([0.75, 0.75], &p).unwrap(), 20.0); // top-right
        assert_eq!(diffusion_eval([0.25, 0.25], &p).unwrap(), 30.0); // bottom-left
        assert_eq!(diffusion_eval([0.75, 0.25], &p).unwrap(), 40.0); // bottom-right
        assert!(diffusion_eval([1.25, 0.5], &p).is_err());
        // interface convention: x = 1/2 belongs to the right, y = 1/2 to the top
        assert_eq!(diffusion_eval([0.5, 0.5], &p).unwrap(), 20.0);
        let ones = [1.0; 4];
        assert_eq!(diffusion_eval([0.123, 0.456], &ones).unwrap(), 1.0);
    }

    #[test]
    fn loss_at_zero_is_the_source_mass() {
        // f = 1 on the unit square, so loss(0) = ||f||^2 = 1
        let pr = problem(2);
        let sys = pr.assemble(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((sys.quadratic.constant - 1.0).abs() < 1e-14);
        let zero = vec![0.0; pr.layout.n_total()];
        assert!((sys.quadratic.loss(&zero).unwrap() - 1.0).abs() < 1e-14);
        assert!((sys.quadratic.relative_residual(&zero).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn nonpositive_parameter_rejected() {
        let pr = problem(1);
        assert!(pr.assemble(&[1.0, -0.5, 1.0, 1.0]).is_err());
    }

    #[test]
    fn first_term_vanishes_for_matching_pair_at_unit_diffusion() {
        // The edge-flux interpolant of grad u_h reproduces grad u_h exactly
        // when the normal fluxes are continuous. On the two level-0
        // triangles this holds iff u(1,1) = u(1,0) + u(0,1); with a = 1 the
        // first residual term of such a matching pair integrates to zero.
        let hier = Arc::new(build_unit_square_hierarchy(0).unwrap());
        let mesh = hier.level(0);
        let u_vals = [0.0, 0.3, 0.8, 0.5]; // corners (0,0),(1,0),(1,1),(0,1)
        let mut sigma = vec![0.0; mesh.num_edges()];
        let tri_grad = |t: usize| -> [f64; 2] {
            let [va, vb, vc] = mesh.triangles[t];
            let verts = [mesh.vertices[va], mesh.vertices[vb], mesh.vertices[vc]];
            let area = mesh.tri_area[t];
            let mut grad = [0.0, 0.0];
            for (i, &v) in [va, vb, vc].iter().enumerate() {
                let u = verts[(i + 2) % 3];
                let w = verts[(i + 1) % 3];
                grad[0] += u_vals[v] * (-(u[1] - w[1])) / (2.0 * area);
                grad[1] += u_vals[v] * (u[0] - w[0]) / (2.0 * area);
            }
            grad
        };
        for e in 0..mesh.num_edges() {
            let g = tri_grad(mesh.edge_tris[e].0);
            let n = mesh.edge_normal(e);
            sigma[e] = mesh.edge_length(e) * (g[0] * n[0] + g[1] * n[1]);
        }
        // integrate |sigma_h - grad u_h|^2 directly
        let rule = quadrature::triangle_rule(4);
        let mut mismatch = 0.0;
        for t in 0..mesh.num_triangles() {
            let [va, vb, vc] = mesh.triangles[t];
            let verts = [mesh.vertices[va], mesh.vertices[vb], mesh.vertices[vc]];
            let area = mesh.tri_area[t];
            let g = tri_grad(t);
            for &(l0, l1, l2, wq) in rule {
                let x = [
                    l0 * verts[0][0] + l1 * verts[1][0] + l2 * verts[2][0],
                    l0 * verts[0][1] + l1 * verts[1][1] + l2 * verts[2][1],
                ];
                let mut s = [0.0, 0.0];
                for i in 0..3 {
                    let c = sigma[mesh.tri_edges[t][i]] * mesh.rt0_sign(t, i) / (2.0 * area);
                    s[0] += c * (x[0] - verts[i][0]);
                    s[1] += c * (x[1] - verts[i][1]);
                }
                mismatch += wq * area * ((s[0] - g[0]).powi(2) + (s[1] - g[1]).powi(2));
            }
        }
        assert!(mismatch <= 1e-28, "matching pair mismatch {mismatch}");
    }

    #[test]
    fn assembled_quadratic_matches_degree6_quadrature() {
        let pr = problem(2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let p = [0.7, 1.4, 0.9, 1.2];
        let sys = pr.assemble(&p).unwrap();
        for _ in 0..5 {
            let w: Vec<f64> = (0..pr.layout.n_total())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let from_form = sys.quadratic.loss(&w).unwrap();
            let direct = pr.loss_by_quadrature(&p, &w).unwrap();
            assert!(
                (from_form - direct).abs() <= 1e-12 * (1.0 + direct),
                "{from_form} vs {direct}"
            );
        }
    }

    #[test]
    fn lsg_solution_is_first_order_optimal() {
        let pr = problem(3);
        let p = [0.65, 1.45, 1.45, 0.65];
        let sys = pr.assemble(&p).unwrap();
        let w = pr.solve_lsg(&sys).unwrap();
        let g = sys.quadratic.loss_gradient(&w).unwrap();
        let scale = numerics::norm(&sys.quadratic.load).max(1.0);
        assert!(numerics::norm(&g) <= 1e-8 * scale);

        // loss strictly increases under random perturbations
        let base = sys.quadratic.loss(&w).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let delta: Vec<f64> = (0..w.len()).map(|_| rng.random_range(-1e-3..1e-3)).collect();
            let wp: Vec<f64> = w.iter().zip(&delta).map(|(a, b)| a + b).collect();
            assert!(sys.quadratic.loss(&wp).unwrap() > base);
        }
    }

    #[test]
    fn relative_residual_of_perturbed_solution_grows() {
        let pr = problem(2);
        let sys = pr.assemble(&[1.0; 4]).unwrap();
        let w = pr.solve_lsg(&sys).unwrap();
        let r0 = sys.quadratic.relative_residual(&w).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let delta: Vec<f64> = (0..w.len()).map(|_| rng.random_range(-0.01..0.01)).collect();
        let wp: Vec<f64> = w.iter().zip(&delta).map(|(a, b)| a + b).collect();
        assert!(sys.quadratic.relative_residual(&wp).unwrap() > r0);
    }

    #[test]
    fn manufactured_solution_residual_decays_first_order() {
        // a = 1, u* = sin(pi x) sin(pi y), f = 2 pi^2 u*
        let pi = std::f64::consts::PI;
        let rhs = EllipticRhs::Function {
            f: Arc::new(move |x: [f64; 2]| {
                2.0 * pi * pi * (pi * x[0]).sin() * (pi * x[1]).sin()
            }),
            degree: 6,
        };
        let mut residuals = Vec::new();
        for level in 2..=4 {
            let hier = Arc::new(build_unit_square_hierarchy(level).unwrap());
            let pr = FoslsProblem::new(hier, level, rhs.clone());
            let sys = pr.assemble(&[1.0; 4]).unwrap();
            let w = pr.solve_lsg(&sys).unwrap();
            residuals.push(sys.quadratic.relative_residual(&w).unwrap());
        }
        // halving h should roughly halve the residual
        for k in 1..residuals.len() {
            let rate = residuals[k] / residuals[k - 1];
            assert!(
                rate > 0.3 && rate < 0.7,
                "observed rate {rate} not close to first order: {residuals:?}"
            );
        }
    }

    #[test]
    fn residual_tracks_trial_norm_error_uniformly() {
        // variational correctness surrogate: for random w near the solution,
        // residual and trial-norm error stay within a fixed mutual ratio
        let pr = problem(2);
        let sys = pr.assemble(&[1.0; 4]).unwrap();
        let w_ref = pr.solve_lsg(&sys).unwrap();
        let gram = pr.u_norm_gram();
        let gram_norm = |v: &[f64]| -> f64 {
            numerics::dot(v, &gram.mul_vec(v).unwrap()).sqrt()
        };
        let ref_norm = gram_norm(&w_ref);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        let mut ratios = Vec::new();
        for _ in 0..20 {
            let delta: Vec<f64> = (0..w_ref.len())
                .map(|_| rng.random_range(-0.3..0.3))
                .collect();
            let w: Vec<f64> = w_ref.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let err: Vec<f64> = w.iter().zip(&w_ref).map(|(a, b)| a - b).collect();
            let rel_err = gram_norm(&err) / ref_norm;
            let rel_res = sys.quadratic.relative_residual(&w).unwrap();
            ratios.push(rel_res / rel_err);
        }
        let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
        let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            max / min <= 10.0,
            "residual/error ratios spread too far: [{min}, {max}]"
        );
    }

    #[test]
    fn normal_matrix_stays_spd_across_the_parameter_box() {
        let pr = problem(2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let p: Vec<f64> = (0..4).map(|_| rng.random_range(0.5..1.5)).collect();
            let sys = pr.assemble(&p).unwrap();
            // dense Cholesky succeeds <=> SPD
            assert!(sys.quadratic.normal.to_dense().cholesky().is_ok());
        }
    }
}
