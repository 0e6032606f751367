//! Ultra-weak DPG discretization of parametric linear transport
//! b(x,p) . grad u + c u = f on the unit square with u = g on the inflow
//! boundary.
//!
//! The trial space pairs a broken piecewise constant field variable with a
//! vertex-based piecewise linear skeleton trace (single-valued at vertices,
//! eliminated on the closed inflow boundary). Test functions are broken
//! quadratics; each element carries a small Gram matrix of the adjoint graph
//! norm ||b . grad v - c v||^2 + ||v||^2, so the dual-norm residual is
//! computable through local SPD solves:
//!
//!   loss(w) = sum_K r_K' G_K^{-1} r_K,   r_K = f_K - B_K w_K.

pub mod oracle;

use crate::error::{Error, Result};
use crate::mesh::{classify_boundary_edges, EdgeLabel, MeshHierarchy, MeshLevel};
use crate::numerics::{DenseMatrix, SparseMatrix};
use crate::quadrature;
use crate::residual::{detect_null_dofs, pin_dofs, QuadraticResidual};
use std::sync::Arc;

/// Parametric convection family. The reaction coefficient is zero in both
/// experiments but kept explicit in the formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvectionField {
    /// b = (cos(pi p), sin(pi p)) for a single parameter p in (0, 1/2).
    Angle,
    /// b = (1, sum_i p_i a_i(x2)) where a_i are the hat functions on the 7
    /// interior nodes of a uniform 9-node grid on [0, 1], p_i in [0.3, 1.3].
    /// The first coordinate acts as time.
    SpaceHats,
}

impl ConvectionField {
    pub fn dim(&self) -> usize {
        match self {
            ConvectionField::Angle => 1,
            ConvectionField::SpaceHats => 7,
        }
    }

    pub fn parameter_box(&self) -> Vec<(f64, f64)> {
        match self {
            ConvectionField::Angle => vec![(0.0, 0.5)],
            ConvectionField::SpaceHats => vec![(0.3, 1.3); 7],
        }
    }

    pub fn validate(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::ParameterOutOfRange(format!(
                "expected {} parameters, got {}",
                self.dim(),
                p.len()
            )));
        }
        for (i, ((lo, hi), &pi)) in self.parameter_box().iter().zip(p).enumerate() {
            if !(pi >= *lo && pi <= *hi) {
                return Err(Error::ParameterOutOfRange(format!(
                    "parameter {i} = {pi} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// Hat-function expansion on the 9-node grid, endpoints clamped to zero.
    fn hats(p: &[f64], y: f64) -> f64 {
        // nodal values [0, p_1..p_7, 0] at y = k/8
        let t = (y.clamp(0.0, 1.0)) * 8.0;
        let k = (t.floor() as usize).min(7);
        let frac = t - k as f64;
        let val = |idx: usize| -> f64 {
            if idx == 0 || idx == 8 {
                0.0
            } else {
                p[idx - 1]
            }
        };
        val(k) * (1.0 - frac) + val(k + 1) * frac
    }

    pub fn eval(&self, x: [f64; 2], p: &[f64]) -> [f64; 2] {
        match self {
            ConvectionField::Angle => {
                let a = std::f64::consts::PI * p[0];
                [a.cos(), a.sin()]
            }
            ConvectionField::SpaceHats => [1.0, Self::hats(p, x[1])],
        }
    }

    /// Representative parameter in the interior of the box; the inflow
    /// boundary (and hence the dof layout) is the same for the whole family.
    pub fn representative(&self) -> Vec<f64> {
        match self {
            ConvectionField::Angle => vec![0.25],
            ConvectionField::SpaceHats => vec![0.8; 7],
        }
    }
}

/// Source term of the transport problem; inflow data is homogeneous.
#[derive(Debug, Clone)]
pub enum TransportSource {
    Zero,
    /// Indicator of an axis-aligned box, the paper's chi_{[0.25,0.5]^2}.
    BoxIndicator { lo: [f64; 2], hi: [f64; 2] },
}

impl TransportSource {
    pub fn standard() -> Self {
        TransportSource::BoxIndicator {
            lo: [0.25, 0.25],
            hi: [0.5, 0.5],
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            TransportSource::Zero => 0.0,
            TransportSource::BoxIndicator { lo, hi } => {
                if x[0] >= lo[0] && x[0] <= hi[0] && x[1] >= lo[1] && x[1] <= hi[1] {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Dof layout: one field dof per triangle, then one skeleton dof per mesh
/// vertex not on the closed inflow boundary.
#[derive(Debug, Clone)]
pub struct DpgLayout {
    pub n_field: usize,
    pub n_skeleton: usize,
    pub vertex_dof: Vec<Option<usize>>,
    /// Labels used for the elimination (computed at the representative
    /// parameter).
    pub edge_labels: Vec<Option<EdgeLabel>>,
}

impl DpgLayout {
    pub fn new(level: &MeshLevel, field: ConvectionField) -> Self {
        let rep = field.representative();
        let labels = classify_boundary_edges(level, |x| field.eval(x, &rep));
        Self::from_labels(level, labels)
    }

    pub fn from_labels(level: &MeshLevel, edge_labels: Vec<Option<EdgeLabel>>) -> Self {
        let mut eliminated = vec![false; level.num_vertices()];
        for (e, label) in edge_labels.iter().enumerate() {
            if *label == Some(EdgeLabel::Inflow) {
                let [a, b] = level.edges[e];
                eliminated[a] = true;
                eliminated[b] = true;
            }
        }
        let mut vertex_dof = vec![None; level.num_vertices()];
        let mut n_skeleton = 0;
        for v in 0..level.num_vertices() {
            if !eliminated[v] {
                vertex_dof[v] = Some(n_skeleton);
                n_skeleton += 1;
            }
        }
        DpgLayout {
            n_field: level.num_triangles(),
            n_skeleton,
            vertex_dof,
            edge_labels,
        }
    }

    pub fn n_total(&self) -> usize {
        self.n_field + self.n_skeleton
    }
}

/// Local trial-to-test pairing, test Gram and load of one element. Trial
/// columns are [field, v0, v1, v2]; eliminated skeleton columns carry `None`
/// and are fixed to the (zero) inflow data.
#[derive(Debug, Clone)]
pub struct DpgLocalSystem {
    pub tri: usize,
    pub b_k: DenseMatrix,
    pub g_k: DenseMatrix,
    pub f_k: Vec<f64>,
    pub trial_dofs: [Option<usize>; 4],
}

impl DpgLocalSystem {
    /// Riesz lift of the local residual and its squared test norm:
    /// lift = G_K^{-1} (f_K - B_K w_K), loss_K = r_K' lift.
    pub fn residual_lift(&self, w_local: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut r = self.f_k.clone();
        let bw = self.b_k.mul_vec(w_local)?;
        for (ri, bi) in r.iter_mut().zip(&bw) {
            *ri -= bi;
        }
        let lift = self.g_k.cholesky()?.solve(&r);
        let loss = crate::numerics::dot(&r, &lift).max(0.0);
        Ok((lift, loss))
    }

    /// Local trial coefficients extracted from a global vector.
    pub fn gather(&self, w: &[f64]) -> Vec<f64> {
        self.trial_dofs
            .iter()
            .map(|d| d.map_or(0.0, |g| w[g]))
            .collect()
    }
}

pub struct DpgProblem {
    pub hier: Arc<MeshHierarchy>,
    pub level: usize,
    pub field: ConvectionField,
    pub source: TransportSource,
    pub reaction: f64,
    pub layout: DpgLayout,
}

/// Quadrature degrees: volume terms are polynomials of degree <= 4 (P2 test
/// times linear-per-element b twice), edge terms of degree <= 4.
const VOLUME_DEGREE: usize = 4;
const EDGE_DEGREE: usize = 5;

/// P2 basis values at a barycentric point, ordered
/// [v0, v1, v2, m01, m12, m20].
fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

fn p2_gradients(l: [f64; 3], grad_l: [[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let g = |i: usize| grad_l[i];
    let mut out = [[0.0; 2]; 6];
    for i in 0..3 {
        out[i] = [
            (4.0 * l[i] - 1.0) * g(i)[0],
            (4.0 * l[i] - 1.0) * g(i)[1],
        ];
    }
    for (k, (i, j)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
        out[3 + k] = [
            4.0 * (l[i] * g(j)[0] + l[j] * g(i)[0]),
            4.0 * (l[i] * g(j)[1] + l[j] * g(i)[1]),
        ];
    }
    out
}

impl DpgProblem {
    pub fn new(
        hier: Arc<MeshHierarchy>,
        level: usize,
        field: ConvectionField,
        source: TransportSource,
    ) -> Self {
        let layout = DpgLayout::new(hier.level(level), field);
        DpgProblem {
            hier,
            level,
            field,
            source,
            reaction: 0.0,
            layout,
        }
    }

    pub fn mesh(&self) -> &MeshLevel {
        self.hier.level(self.level)
    }

    /// Local test Gram of the mass-augmented adjoint graph norm
    /// ||div(b v) - c v||^2_K + ||v||^2_K over the fixed P2 basis.
    pub fn local_test_gram(&self, t: usize, p: &[f64]) -> DenseMatrix {
        let mesh = self.mesh();
        test_gram_for_velocity(mesh, t, |x| self.field.eval(x, p), self.reaction)
    }

    /// Assembles the local pairing matrix, Gram and load of element `t`.
    /// Inflow data g enters the load on inflow edges with weight |b . n|.
    pub fn assemble_local(
        &self,
        t: usize,
        p: &[f64],
        g_inflow: impl Fn([f64; 2]) -> f64,
    ) -> Result<DpgLocalSystem> {
        self.field.validate(p)?;
        let mesh = self.mesh();
        let [va, vb, vc] = mesh.triangles[t];
        let vids = [va, vb, vc];
        let verts = [mesh.vertices[va], mesh.vertices[vb], mesh.vertices[vc]];
        let area = mesh.tri_area[t];
        let grad_l = hat_gradients(&verts, area);
        let labels = classify_boundary_edges(mesh, |x| self.field.eval(x, p));

        let mut b_k = DenseMatrix::zeros(6, 4);
        let mut f_k = vec![0.0; 6];

        // volume terms: field column and source load
        let rule = quadrature::triangle_rule(VOLUME_DEGREE);
        let mut f_vals = Vec::with_capacity(rule.len());
        for &(l0, l1, l2, wq) in rule {
            let l = [l0, l1, l2];
            let x = bary_to_xy(&verts, l);
            let b = self.field.eval(x, p);
            let psi = p2_values(l);
            let dpsi = p2_gradients(l, grad_l);
            let weight = wq * area;
            let fx = self.source.eval(x);
            f_vals.push(fx);
            for m in 0..6 {
                let adj = b[0] * dpsi[m][0] + b[1] * dpsi[m][1] - self.reaction * psi[m];
                b_k[(m, 0)] -= weight * adj;
                f_k[m] += weight * fx * psi[m];
            }
        }
        // an unresolved jump of the source inside the element silently breaks
        // the exactness contract; refuse it
        if matches!(self.source, TransportSource::BoxIndicator { .. }) {
            let first = f_vals[0];
            if f_vals.iter().any(|&v| v != first) {
                return Err(Error::ParameterOutOfRange(format!(
                    "source discontinuity unresolved inside triangle {t}; refine the mesh"
                )));
            }
        }

        // skeleton pairing over non-inflow edges, inflow-data load otherwise
        let erule = quadrature::edge_rule(EDGE_DEGREE);
        for i in 0..3 {
            let e = mesh.tri_edges[t][i];
            // edge opposite local vertex i joins the other two local vertices
            let (la, lb) = ((i + 1) % 3, (i + 2) % 3);
            let (pa, pb) = (verts[la], verts[lb]);
            let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
            // outward normal of this triangle across edge e
            let sign = mesh.rt0_sign(t, i);
            let n_out = {
                let n = mesh.edge_normal(e);
                [sign * n[0], sign * n[1]]
            };
            let inflow = labels[e] == Some(EdgeLabel::Inflow);
            for &(s, wq) in erule {
                let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
                let b = self.field.eval(x, p);
                let bn = b[0] * n_out[0] + b[1] * n_out[1];
                // barycentric coordinates along the edge
                let mut l = [0.0; 3];
                l[la] = 1.0 - s;
                l[lb] = s;
                let psi = p2_values(l);
                let weight = wq * len;
                if inflow {
                    let gx = g_inflow(x);
                    for m in 0..6 {
                        f_k[m] += weight * bn.abs() * gx * psi[m];
                    }
                } else {
                    // trace is linear on the edge: lambda_a carries vertex la
                    for m in 0..6 {
                        b_k[(m, 1 + la)] += weight * bn * (1.0 - s) * psi[m];
                        b_k[(m, 1 + lb)] += weight * bn * s * psi[m];
                    }
                }
            }
        }

        let trial_dofs = [
            Some(t),
            self.layout.vertex_dof[vids[0]].map(|d| self.layout.n_field + d),
            self.layout.vertex_dof[vids[1]].map(|d| self.layout.n_field + d),
            self.layout.vertex_dof[vids[2]].map(|d| self.layout.n_field + d),
        ];
        Ok(DpgLocalSystem {
            tri: t,
            b_k,
            g_k: self.local_test_gram(t, p),
            f_k,
            trial_dofs,
        })
    }

    /// Assembles the global quadratic residual form
    /// loss(w) = sum_K (f_K - B_K w)' G_K^{-1} (f_K - B_K w).
    pub fn assemble(&self, p: &[f64]) -> Result<QuadraticResidual> {
        let mesh = self.mesh();
        let n = self.layout.n_total();
        let mut triplets = Vec::with_capacity(16 * mesh.num_triangles());
        let mut load = vec![0.0; n];
        let mut constant = 0.0;
        for t in 0..mesh.num_triangles() {
            let local = self.assemble_local(t, p, |_| 0.0)?;
            let chol = local.g_k.cholesky()?;
            // M = G^{-1} B_K column by column
            let mut m = DenseMatrix::zeros(6, 4);
            for c in 0..4 {
                let col: Vec<f64> = (0..6).map(|r| local.b_k[(r, c)]).collect();
                let sol = chol.solve(&col);
                for r in 0..6 {
                    m[(r, c)] = sol[r];
                }
            }
            let gf = chol.solve(&local.f_k);
            for ci in 0..4 {
                let Some(gi) = local.trial_dofs[ci] else { continue };
                let mut bi = 0.0;
                for r in 0..6 {
                    bi += local.b_k[(r, ci)] * gf[r];
                }
                load[gi] += bi;
                for cj in 0..4 {
                    let Some(gj) = local.trial_dofs[cj] else { continue };
                    let mut nij = 0.0;
                    for r in 0..6 {
                        nij += local.b_k[(r, ci)] * m[(r, cj)];
                    }
                    triplets.push((gi, gj, nij));
                }
            }
            constant += crate::numerics::dot(&local.f_k, &gf);
        }

        let normal = SparseMatrix::from_triplets(n, n, &triplets);
        let fixed_zero = detect_null_dofs(&normal);
        let normal = if fixed_zero.is_empty() {
            normal
        } else {
            pin_dofs(&mut triplets, &mut load, &fixed_zero);
            SparseMatrix::from_triplets(n, n, &triplets)
        };
        Ok(QuadraticResidual {
            normal,
            load,
            constant,
            fixed_zero,
        })
    }

    /// Total loss and the per-element loss map of a trial vector.
    pub fn dpg_loss(&self, p: &[f64], w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mesh = self.mesh();
        if w.len() != self.layout.n_total() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.n_total(),
                got: w.len(),
                context: "dpg trial vector",
            });
        }
        let mut per_element = Vec::with_capacity(mesh.num_triangles());
        let mut total = 0.0;
        for t in 0..mesh.num_triangles() {
            let local = self.assemble_local(t, p, |_| 0.0)?;
            let (_, loss_k) = local.residual_lift(&local.gather(w))?;
            per_element.push(loss_k);
            total += loss_k;
        }
        Ok((total, per_element))
    }

    /// Minimizer of the DPG loss over the trial space.
    pub fn solve_dpg(&self, system: &QuadraticResidual) -> Result<Vec<f64>> {
        system.minimize(1e-10)
    }

    /// L2 distance of the piecewise constant field part from a reference
    /// function, integrated with a degree-4 rule.
    pub fn field_l2_error(&self, w: &[f64], reference: impl Fn([f64; 2]) -> f64) -> f64 {
        let mesh = self.mesh();
        let rule = quadrature::triangle_rule(VOLUME_DEGREE);
        let mut err2 = 0.0;
        for t in 0..mesh.num_triangles() {
            let [va, vb, vc] = mesh.triangles[t];
            let verts = [mesh.vertices[va], mesh.vertices[vb], mesh.vertices[vc]];
            let area = mesh.tri_area[t];
            for &(l0, l1, l2, wq) in rule {
                let x = bary_to_xy(&verts, [l0, l1, l2]);
                let d = w[t] - reference(x);
                err2 += wq * area * d * d;
            }
        }
        err2.sqrt()
    }

    /// Prolongs a trial vector [field | skeleton] from `level - 1` to
    /// `level`, matching the underlying functions exactly.
    pub fn prolong_trial(&self, coarse: &DpgProblem, w_coarse: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(coarse.level + 1, self.level);
        let p0 = crate::mesh::p0_prolongation(&self.hier, self.level);
        let skel = crate::mesh::skeleton_prolongation(&self.hier, self.level);
        let skel = crate::mesh::restrict_rows(
            &skel,
            &self
                .layout
                .vertex_dof
                .iter()
                .map(|d| *d)
                .collect::<Vec<_>>(),
            self.layout.n_skeleton,
        );
        let skel = crate::mesh::restrict_columns(
            &skel,
            &coarse
                .layout
                .vertex_dof
                .iter()
                .map(|d| *d)
                .collect::<Vec<_>>(),
            coarse.layout.n_skeleton,
        );
        let field_fine = p0.mul_vec(&w_coarse[..coarse.layout.n_field])?;
        let skel_fine = skel.mul_vec(&w_coarse[coarse.layout.n_field..])?;
        let mut out = field_fine;
        out.extend_from_slice(&skel_fine);
        Ok(out)
    }
}

/// Gram of ||b . grad v - c v||^2 + ||v||^2 for an arbitrary velocity over
/// the P2 basis of one element.
pub fn test_gram_for_velocity(
    mesh: &MeshLevel,
    t: usize,
    velocity: impl Fn([f64; 2]) -> [f64; 2],
    reaction: f64,
) -> DenseMatrix {
    let [va, vb, vc] = mesh.triangles[t];
    let verts = [mesh.vertices[va], mesh.vertices[vb], mesh.vertices[vc]];
    let area = mesh.tri_area[t];
    let grad_l = hat_gradients(&verts, area);
    let rule = quadrature::triangle_rule(VOLUME_DEGREE);
    let mut g = DenseMatrix::zeros(6, 6);
    for &(l0, l1, l2, wq) in rule {
        let l = [l0, l1, l2];
        let x = bary_to_xy(&verts, l);
        let b = velocity(x);
        let psi = p2_values(l);
        let dpsi = p2_gradients(l, grad_l);
        let weight = wq * area;
        let mut d = [0.0f64; 6];
        for m in 0..6 {
            d[m] = b[0] * dpsi[m][0] + b[1] * dpsi[m][1] - reaction * psi[m];
        }
        for m in 0..6 {
            for n in 0..6 {
                g[(m, n)] += weight * (d[m] * d[n] + psi[m] * psi[n]);
            }
        }
    }
    g
}

fn bary_to_xy(verts: &[[f64; 2]; 3], l: [f64; 3]) -> [f64; 2] {
    [
        l[0] * verts[0][0] + l[1] * verts[1][0] + l[2] * verts[2][0],
        l[0] * verts[0][1] + l[1] * verts[1][1] + l[2] * verts[2][1],
    ]
}

fn hat_gradients(verts: &[[f64; 2]; 3], area: f64) -> [[f64; 2]; 3] {
    let mut grads = [[0.0f64; 2]; 3];
    for i in 0..3 {
        let u = verts[(i + 2) % 3];
        let w = verts[(i + 1) % 3];
        grads[i] = [-(u[1] - w[1]) / (2.0 * area), (u[0] - w[0]) / (2.0 * area)];
    }
    grads
}
