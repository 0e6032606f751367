//! Uniform refinement hierarchy of the unit square.
//!
//! Level 0 splits the square along the diagonal from (0,0) to (1,1) into two
//! counter-clockwise triangles. Level j arises from level j-1 by red
//! refinement: every triangle is split into four via its edge midpoints, so
//! level j has (2^j + 1)^2 vertices and 2 * 4^j triangles. Coarse vertices
//! keep their indices on the next level; midpoints are appended after them.

mod prolong;

pub use prolong::{
    p0_prolongation, p1_prolongation, restrict_columns, restrict_rows, rt0_prolongation,
    skeleton_prolongation,
};

use crate::error::{Error, Result};

/// One triangulation level with full entity adjacency.
#[derive(Debug, Clone)]
pub struct MeshLevel {
    pub level: usize,
    pub vertices: Vec<[f64; 2]>,
    /// Vertex index triples, counter-clockwise.
    pub triangles: Vec<[usize; 3]>,
    /// Sorted vertex pairs (lower index first).
    pub edges: Vec<[usize; 2]>,
    /// For each triangle, the edge opposite each local vertex.
    pub tri_edges: Vec<[usize; 3]>,
    /// Incident triangles per edge; boundary edges have exactly one.
    pub edge_tris: Vec<(usize, Option<usize>)>,
    pub tri_area: Vec<f64>,
    /// Outward unit normal for boundary edges, `None` on interior edges.
    pub boundary_normal: Vec<Option<[f64; 2]>>,
    /// True for vertices lying on the domain boundary.
    pub vertex_on_boundary: Vec<bool>,
}

impl MeshLevel {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt()
    }

    pub fn edge_midpoint(&self, e: usize) -> [f64; 2] {
        let [a, b] = self.edges[e];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
    }

    /// Unit direction of the edge from its lower-indexed to its
    /// higher-indexed vertex, and the corresponding unit normal obtained by
    /// a clockwise quarter turn. This fixes the sign convention for RT0
    /// degrees of freedom.
    pub fn edge_normal(&self, e: usize) -> [f64; 2] {
        let [a, b] = self.edges[e];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        let len = self.edge_length(e);
        [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len]
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [
            (pa[0] + pb[0] + pc[0]) / 3.0,
            (pa[1] + pb[1] + pc[1]) / 3.0,
        ]
    }

    /// +1 if the global normal of edge `tri_edges[t][i]` points out of
    /// triangle `t`, else -1.
    pub fn rt0_sign(&self, t: usize, i: usize) -> f64 {
        let e = self.tri_edges[t][i];
        let n = self.edge_normal(e);
        let m = self.edge_midpoint(e);
        let c = self.centroid(t);
        if n[0] * (m[0] - c[0]) + n[1] * (m[1] - c[1]) > 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary_normal[e].is_some()
    }
}

/// Label of a boundary edge relative to a convection field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeLabel {
    Inflow,
    Outflow,
    Characteristic,
}

/// Sign tolerance for n.b when labelling boundary edges.
pub const CHARACTERISTIC_TOL: f64 = 1e-12;

/// Labels every boundary edge by the sign of n.b at its midpoint; interior
/// edges map to `None`.
pub fn classify_boundary_edges(
    level: &MeshLevel,
    velocity: impl Fn([f64; 2]) -> [f64; 2],
) -> Vec<Option<EdgeLabel>> {
    (0..level.num_edges())
        .map(|e| {
            level.boundary_normal[e].map(|n| {
                let b = velocity(level.edge_midpoint(e));
                let nb = n[0] * b[0] + n[1] * b[1];
                if nb < -CHARACTERISTIC_TOL {
                    EdgeLabel::Inflow
                } else if nb > CHARACTERISTIC_TOL {
                    EdgeLabel::Outflow
                } else {
                    EdgeLabel::Characteristic
                }
            })
        })
        .collect()
}

/// Nested uniform triangulations with parent/child maps between levels.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    pub levels: Vec<MeshLevel>,
    /// `tri_children[j][t]` are the level j+1 children of triangle t of
    /// level j; children tile their parent exactly.
    pub tri_children: Vec<Vec<[usize; 4]>>,
    /// `edge_children[j][e]` are the two level j+1 halves of edge e of level
    /// j plus the midpoint vertex index.
    pub edge_children: Vec<Vec<([usize; 2], usize)>>,
    /// `tri_parent[j][t]` is the level j-1 parent of triangle t of level j
    /// (empty for j = 0).
    pub tri_parent: Vec<Vec<usize>>,
}

impl MeshHierarchy {
    pub fn level(&self, j: usize) -> &MeshLevel {
        &self.levels[j]
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

/// Assembles adjacency for a raw vertex/triangle soup. Edge indices follow
/// first-encounter order over triangles.
fn build_level(level: usize, vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<MeshLevel> {
    use std::collections::HashMap;

    let mut edge_index: HashMap<[usize; 2], usize> = HashMap::new();
    let mut edges: Vec<[usize; 2]> = Vec::new();
    let mut edge_tris: Vec<(usize, Option<usize>)> = Vec::new();
    let mut tri_edges = vec![[usize::MAX; 3]; triangles.len()];
    let mut tri_area = Vec::with_capacity(triangles.len());

    for (t, &[a, b, c]) in triangles.iter().enumerate() {
        let area = signed_area(vertices[a], vertices[b], vertices[c]);
        if area <= 0.0 {
            return Err(Error::DegenerateTriangle { tri: t, area });
        }
        tri_area.push(area);
        // edge opposite local vertex i
        for (i, (u, v)) in [(b, c), (c, a), (a, b)].into_iter().enumerate() {
            let key = if u < v { [u, v] } else { [v, u] };
            let e = *edge_index.entry(key).or_insert_with(|| {
                edges.push(key);
                edge_tris.push((t, None));
                edges.len() - 1
            });
            tri_edges[t][i] = e;
            let (first, second) = edge_tris[e];
            if first != t && second.is_none() {
                edge_tris[e] = (first, Some(t));
            }
        }
    }

    let mut boundary_normal = vec![None; edges.len()];
    let mut vertex_on_boundary = vec![false; vertices.len()];
    for (e, &(t, second)) in edge_tris.iter().enumerate() {
        if second.is_some() {
            continue;
        }
        let [a, b] = edges[e];
        let pa = vertices[a];
        let pb = vertices[b];
        let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        let mut n = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
        let [ta, tb, tc] = triangles[t];
        let cen = [
            (vertices[ta][0] + vertices[tb][0] + vertices[tc][0]) / 3.0,
            (vertices[ta][1] + vertices[tb][1] + vertices[tc][1]) / 3.0,
        ];
        let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
        if n[0] * (mid[0] - cen[0]) + n[1] * (mid[1] - cen[1]) < 0.0 {
            n = [-n[0], -n[1]];
        }
        boundary_normal[e] = Some(n);
        vertex_on_boundary[a] = true;
        vertex_on_boundary[b] = true;
    }

    Ok(MeshLevel {
        level,
        vertices,
        triangles,
        edges,
        tri_edges,
        edge_tris,
        tri_area,
        boundary_normal,
        vertex_on_boundary,
    })
}

/// Builds levels 0..=J of the red-refined unit square.
pub fn build_unit_square_hierarchy(max_level: usize) -> Result<MeshHierarchy> {
    let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let triangles = vec![[0, 1, 2], [0, 2, 3]];
    let mut levels = vec![build_level(0, vertices, triangles)?];
    let mut tri_children = Vec::new();
    let mut edge_children = Vec::new();
    let mut tri_parent = vec![Vec::new()];

    for j in 1..=max_level {
        let coarse = &levels[j - 1];
        let nv = coarse.num_vertices();
        let mut vertices = coarse.vertices.clone();
        // midpoint vertex of coarse edge e gets index nv + e
        for e in 0..coarse.num_edges() {
            vertices.push(coarse.edge_midpoint(e));
        }
        let midpoint = |e: usize| nv + e;

        let mut triangles = Vec::with_capacity(4 * coarse.num_triangles());
        let mut children = Vec::with_capacity(coarse.num_triangles());
        let mut parents = Vec::with_capacity(4 * coarse.num_triangles());
        for (t, &[a, b, c]) in coarse.triangles.iter().enumerate() {
            let mab = midpoint(coarse.tri_edges[t][2]);
            let mbc = midpoint(coarse.tri_edges[t][0]);
            let mca = midpoint(coarse.tri_edges[t][1]);
            let base = triangles.len();
            triangles.push([a, mab, mca]);
            triangles.push([mab, b, mbc]);
            triangles.push([mca, mbc, c]);
            triangles.push([mab, mbc, mca]);
            children.push([base, base + 1, base + 2, base + 3]);
            parents.extend_from_slice(&[t, t, t, t]);
        }

        let fine = build_level(j, vertices, triangles)?;

        let mut echildren = Vec::with_capacity(coarse.num_edges());
        let fine_edge_index: std::collections::HashMap<[usize; 2], usize> = fine
            .edges
            .iter()
            .enumerate()
            .map(|(i, &e)| (e, i))
            .collect();
        for (e, &[a, b]) in coarse.edges.iter().enumerate() {
            let m = midpoint(e);
            let half = |u: usize, v: usize| {
                let key = if u < v { [u, v] } else { [v, u] };
                fine_edge_index[&key]
            };
            echildren.push(([half(a, m), half(m, b)], m));
        }

        tri_children.push(children);
        edge_children.push(echildren);
        tri_parent.push(parents);
        levels.push(fine);
    }

    Ok(MeshHierarchy {
        levels,
        tri_children,
        edge_children,
        tri_parent,
    })
}
