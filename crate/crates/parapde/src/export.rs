//! Snapshot and mesh export: legacy ASCII VTK for viewers, CSV for plotting
//! scripts. Output is deterministic (shortest round-trip float formatting).

use crate::error::Result;
use crate::mesh::MeshLevel;
use std::fmt::Write as _;
use std::path::Path;

fn vtk_header(mesh: &MeshLevel, title: &str) -> String {
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "{title}");
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.num_vertices());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} 0", v[0], v[1]);
    }
    let _ = writeln!(s, "CELLS {} {}", mesh.num_triangles(), 4 * mesh.num_triangles());
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {}", mesh.num_triangles());
    for _ in 0..mesh.num_triangles() {
        s.push_str("5\n");
    }
    s
}

/// Mesh geometry only.
pub fn write_vtk_mesh(path: &Path, mesh: &MeshLevel) -> Result<()> {
    std::fs::write(path, vtk_header(mesh, "triangulation"))?;
    Ok(())
}

/// Vertex scalar (u) plus an optional per-cell vector field (sigma).
pub fn write_vtk_vertex_scalar(
    path: &Path,
    mesh: &MeshLevel,
    name: &str,
    values: &[f64],
    cell_vectors: Option<(&str, &[[f64; 2]])>,
) -> Result<()> {
    let mut s = vtk_header(mesh, "snapshot");
    let _ = writeln!(s, "POINT_DATA {}", mesh.num_vertices());
    let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
    for v in values {
        let _ = writeln!(s, "{v}");
    }
    if let Some((vec_name, vectors)) = cell_vectors {
        let _ = writeln!(s, "CELL_DATA {}", mesh.num_triangles());
        let _ = writeln!(s, "VECTORS {vec_name} double");
        for v in vectors {
            let _ = writeln!(s, "{} {} 0", v[0], v[1]);
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Per-cell scalar (piecewise constant fields).
pub fn write_vtk_cell_scalar(
    path: &Path,
    mesh: &MeshLevel,
    name: &str,
    values: &[f64],
) -> Result<()> {
    let mut s = vtk_header(mesh, "snapshot");
    let _ = writeln!(s, "CELL_DATA {}", mesh.num_triangles());
    let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
    for v in values {
        let _ = writeln!(s, "{v}");
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// "x,y,<name>" per vertex.
pub fn write_csv_vertex_scalar(
    path: &Path,
    mesh: &MeshLevel,
    name: &str,
    values: &[f64],
) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "x,y,{name}");
    for (v, val) in mesh.vertices.iter().zip(values) {
        let _ = writeln!(s, "{},{},{val}", v[0], v[1]);
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// "x,y,<name>" per triangle centroid.
pub fn write_csv_cell_scalar(
    path: &Path,
    mesh: &MeshLevel,
    name: &str,
    values: &[f64],
) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "x,y,{name}");
    for (t, val) in (0..mesh.num_triangles()).zip(values) {
        let c = mesh.centroid(t);
        let _ = writeln!(s, "{},{},{val}", c[0], c[1]);
    }
    std::fs::write(path, s)?;
    Ok(())
}
