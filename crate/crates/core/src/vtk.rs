//! Legacy-VTK ASCII export of meshes and DG fields (unstructured grids of
//! triangles, cell type 5).
//!
//! Fields are written with duplicated corner points (three per triangle) so
//! one-sided DG values survive the export; shared-vertex output would have to
//! merge them. Cell data carries the per-element deformation-gradient
//! determinant and the gradient entries; point data carries displacement
//! samples at the element corners.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::space::DGFunction;

fn fmt_f64(v: f64) -> String {
    // Shortest round-trip formatting keeps files byte-deterministic.
    format!("{v}")
}

/// Mesh-only dump with shared vertices.
pub fn mesh_vtk_string(mesh: &Mesh) -> String {
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("triangulation\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", mesh.vertices.len());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {} 0", fmt_f64(v[0]), fmt_f64(v[1]));
    }
    let n = mesh.n_elements();
    let _ = writeln!(out, "CELLS {} {}", n, 4 * n);
    for tri in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", tri[0], tri[1], tri[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {n}");
    for _ in 0..n {
        out.push_str("5\n");
    }
    out
}

pub fn write_mesh_vtk(mesh: &Mesh, path: &Path) -> Result<()> {
    fs::write(path, mesh_vtk_string(mesh))
        .map_err(|e| Error::internal(format!("vtk write failed: {e}")))
}

/// Field dump: duplicated corners, per-cell detF and gradient, per-corner
/// displacement samples.
pub fn field_vtk_string(u: &DGFunction) -> Result<String> {
    if u.n_comp != 2 || u.degree != 1 {
        return Err(Error::invalid(
            "field export expects a two-component degree-1 field",
        ));
    }
    let mesh = &u.mesh;
    let n = mesh.n_elements();
    let basis = u.basis();
    let grad = u.broken_gradient();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("dg field\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", 3 * n);
    for elem in 0..n {
        for v in mesh.element_vertices(elem) {
            let _ = writeln!(out, "{} {} 0", fmt_f64(v[0]), fmt_f64(v[1]));
        }
    }
    let _ = writeln!(out, "CELLS {} {}", n, 4 * n);
    for elem in 0..n {
        let _ = writeln!(out, "3 {} {} {}", 3 * elem, 3 * elem + 1, 3 * elem + 2);
    }
    let _ = writeln!(out, "CELL_TYPES {n}");
    for _ in 0..n {
        out.push_str("5\n");
    }
    let _ = writeln!(out, "CELL_DATA {n}");
    out.push_str("SCALARS detF double 1\nLOOKUP_TABLE default\n");
    for elem in 0..n {
        let g = grad.constant(elem);
        let det = g[0] * g[3] - g[1] * g[2];
        let _ = writeln!(out, "{}", fmt_f64(det));
    }
    out.push_str("VECTORS displacement double\n");
    for elem in 0..n {
        let [a, b, c] = mesh.element_vertices(elem);
        let bary = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
        let v = u.evaluate_unchecked(elem, bary, &basis);
        let _ = writeln!(out, "{} {} 0", fmt_f64(v[0]), fmt_f64(v[1]));
    }
    out.push_str("FIELD elementdata 1\ngradient 4 ");
    let _ = writeln!(out, "{n} double");
    for elem in 0..n {
        let g = grad.constant(elem);
        let _ = writeln!(
            out,
            "{} {} {} {}",
            fmt_f64(g[0]),
            fmt_f64(g[1]),
            fmt_f64(g[2]),
            fmt_f64(g[3])
        );
    }
    let _ = writeln!(out, "POINT_DATA {}", 3 * n);
    out.push_str("VECTORS displacement double\n");
    for elem in 0..n {
        for v in mesh.element_vertices(elem) {
            let val = u.evaluate_unchecked(elem, v, &basis);
            let _ = writeln!(out, "{} {} 0", fmt_f64(val[0]), fmt_f64(val[1]));
        }
    }
    Ok(out)
}

pub fn write_field_vtk(u: &DGFunction, path: &Path) -> Result<()> {
    fs::write(path, field_vtk_string(u)?)
        .map_err(|e| Error::internal(format!("vtk write failed: {e}")))
}
