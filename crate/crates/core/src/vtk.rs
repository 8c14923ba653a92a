//! Legacy ASCII VTK output of a surface mesh with nodal `u` and `w`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::SurfaceMesh;

/// Renders the mesh as `POLYDATA` with point data `u`, `w` and field data
/// `time`. Numbers use the shortest round-trip representation.
pub fn render(mesh: &SurfaceMesh, u: &[f64], w: &[f64]) -> Result<String> {
    let n = mesh.node_count();
    if u.len() != n || w.len() != n {
        return Err(Error::InvalidArgument(format!(
            "expected {n} nodal values, got {} and {}",
            u.len(),
            w.len()
        )));
    }
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "chsurf t={}", mesh.time);
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET POLYDATA");
    let _ = writeln!(s, "FIELD FieldData 1");
    let _ = writeln!(s, "time 1 1 double");
    let _ = writeln!(s, "{:?}", mesh.time);
    let _ = writeln!(s, "POINTS {n} double");
    for x in &mesh.nodes {
        let _ = writeln!(s, "{:?} {:?} {:?}", x.x, x.y, x.z);
    }
    let m = mesh.element_count();
    let _ = writeln!(s, "POLYGONS {m} {}", 4 * m);
    for [a, b, c] in &mesh.elements {
        let _ = writeln!(s, "3 {a} {b} {c}");
    }
    let _ = writeln!(s, "POINT_DATA {n}");
    for (name, values) in [("u", u), ("w", w)] {
        let _ = writeln!(s, "SCALARS {name} double 1");
        let _ = writeln!(s, "LOOKUP_TABLE default");
        for v in values {
            let _ = writeln!(s, "{v:?}");
        }
    }
    Ok(s)
}

pub fn write(path: &Path, mesh: &SurfaceMesh, u: &[f64], w: &[f64]) -> Result<()> {
    let text = render(mesh, u, w)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
