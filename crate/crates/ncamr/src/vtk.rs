//! Legacy-format VTK unstructured-grid export.
//!
//! Leaf elements are written as independent cells; points are shared
//! through the mesh's vertex registry, so a mesh with hanging nodes
//! exports as-is — coarse and fine cells simply meet along the interface
//! without any conformization.  Output is fully deterministic: exporting
//! the same mesh twice yields byte-identical files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::geom::Geom;
use crate::ncmesh::NCMesh;
use crate::Result;

/// Per-cell scalar attached to an export, one value per leaf in
/// depth-first leaf order.
pub struct CellScalars<'a> {
    pub name: &'a str,
    pub values: Vec<f64>,
}

/// VTK cell type id for a geometry.
fn vtk_cell_type(geom: Geom) -> u8 {
    match geom {
        Geom::Tri => 5,
        Geom::Quad => 9,
        Geom::Hex => 12,
    }
}

/// Renders the mesh as a legacy VTK unstructured grid.  `scalars` become
/// `CELL_DATA` arrays (each must hold one value per leaf).
pub fn write_vtk(mesh: &NCMesh, scalars: &[CellScalars]) -> Result<String> {
    let leaves = mesh.dfs_leaves();
    for s in scalars {
        if s.values.len() != leaves.len() {
            return Err(crate::error::Error::DimensionMismatch(format!(
                "cell array '{}' has {} values for {} cells",
                s.name,
                s.values.len(),
                leaves.len()
            )));
        }
    }

    // Compact point list: vertices in order of first use by a leaf.
    let mut point_of: HashMap<u32, usize> = HashMap::new();
    let mut points: Vec<u32> = Vec::new();
    let mut cells: Vec<(Geom, Vec<usize>)> = Vec::with_capacity(leaves.len());
    for &l in &leaves {
        let geom = mesh.element(l).unwrap().geom;
        let ids = mesh.element_corners(l);
        let mut cell = Vec::with_capacity(ids.len());
        for v in ids {
            let idx = *point_of.entry(v).or_insert_with(|| {
                points.push(v);
                points.len() - 1
            });
            cell.push(idx);
        }
        cells.push((geom, cell));
    }

    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("ncamr mesh export\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");

    let _ = writeln!(out, "POINTS {} double", points.len());
    for &v in &points {
        let p = mesh.vertex_pos(v);
        let _ = writeln!(out, "{:e} {:e} {:e}", p[0], p[1], p[2]);
    }

    let list_len: usize = cells.iter().map(|(_, c)| c.len() + 1).sum();
    let _ = writeln!(out, "CELLS {} {}", cells.len(), list_len);
    for (_, cell) in &cells {
        let _ = write!(out, "{}", cell.len());
        for &i in cell {
            let _ = write!(out, " {i}");
        }
        out.push('\n');
    }

    let _ = writeln!(out, "CELL_TYPES {}", cells.len());
    for (geom, _) in &cells {
        let _ = writeln!(out, "{}", vtk_cell_type(*geom));
    }

    if !scalars.is_empty() {
        let _ = writeln!(out, "CELL_DATA {}", cells.len());
        for s in scalars {
            let _ = writeln!(out, "SCALARS {} double 1", s.name);
            out.push_str("LOOKUP_TABLE default\n");
            for &v in &s.values {
                let _ = writeln!(out, "{v:e}");
            }
        }
    }
    Ok(out)
}

/// [`write_vtk`] straight to a file.
pub fn write_vtk_to(
    mesh: &NCMesh,
    path: impl AsRef<Path>,
    scalars: &[CellScalars],
) -> Result<()> {
    let text = write_vtk(mesh, scalars)?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::REF_XY;
    use crate::testutil::quad_grid;

    // [TRIVIAL] 4x4 grid of quads: 16 cells and (4+1)^2 = 25 shared
    // corner points.
    #[test]
    fn four_by_four_grid_exports_16_cells_25_points() {
        let mesh = quad_grid(4);
        let text = write_vtk(&mesh, &[]).unwrap();
        assert!(text.contains("POINTS 25 double"), "{text}");
        assert!(text.contains("CELLS 16 80"), "{text}");
        assert!(text.contains("CELL_TYPES 16"), "{text}");
        let types = text.split("CELL_TYPES 16\n").nth(1).unwrap();
        assert_eq!(types.lines().take_while(|l| *l == "9").count(), 16);
    }

    // [DERIVED] One quad refined isotropically, then one of its children
    // refined again: 1 + 3 + 4 = 7 leaf cells (counted on the refinement
    // tree by hand).  The export must keep them as independent cells.
    #[test]
    fn refined_mesh_exports_leaves_as_cells() {
        let mut mesh = quad_grid(2);
        let first = mesh.dfs_leaves()[0];
        let children = mesh.refine(first, REF_XY).unwrap();
        mesh.refine(children[2], REF_XY).unwrap();
        mesh.ensure_consistency().unwrap();
        assert_eq!(mesh.dfs_leaves().len(), 10);
        let text = write_vtk(&mesh, &[]).unwrap();
        assert!(text.contains("CELLS 10 "), "{text}");
    }

    // [TRIVIAL] Determinism: exporting the same mesh twice is
    // byte-identical.
    #[test]
    fn export_is_deterministic() {
        let mut mesh = quad_grid(3);
        let l = mesh.dfs_leaves()[4];
        mesh.refine(l, REF_XY).unwrap();
        mesh.ensure_consistency().unwrap();
        let a = write_vtk(&mesh, &[]).unwrap();
        let b = write_vtk(&mesh, &[]).unwrap();
        assert_eq!(a, b);
    }

    // [TRIVIAL] Cell-data length mismatch is rejected.
    #[test]
    fn wrong_cell_data_length_is_rejected() {
        let mesh = quad_grid(2);
        let bad = CellScalars { name: "rank", values: vec![0.0; 3] };
        assert!(write_vtk(&mesh, &[bad]).is_err());
    }
}
