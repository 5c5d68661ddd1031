//! Structured mesh generators and small hand-built fixture meshes.
//!
//! These are the standard starting points for benchmarks, the CLI and the
//! test corpus: conforming grids of quads, triangles and hexes, plus a few
//! deliberately non-conforming configurations that exercise the
//! constraint machinery (hanging vertices, indirect constraints, and a
//! constraint cycle).

use std::collections::HashMap;

use crate::geom::{Geom, REF_XY, REF_Y};
use crate::ncmesh::NCMesh;

/// `nx × ny` conforming grid of unit quads on `[0,nx] × [0,ny]`.
/// Elements are added row-major (x fastest), corners counter-clockwise
/// from the lower-left.
pub fn quad_grid_rect(nx: u32, ny: u32) -> NCMesh {
    let mut m = NCMesh::new(2);
    let mut ids = HashMap::new();
    for j in 0..=ny {
        for i in 0..=nx {
            ids.insert((i, j), m.add_vertex([i as f64, j as f64, 0.0]));
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            m.add_root(
                Geom::Quad,
                &[ids[&(i, j)], ids[&(i + 1, j)], ids[&(i + 1, j + 1)], ids[&(i, j + 1)]],
            )
            .unwrap();
        }
    }
    m
}

/// `n × n` conforming grid of unit quads on `[0,n]²`.
pub fn quad_grid(n: u32) -> NCMesh {
    quad_grid_rect(n, n)
}

/// `n × n` grid of unit squares on `[0,n]²`, each split into two
/// triangles along its lower-left-to-upper-right diagonal (`2n²`
/// elements).
pub fn tri_grid(n: u32) -> NCMesh {
    let mut m = NCMesh::new(2);
    let mut ids = HashMap::new();
    for j in 0..=n {
        for i in 0..=n {
            ids.insert((i, j), m.add_vertex([i as f64, j as f64, 0.0]));
        }
    }
    for j in 0..n {
        for i in 0..n {
            let (v00, v10) = (ids[&(i, j)], ids[&(i + 1, j)]);
            let (v11, v01) = (ids[&(i + 1, j + 1)], ids[&(i, j + 1)]);
            m.add_root(Geom::Tri, &[v00, v10, v01]).unwrap();
            m.add_root(Geom::Tri, &[v11, v01, v10]).unwrap();
        }
    }
    m
}

/// `n × n × n` conforming grid of unit hexes on `[0,n]³`.
pub fn hex_grid(n: u32) -> NCMesh {
    let mut m = NCMesh::new(3);
    let mut ids = HashMap::new();
    for k in 0..=n {
        for j in 0..=n {
            for i in 0..=n {
                ids.insert((i, j, k), m.add_vertex([i as f64, j as f64, k as f64]));
            }
        }
    }
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                m.add_root(
                    Geom::Hex,
                    &[
                        ids[&(i, j, k)],
                        ids[&(i + 1, j, k)],
                        ids[&(i + 1, j + 1, k)],
                        ids[&(i, j + 1, k)],
                        ids[&(i, j, k + 1)],
                        ids[&(i + 1, j, k + 1)],
                        ids[&(i + 1, j + 1, k + 1)],
                        ids[&(i, j + 1, k + 1)],
                    ],
                )
                .unwrap();
            }
        }
    }
    m
}

/// Two unit quads side by side on `[0,2]×[0,1]`; returns
/// `(mesh, left id, right id)`.  The shared edge joins vertices 1 and 2.
pub fn two_quads() -> (NCMesh, u32, u32) {
    let mut m = NCMesh::new(2);
    let v: Vec<u32> = [
        [0.0, 0.0],
        [1.0, 0.0],
        [1.0, 1.0],
        [0.0, 1.0],
        [2.0, 0.0],
        [2.0, 1.0],
    ]
    .iter()
    .map(|&[x, y]| m.add_vertex([x, y, 0.0]))
    .collect();
    let left = m.add_root(Geom::Quad, &[v[0], v[1], v[2], v[3]]).unwrap();
    let right = m.add_root(Geom::Quad, &[v[1], v[4], v[5], v[2]]).unwrap();
    (m, left, right)
}

/// Two quads with the right one isotropically refined: a single hanging
/// vertex at (1, 0.5) on the shared edge (1-irregular).
pub fn single_hanging_pair() -> (NCMesh, u32, u32) {
    let (mut m, left, right) = two_quads();
    m.refine(right, REF_XY).unwrap();
    (m, left, right)
}

/// Two quads; the right one split in y and its bottom child isotropically.
/// The hanging vertex c = (1, 1/2) on the shared edge is an endpoint of the
/// interior master edge (1,1/2)–(2,1/2), whose own hanging vertex
/// e = (1.5, 1/2) therefore depends on c: a 2-irregular configuration.
/// Returns `(mesh, left id)`.
pub fn indirect_pair() -> (NCMesh, u32) {
    let (mut m, left, right) = two_quads();
    let kids = m.refine(right, REF_Y).unwrap();
    m.refine(kids[0], REF_XY).unwrap();
    (m, left)
}

/// Two unit hexes side by side sharing the x = 1 plane; returns
/// `(mesh, left id, right id)`.
pub fn two_hexes() -> (NCMesh, u32, u32) {
    let mut m = NCMesh::new(3);
    let mut ids: HashMap<[u64; 3], u32> = HashMap::new();
    let mut v = |m: &mut NCMesh, p: [f64; 3]| -> u32 {
        let key = [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()];
        *ids.entry(key).or_insert_with(|| m.add_vertex(p))
    };
    let c0: Vec<u32> = Geom::Hex.ref_corners().iter().map(|&p| v(&mut m, p)).collect();
    let c1: Vec<u32> = Geom::Hex
        .ref_corners()
        .iter()
        .map(|&p| v(&mut m, [p[0] + 1.0, p[1], p[2]]))
        .collect();
    let h0 = m.add_root(Geom::Hex, &c0).unwrap();
    let h1 = m.add_root(Geom::Hex, &c1).unwrap();
    (m, h0, h1)
}

/// Deliberately non-conforming "pinwheel": four rectangles wound around a
/// center square, each master edge's hanging vertex being an endpoint of
/// the next master edge.  For p = 1 the hanging-vertex constraints form a
/// 4-cycle, so the mesh is representable but unsolvable; one uniform
/// refinement breaks the cycle.  Not reachable by refining any conforming
/// mesh — built directly from roots plus explicit hanging-vertex bindings.
pub fn pinwheel_mesh() -> NCMesh {
    let mut m = NCMesh::new(2);
    let t = 1.0 / 3.0;
    let s = 2.0 / 3.0;
    let coords: Vec<[f64; 2]> = vec![
        [0.0, 0.0], // 0
        [s, 0.0],   // 1
        [1.0, 0.0], // 2
        [0.0, t],   // 3
        [t, t],     // 4
        [s, t],     // 5
        [1.0, s],   // 6
        [s, s],     // 7
        [t, s],     // 8
        [0.0, 1.0], // 9
        [t, 1.0],   // 10
        [1.0, 1.0], // 11
    ];
    let v: Vec<u32> = coords.iter().map(|&[x, y]| m.add_vertex([x, y, 0.0])).collect();
    // Four rectangles around the center square (counterclockwise corners).
    m.add_root(Geom::Quad, &[v[0], v[1], v[5], v[3]]).unwrap(); // bottom
    m.add_root(Geom::Quad, &[v[1], v[2], v[6], v[7]]).unwrap(); // right
    m.add_root(Geom::Quad, &[v[8], v[6], v[11], v[10]]).unwrap(); // top
    m.add_root(Geom::Quad, &[v[3], v[4], v[10], v[9]]).unwrap(); // left
    m.add_root(Geom::Quad, &[v[4], v[5], v[7], v[8]]).unwrap(); // center
    // Hanging vertices: each long edge's midpoint is a corner of the next
    // rectangle around the pinwheel.
    m.register_hanging_vertex(v[4], v[3], v[5]).unwrap(); // on bottom's top edge
    m.register_hanging_vertex(v[5], v[1], v[7]).unwrap(); // on right's left edge
    m.register_hanging_vertex(v[7], v[8], v[6]).unwrap(); // on top's bottom edge
    m.register_hanging_vertex(v[8], v[4], v[10]).unwrap(); // on left's right edge
    m
}
