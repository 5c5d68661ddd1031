//! Degree-of-freedom layout for an order-p nodal H1 space on a
//! (possibly non-conforming) mesh.
//!
//! Every live entity touched by a leaf element carries nodal DOFs — vertices
//! one each, edge interiors `p-1`, quadrilateral face interiors `(p-1)²`,
//! and element interiors a geometry-dependent count.  Hanging entities get
//! DOFs like everything else; the space is "partially conforming" and the
//! constraint resolution later decides which DOFs are true.
//!
//! Global DOF order: all vertices (ascending id), then all edge blocks,
//! then all face blocks, then element interiors in DFS leaf order.
//!
//! Shared-entity DOF ordering is fixed by the entity's *stored* data, so all
//! holders agree: edge-interior nodes run from the lower-id endpoint to the
//! higher; face-interior nodes form a tensor grid in the frame of the stored
//! corner cycle (origin `corners[0]`, u towards `corners[1]`, v towards
//! `corners[3]`).  Nodes sit at Gauss-Lobatto points.

use crate::basis::{gauss_lobatto, TriBasis};
use crate::geom::Geom;
use crate::interfaces::InterfaceList;
use crate::ncmesh::NCMesh;
use std::collections::{BTreeSet, HashMap};

/// DOF enumeration for one mesh snapshot.
#[derive(Clone, Debug)]
pub struct FESpace {
    p: usize,
    dim: usize,
    mesh_version: u64,
    vertex_dof: HashMap<u32, usize>,
    edge_dof: HashMap<u32, usize>,
    face_dof: HashMap<u32, usize>,
    interior_dof: HashMap<u32, usize>,
    num_dofs: usize,
    /// Gauss-Lobatto nodes of the 1D order-p basis (p+1 points on [0,1]).
    nodes1d: Vec<f64>,
}

/// Interior DOF count of one element.
fn interior_count(geom: Geom, p: usize) -> usize {
    match geom {
        Geom::Quad => (p - 1) * (p - 1),
        Geom::Hex => (p - 1) * (p - 1) * (p - 1),
        Geom::Tri => (p - 1) * p.saturating_sub(2) / 2,
    }
}

impl FESpace {
    pub fn new(mesh: &NCMesh, p: usize) -> Self {
        assert!(p >= 1, "polynomial order must be at least 1");

        let mut vset: BTreeSet<u32> = BTreeSet::new();
        let mut eset: BTreeSet<u32> = BTreeSet::new();
        let mut fset: BTreeSet<u32> = BTreeSet::new();
        let leaves = mesh.dfs_leaves();
        for &leaf in &leaves {
            let el = mesh.element(leaf).expect("leaf exists");
            assert!(
                el.geom != Geom::Tri || p <= 4,
                "triangle elements support orders 1..=4"
            );
            for &c in el.corners() {
                vset.insert(c);
            }
            for e in mesh.leaf_edges(leaf) {
                eset.insert(e);
            }
            for f in mesh.leaf_faces(leaf) {
                fset.insert(f);
            }
        }

        let mut next = 0usize;
        let mut vertex_dof = HashMap::new();
        for &v in &vset {
            vertex_dof.insert(v, next);
            next += 1;
        }
        let mut edge_dof = HashMap::new();
        for &e in &eset {
            edge_dof.insert(e, next);
            next += p - 1;
        }
        let mut face_dof = HashMap::new();
        for &f in &fset {
            face_dof.insert(f, next);
            next += (p - 1) * (p - 1);
        }
        let mut interior_dof = HashMap::new();
        for &leaf in &leaves {
            interior_dof.insert(leaf, next);
            next += interior_count(mesh.element(leaf).expect("leaf").geom, p);
        }

        FESpace {
            p,
            dim: mesh.dim(),
            mesh_version: mesh.version(),
            vertex_dof,
            edge_dof,
            face_dof,
            interior_dof,
            num_dofs: next,
            nodes1d: gauss_lobatto(p + 1),
        }
    }

    pub fn num_dofs(&self) -> usize {
        self.num_dofs
    }

    pub fn order(&self) -> usize {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mesh_version(&self) -> u64 {
        self.mesh_version
    }

    /// 1D nodal parameters (Gauss-Lobatto points incl. endpoints).
    pub fn nodes1d(&self) -> &[f64] {
        &self.nodes1d
    }

    pub fn vertex_dof(&self, v: u32) -> Option<usize> {
        self.vertex_dof.get(&v).copied()
    }

    pub fn edge_dof_start(&self, e: u32) -> Option<usize> {
        self.edge_dof.get(&e).copied()
    }

    pub fn face_dof_start(&self, f: u32) -> Option<usize> {
        self.face_dof.get(&f).copied()
    }

    pub fn interior_dof_start(&self, leaf: u32) -> Option<usize> {
        self.interior_dof.get(&leaf).copied()
    }

    /// DOF of the k-th edge-interior node (k ∈ 1..p) counted from endpoint
    /// `from` towards `to`.
    fn edge_node_dof(&self, mesh: &NCMesh, from: u32, to: u32, k: usize) -> usize {
        let e = mesh.find_edge(from, to).expect("element edge must be registered");
        let (a, _b) = mesh.edge_endpoints(e);
        let start = self.edge_dof[&e];
        if from == a {
            start + k - 1
        } else {
            start + (self.p - 1) - k
        }
    }

    /// DOF of the face-interior node at grid position `(fi, fj)` of the
    /// query frame given by corner cycle `q` (origin `q[0]`, u towards
    /// `q[1]`, v towards `q[3]`); `fi, fj ∈ 1..p`.
    fn face_node_dof(&self, mesh: &NCMesh, q: [u32; 4], fi: usize, fj: usize) -> usize {
        let f = mesh.find_face(q).expect("element face must be registered");
        let stored = mesh.face_corners(f);
        const C: [(i64, i64); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];
        let coord = |v: u32| {
            C[stored.iter().position(|&s| s == v).expect("query corner belongs to face")]
        };
        let p = self.p as i64;
        let o = coord(q[0]);
        let u = coord(q[1]);
        let w = coord(q[3]);
        let (fi, fj) = (fi as i64, fj as i64);
        let su = o.0 * p + fi * (u.0 - o.0) + fj * (w.0 - o.0);
        let sv = o.1 * p + fi * (u.1 - o.1) + fj * (w.1 - o.1);
        debug_assert!((1..p).contains(&su) && (1..p).contains(&sv));
        self.face_dof[&f] + ((sv - 1) * (p - 1) + (su - 1)) as usize
    }

    /// Global DOFs of a leaf element in its local nodal order.
    ///
    /// Quads and hexes use tensor ordering (x fastest): local node
    /// `(i,j[,k])` with coordinates at the Gauss-Lobatto grid.  Triangles
    /// use the triangle basis order: corners, then edge interiors in edge
    /// order, then interior nodes.
    pub fn element_dofs(&self, mesh: &NCMesh, leaf: u32) -> Vec<usize> {
        let el = mesh.element(leaf).expect("leaf exists");
        assert!(el.is_leaf(), "element_dofs requires a leaf");
        let corners = el.corners();
        let p = self.p;
        match el.geom {
            Geom::Tri => {
                let mut dofs = Vec::with_capacity((p + 1) * (p + 2) / 2);
                for c in corners.iter().take(3) {
                    dofs.push(self.vertex_dof[c]);
                }
                for (a, b) in [(0usize, 1usize), (1, 2), (2, 0)] {
                    for k in 1..p {
                        dofs.push(self.edge_node_dof(mesh, corners[a], corners[b], k));
                    }
                }
                let start = self.interior_dof[&leaf];
                for m in 0..interior_count(Geom::Tri, p) {
                    dofs.push(start + m);
                }
                dofs
            }
            Geom::Quad | Geom::Hex => {
                let dim = el.geom.dim();
                let n1 = p + 1;
                let total = n1.pow(dim as u32);
                let mut dofs = Vec::with_capacity(total);
                let kmax = if dim == 3 { p } else { 0 };
                for k in 0..=kmax {
                    for j in 0..=p {
                        for i in 0..=p {
                            dofs.push(self.tensor_node_dof(mesh, leaf, corners, [i, j, k]));
                        }
                    }
                }
                dofs
            }
        }
    }

    /// Local corner id of the tensor corner with axis bits `(bx, by, bz)`.
    fn corner_id(bits: [bool; 3]) -> usize {
        let quad = match (bits[0], bits[1]) {
            (false, false) => 0,
            (true, false) => 1,
            (true, true) => 2,
            (false, true) => 3,
        };
        quad + if bits[2] { 4 } else { 0 }
    }

    /// Global DOF of tensor node `n ∈ [0,p]^dim` of a quad/hex leaf.
    fn tensor_node_dof(&self, mesh: &NCMesh, leaf: u32, corners: &[u32], n: [usize; 3]) -> usize {
        let p = self.p;
        let dim = if corners.len() == 8 { 3 } else { 2 };
        let free: Vec<usize> = (0..dim).filter(|&d| n[d] > 0 && n[d] < p).collect();
        // Corner lookup for an axis-bit assignment (free axes overridable).
        let corner_at = |over: &[(usize, bool)]| -> u32 {
            let mut bits = [false; 3];
            for d in 0..dim {
                bits[d] = n[d] == p;
            }
            for &(d, b) in over {
                bits[d] = b;
            }
            corners[Self::corner_id(bits)]
        };
        match free.len() {
            0 => self.vertex_dof[&corner_at(&[])],
            1 => {
                let d = free[0];
                let a = corner_at(&[(d, false)]);
                let b = corner_at(&[(d, true)]);
                self.edge_node_dof(mesh, a, b, n[d])
            }
            2 => {
                if dim == 2 {
                    let start = self.interior_dof[&leaf];
                    start + (n[1] - 1) * (p - 1) + (n[0] - 1)
                } else {
                    let (d1, d2) = (free[0], free[1]);
                    let q = [
                        corner_at(&[(d1, false), (d2, false)]),
                        corner_at(&[(d1, true), (d2, false)]),
                        corner_at(&[(d1, true), (d2, true)]),
                        corner_at(&[(d1, false), (d2, true)]),
                    ];
                    self.face_node_dof(mesh, q, n[d1], n[d2])
                }
            }
            _ => {
                let start = self.interior_dof[&leaf];
                start + (((n[2] - 1) * (p - 1)) + (n[1] - 1)) * (p - 1) + (n[0] - 1)
            }
        }
    }

    /// Closure DOFs of an edge: `p+1` DOFs ordered from the lower-id
    /// endpoint, with their 1D nodal parameters.
    pub fn edge_closure(&self, mesh: &NCMesh, e: u32) -> (Vec<usize>, Vec<f64>) {
        let (a, b) = mesh.edge_endpoints(e);
        let start = self.edge_dof[&e];
        let mut dofs = Vec::with_capacity(self.p + 1);
        dofs.push(self.vertex_dof[&a]);
        for k in 0..self.p - 1 {
            dofs.push(start + k);
        }
        dofs.push(self.vertex_dof[&b]);
        (dofs, self.nodes1d.clone())
    }

    /// Closure DOFs of a quadrilateral face: `(p+1)²` DOFs in tensor order
    /// of the stored corner frame, with their `(u,v)` nodal parameters.
    pub fn face_closure(&self, mesh: &NCMesh, f: u32) -> (Vec<usize>, Vec<[f64; 2]>) {
        let s = mesh.face_corners(f);
        let p = self.p;
        let mut dofs = Vec::with_capacity((p + 1) * (p + 1));
        let mut params = Vec::with_capacity((p + 1) * (p + 1));
        for j in 0..=p {
            for i in 0..=p {
                let at_i = i == 0 || i == p;
                let at_j = j == 0 || j == p;
                let dof = match (at_i, at_j) {
                    (true, true) => {
                        let c = match (i == p, j == p) {
                            (false, false) => s[0],
                            (true, false) => s[1],
                            (true, true) => s[2],
                            (false, true) => s[3],
                        };
                        self.vertex_dof[&c]
                    }
                    (false, true) => {
                        if j == 0 {
                            self.edge_node_dof(mesh, s[0], s[1], i)
                        } else {
                            self.edge_node_dof(mesh, s[3], s[2], i)
                        }
                    }
                    (true, false) => {
                        if i == 0 {
                            self.edge_node_dof(mesh, s[0], s[3], j)
                        } else {
                            self.edge_node_dof(mesh, s[1], s[2], j)
                        }
                    }
                    (false, false) => {
                        self.face_dof[&f] + (j - 1) * (p - 1) + (i - 1)
                    }
                };
                dofs.push(dof);
                params.push([self.nodes1d[i], self.nodes1d[j]]);
            }
        }
        (dofs, params)
    }

    /// Physical coordinates of every DOF's node.
    ///
    /// Entity nodes are placed by the multilinear map of the entity's own
    /// corners (exact for the refinement-generated straight-sided elements);
    /// interior nodes by the element's multilinear corner map.
    pub fn dof_positions(&self, mesh: &NCMesh) -> Vec<[f64; 3]> {
        let p = self.p;
        let gl = &self.nodes1d;
        let mut pos = vec![[0.0f64; 3]; self.num_dofs];
        for (&v, &d) in &self.vertex_dof {
            pos[d] = mesh.vertex_pos(v);
        }
        for (&e, &start) in &self.edge_dof {
            let (a, b) = mesh.edge_endpoints(e);
            let (pa, pb) = (mesh.vertex_pos(a), mesh.vertex_pos(b));
            for k in 1..p {
                let t = gl[k];
                for d in 0..3 {
                    pos[start + k - 1][d] = pa[d] + t * (pb[d] - pa[d]);
                }
            }
        }
        for (&f, &start) in &self.face_dof {
            let c: Vec<[f64; 3]> =
                mesh.face_corners(f).iter().map(|&v| mesh.vertex_pos(v)).collect();
            for j in 1..p {
                for i in 1..p {
                    let (u, v) = (gl[i], gl[j]);
                    let idx = start + (j - 1) * (p - 1) + (i - 1);
                    for d in 0..3 {
                        pos[idx][d] = c[0][d] * (1.0 - u) * (1.0 - v)
                            + c[1][d] * u * (1.0 - v)
                            + c[2][d] * u * v
                            + c[3][d] * (1.0 - u) * v;
                    }
                }
            }
        }
        for (&leaf, &start) in &self.interior_dof {
            let el = mesh.element(leaf).expect("leaf exists");
            let corners: Vec<[f64; 3]> =
                el.corners().iter().map(|&v| mesh.vertex_pos(v)).collect();
            match el.geom {
                Geom::Tri => {
                    let tb = TriBasis::new(p);
                    let skip = 3 + 3 * (p - 1);
                    for (m, node) in tb.nodes.iter().skip(skip).enumerate() {
                        let (x, y) = (node[0], node[1]);
                        for d in 0..3 {
                            pos[start + m][d] = corners[0][d]
                                + x * (corners[1][d] - corners[0][d])
                                + y * (corners[2][d] - corners[0][d]);
                        }
                    }
                }
                Geom::Quad => {
                    for j in 1..p {
                        for i in 1..p {
                            let (u, v) = (gl[i], gl[j]);
                            let idx = start + (j - 1) * (p - 1) + (i - 1);
                            for d in 0..3 {
                                pos[idx][d] = corners[0][d] * (1.0 - u) * (1.0 - v)
                                    + corners[1][d] * u * (1.0 - v)
                                    + corners[2][d] * u * v
                                    + corners[3][d] * (1.0 - u) * v;
                            }
                        }
                    }
                }
                Geom::Hex => {
                    for k in 1..p {
                        for j in 1..p {
                            for i in 1..p {
                                let (u, v, w) = (gl[i], gl[j], gl[k]);
                                let idx = start
                                    + (((k - 1) * (p - 1)) + (j - 1)) * (p - 1)
                                    + (i - 1);
                                let sh = [
                                    (1.0 - u) * (1.0 - v) * (1.0 - w),
                                    u * (1.0 - v) * (1.0 - w),
                                    u * v * (1.0 - w),
                                    (1.0 - u) * v * (1.0 - w),
                                    (1.0 - u) * (1.0 - v) * w,
                                    u * (1.0 - v) * w,
                                    u * v * w,
                                    (1.0 - u) * v * w,
                                ];
                                for d in 0..3 {
                                    pos[idx][d] =
                                        (0..8).map(|c| corners[c][d] * sh[c]).sum::<f64>();
                                }
                            }
                        }
                    }
                }
            }
        }
        pos
    }

    /// All DOFs on the domain boundary (closure of boundary entities), in
    /// the partially conforming space.  Ascending, deduplicated.
    ///
    /// Note this is a hat-space set: where refinement hangs nodes on the
    /// boundary *surface* (3D), the set contains both the coarse-side master
    /// DOFs and the fine-side slave DOFs; callers imposing essential BCs
    /// keep only the true DOFs.
    pub fn boundary_dofs(&self, mesh: &NCMesh, ifc: &InterfaceList) -> Vec<usize> {
        let mut out: BTreeSet<usize> = BTreeSet::new();
        let add_edge = |out: &mut BTreeSet<usize>, e: u32| {
            let (a, b) = mesh.edge_endpoints(e);
            out.insert(self.vertex_dof[&a]);
            out.insert(self.vertex_dof[&b]);
            let start = self.edge_dof[&e];
            for k in 0..self.p - 1 {
                out.insert(start + k);
            }
        };
        for &e in &ifc.edges.boundary {
            add_edge(&mut out, e);
        }
        if self.dim == 3 {
            for &f in &ifc.faces.boundary {
                let s = mesh.face_corners(f);
                for i in 0..4 {
                    let e = mesh
                        .find_edge(s[i], s[(i + 1) % 4])
                        .expect("boundary face edge is live");
                    add_edge(&mut out, e);
                }
                let start = self.face_dof[&f];
                for k in 0..(self.p - 1) * (self.p - 1) {
                    out.insert(start + k);
                }
            }
        }
        out.into_iter().collect()
    }
}
