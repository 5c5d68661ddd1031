//! The non-conforming mesh: a forest of refinement trees over a coarse
//! (root) mesh, with hashed entity registries that let neighboring
//! elements at different refinement levels discover each other's
//! hanging sub-structure.
//!
//! Key invariants:
//!
//! * **Leaf-only reference counts.**  Only leaf elements hold references
//!   to vertices, edges and faces; refining an element first references
//!   the children's entities and then releases the parent's, so shared
//!   entities (e.g. a full edge still held by a coarser neighbor) survive
//!   exactly as long as someone needs them.
//!
//! * **Midpoint registry.**  `vertex_map` maps a sorted vertex-id pair to
//!   the vertex at its midpoint.  A face center is reachable under *both*
//!   diagonals of its four edge midpoints (and an element center under
//!   all axis pairs).  Crossing keys are discovered lazily: creating a
//!   midpoint or an edge on a segment whose endpoints are themselves
//!   midpoints checks, via the parallelogram identity
//!   `mid(mid(a1,a2), mid(b1,b2)) = mid(mid(a1,b1), mid(a2,b2))`,
//!   whether the segment is the second diagonal of an already-split
//!   face, and if so registers the existing center under it too.
//!   Each registered key holds a reference on the two key vertices, so a
//!   midpoint's "parents" cannot die (and have their ids recycled) while
//!   the midpoint is alive.
//!
//! * **Consistency.**  Any two entities are disjoint, identical, share a
//!   common sub-entity, or one contains the other.  Anisotropic
//!   refinement of hexes can violate this across a face (two neighbors
//!   splitting the shared face along different axes);
//!   [`NCMesh::ensure_consistency`] detects such crossings and repairs
//!   them by refining the offending neighbors further.

use std::collections::{HashMap, HashSet};

use crate::error::Error;
use crate::geom::{children, ChildSpec, Geom, VRef};
use crate::Result;

/// Sentinel id ("no element / no vertex").
pub const NIL: u32 = u32::MAX;

/// Slab storage with id recycling.
#[derive(Clone, Debug, Default)]
pub struct Store<T> {
    items: Vec<Option<T>>,
    free: Vec<u32>,
    len: usize,
}

impl<T> Store<T> {
    pub fn new() -> Self {
        Store { items: Vec::new(), free: Vec::new(), len: 0 }
    }

    pub fn insert(&mut self, value: T) -> u32 {
        self.len += 1;
        if let Some(id) = self.free.pop() {
            self.items[id as usize] = Some(value);
            id
        } else {
            self.items.push(Some(value));
            (self.items.len() - 1) as u32
        }
    }

    pub fn remove(&mut self, id: u32) -> T {
        let v = self.items[id as usize].take().expect("store: removing dead id");
        self.free.push(id);
        self.len -= 1;
        v
    }

    pub fn get(&self, id: u32) -> Option<&T> {
        self.items.get(id as usize).and_then(|s| s.as_ref())
    }

    pub fn get_mut(&mut self, id: u32) -> Option<&mut T> {
        self.items.get_mut(id as usize).and_then(|s| s.as_mut())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &T)> {
        self.items.iter().enumerate().filter_map(|(i, s)| s.as_ref().map(|v| (i as u32, v)))
    }
}

/// Mesh vertex.
#[derive(Clone, Debug)]
pub struct Vertex {
    pub pos: [f64; 3],
    refcount: u32,
    /// Sorted vertex-id pairs under which this vertex is registered in
    /// the midpoint map (empty for root vertices).
    keys: Vec<(u32, u32)>,
}

/// Mesh edge (sorted endpoint ids).
#[derive(Clone, Debug)]
pub struct Edge {
    pub v: (u32, u32),
    refcount: u32,
}

/// Mesh face: the original cyclic corner tuple is kept for orientation;
/// the hash key is the sorted tuple.
#[derive(Clone, Debug)]
pub struct Face {
    pub corners: [u32; 4],
    refcount: u32,
}

/// Refinement state of an element.
#[derive(Clone, Debug)]
pub enum ElemState {
    Leaf { corners: [u32; 8] },
    Refined { ref_type: u8, children: [u32; 8] },
}

/// A refinement-tree element.
#[derive(Clone, Debug)]
pub struct Element {
    pub geom: Geom,
    pub rank: u32,
    pub parent: u32,
    pub state: ElemState,
}

impl Element {
    pub fn is_leaf(&self) -> bool {
        matches!(self.state, ElemState::Leaf { .. })
    }

    /// Corner ids of a leaf (first `num_corners` entries).
    pub fn corners(&self) -> &[u32] {
        match &self.state {
            ElemState::Leaf { corners } => &corners[..self.geom.num_corners()],
            _ => panic!("corners() on refined element"),
        }
    }

    /// Live children ids of a refined element.
    pub fn child_ids(&self) -> &[u32] {
        match &self.state {
            ElemState::Refined { ref_type, children: ch } => {
                let n = children(self.geom, *ref_type).unwrap().len();
                &ch[..n]
            }
            _ => panic!("child_ids() on leaf"),
        }
    }

    pub fn ref_type(&self) -> Option<u8> {
        match &self.state {
            ElemState::Refined { ref_type, .. } => Some(*ref_type),
            _ => None,
        }
    }
}

fn skey(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

fn skey4(c: [u32; 4]) -> [u32; 4] {
    let mut s = c;
    s.sort_unstable();
    s
}

/// The non-conforming mesh.
#[derive(Clone, Debug)]
pub struct NCMesh {
    dim: usize,
    elements: Store<Element>,
    roots: Vec<u32>,
    vertices: Store<Vertex>,
    edges: Store<Edge>,
    faces: Store<Face>,
    vertex_map: HashMap<(u32, u32), u32>,
    edge_map: HashMap<(u32, u32), u32>,
    face_map: HashMap<[u32; 4], u32>,
    version: u64,
}

impl NCMesh {
    /// Empty mesh of the given spatial dimension (2 or 3).
    pub fn new(dim: usize) -> Self {
        assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
        NCMesh {
            dim,
            elements: Store::new(),
            roots: Vec::new(),
            vertices: Store::new(),
            edges: Store::new(),
            faces: Store::new(),
            vertex_map: HashMap::new(),
            edge_map: HashMap::new(),
            face_map: HashMap::new(),
            version: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Monotone counter bumped by every topology change; spaces and
    /// operators record it to detect staleness.
    pub fn version(&self) -> u64 {
        self.version
    }

    // ----- vertices and entity registries ----------------------------------

    /// Add a root-mesh vertex.
    pub fn add_vertex(&mut self, pos: [f64; 3]) -> u32 {
        self.vertices.insert(Vertex { pos, refcount: 0, keys: Vec::new() })
    }

    pub fn vertex_pos(&self, v: u32) -> [f64; 3] {
        self.vertices.get(v).expect("dead vertex").pos
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertex_ids(&self) -> Vec<u32> {
        self.vertices.iter().map(|(i, _)| i).collect()
    }

    pub fn edge_ids(&self) -> Vec<u32> {
        self.edges.iter().map(|(i, _)| i).collect()
    }

    pub fn face_ids(&self) -> Vec<u32> {
        self.faces.iter().map(|(i, _)| i).collect()
    }

    /// The vertex registered at the midpoint of `(a, b)`, if any.
    pub fn find_mid_vertex(&self, a: u32, b: u32) -> Option<u32> {
        self.vertex_map.get(&skey(a, b)).copied()
    }

    pub fn find_edge(&self, a: u32, b: u32) -> Option<u32> {
        self.edge_map.get(&skey(a, b)).copied()
    }

    pub fn find_face(&self, corners: [u32; 4]) -> Option<u32> {
        self.face_map.get(&skey4(corners)).copied()
    }

    pub fn edge_endpoints(&self, e: u32) -> (u32, u32) {
        self.edges.get(e).expect("dead edge").v
    }

    pub fn face_corners(&self, f: u32) -> [u32; 4] {
        self.faces.get(f).expect("dead face").corners
    }

    /// Number of leaf elements holding edge `e` (edges are referenced only
    /// by leaves, so the reference count *is* the incidence count).
    pub fn edge_leaf_count(&self, e: u32) -> u32 {
        self.edges.get(e).expect("dead edge").refcount
    }

    /// Number of leaf elements holding face `f`.
    pub fn face_leaf_count(&self, f: u32) -> u32 {
        self.faces.get(f).expect("dead face").refcount
    }

    fn ref_vertex(&mut self, v: u32) {
        self.vertices.get_mut(v).expect("ref of dead vertex").refcount += 1;
    }

    fn unref_vertex(&mut self, v: u32) {
        let vx = self.vertices.get_mut(v).expect("unref of dead vertex");
        vx.refcount -= 1;
        if vx.refcount == 0 {
            let keys = std::mem::take(&mut self.vertices.get_mut(v).unwrap().keys);
            self.vertices.remove(v);
            for k in keys {
                self.vertex_map.remove(&k);
                self.unref_vertex(k.0);
                self.unref_vertex(k.1);
            }
        }
    }

    /// Register (an additional) midpoint key for `v`; each key holds a
    /// reference on both key vertices.
    fn add_vertex_key(&mut self, v: u32, key: (u32, u32)) {
        if let Some(&existing) = self.vertex_map.get(&key) {
            debug_assert_eq!(existing, v, "midpoint key already bound to another vertex");
            return;
        }
        self.vertex_map.insert(key, v);
        self.vertices.get_mut(v).unwrap().keys.push(key);
        self.ref_vertex(key.0);
        self.ref_vertex(key.1);
    }

    fn key_pairs(&self, v: u32) -> Vec<(u32, u32)> {
        self.vertices.get(v).map(|vx| vx.keys.clone()).unwrap_or_default()
    }

    /// All sorted pairs `(m1, m2)` of *existing* midpoints such that
    /// `mid(m1, m2) = mid(a, b)` by the parallelogram identity — the
    /// alternative diagonals of a face for which `(a, b)` is a diagonal.
    fn crossing_keys(&self, a: u32, b: u32) -> Vec<(u32, u32)> {
        let ka = self.key_pairs(a);
        let kb = self.key_pairs(b);
        let mut out = Vec::new();
        if ka.is_empty() || kb.is_empty() {
            return out;
        }
        for &(a1, a2) in &ka {
            for &(b1, b2) in &kb {
                for (p, q) in [((a1, b1), (a2, b2)), ((a1, b2), (a2, b1))] {
                    let m1 = self.vertex_map.get(&skey(p.0, p.1)).copied();
                    let m2 = self.vertex_map.get(&skey(q.0, q.1)).copied();
                    if let (Some(m1), Some(m2)) = (m1, m2) {
                        if m1 != m2 {
                            out.push(skey(m1, m2));
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Get or create the midpoint vertex of `(a, b)`.
    fn get_or_create_mid(&mut self, a: u32, b: u32) -> u32 {
        let key = skey(a, b);
        if let Some(&v) = self.vertex_map.get(&key) {
            return v;
        }
        let crossings = self.crossing_keys(a, b);
        // The midpoint may already exist as the center of a face split
        // along the other diagonal.
        for k in &crossings {
            if let Some(&c) = self.vertex_map.get(k) {
                self.add_vertex_key(c, key);
                return c;
            }
        }
        let pa = self.vertex_pos(a);
        let pb = self.vertex_pos(b);
        let pos = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0, (pa[2] + pb[2]) / 2.0];
        let v = self.vertices.insert(Vertex { pos, refcount: 0, keys: Vec::new() });
        self.add_vertex_key(v, key);
        // Make the new vertex visible under the crossing diagonals too.
        for k in crossings {
            self.add_vertex_key(v, k);
        }
        v
    }

    /// Get or create a center vertex reachable under several midpoint
    /// keys (both diagonals of a face; all three axis pairs of a hex).
    fn get_or_create_center(&mut self, keys: &[(u32, u32)]) -> u32 {
        let keys: Vec<(u32, u32)> = keys.iter().map(|&(a, b)| skey(a, b)).collect();
        let found = keys.iter().find_map(|k| self.vertex_map.get(k).copied());
        let v = found.unwrap_or_else(|| {
            let pa = self.vertex_pos(keys[0].0);
            let pb = self.vertex_pos(keys[0].1);
            let pos = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0, (pa[2] + pb[2]) / 2.0];
            self.vertices.insert(Vertex { pos, refcount: 0, keys: Vec::new() })
        });
        for k in keys {
            if self.vertex_map.get(&k).is_none() {
                self.add_vertex_key(v, k);
            }
        }
        v
    }

    fn get_or_create_edge(&mut self, a: u32, b: u32) -> u32 {
        let key = skey(a, b);
        if let Some(&e) = self.edge_map.get(&key) {
            return e;
        }
        let e = self.edges.insert(Edge { v: key, refcount: 0 });
        self.edge_map.insert(key, e);
        // The new edge may be the second diagonal of a face whose center
        // already exists: register the center as this edge's midpoint so
        // midpoint descent along the edge can find it.
        let crossings = self.crossing_keys(a, b);
        for k in crossings {
            if let Some(&c) = self.vertex_map.get(&k) {
                if self.vertex_map.get(&key).is_none() {
                    self.add_vertex_key(c, key);
                }
            }
        }
        e
    }

    fn get_or_create_face(&mut self, corners: [u32; 4]) -> u32 {
        let key = skey4(corners);
        if let Some(&f) = self.face_map.get(&key) {
            return f;
        }
        let f = self.faces.insert(Face { corners, refcount: 0 });
        self.face_map.insert(key, f);
        f
    }

    fn ref_edge(&mut self, e: u32) {
        self.edges.get_mut(e).expect("ref of dead edge").refcount += 1;
    }

    fn unref_edge(&mut self, e: u32) {
        let ed = self.edges.get_mut(e).expect("unref of dead edge");
        ed.refcount -= 1;
        if ed.refcount == 0 {
            let key = ed.v;
            self.edge_map.remove(&key);
            self.edges.remove(e);
        }
    }

    fn ref_face(&mut self, f: u32) {
        self.faces.get_mut(f).expect("ref of dead face").refcount += 1;
    }

    fn unref_face(&mut self, f: u32) {
        let fc = self.faces.get_mut(f).expect("unref of dead face");
        fc.refcount -= 1;
        if fc.refcount == 0 {
            let key = skey4(fc.corners);
            self.face_map.remove(&key);
            self.faces.remove(f);
        }
    }

    // ----- elements ---------------------------------------------------------

    pub fn roots(&self) -> &[u32] {
        &self.roots
    }

    pub fn element(&self, id: u32) -> Option<&Element> {
        self.elements.get(id)
    }

    fn elem(&self, id: u32) -> Result<&Element> {
        self.elements.get(id).ok_or(Error::BadElement(id))
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn set_rank(&mut self, id: u32, rank: u32) {
        self.elements.get_mut(id).expect("dead element").rank = rank;
    }

    /// Leaf element ids in ascending id order.
    pub fn leaves(&self) -> Vec<u32> {
        self.elements.iter().filter(|(_, e)| e.is_leaf()).map(|(i, _)| i).collect()
    }

    pub fn num_leaves(&self) -> usize {
        self.elements.iter().filter(|(_, e)| e.is_leaf()).count()
    }

    /// Leaves in depth-first pre-order over the refinement forest (the
    /// canonical tree order used by space-filling-curve enumeration and
    /// tree serialization).
    pub fn dfs_leaves(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack: Vec<u32> = self.roots.iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            let e = self.elements.get(id).expect("dead element in tree");
            match &e.state {
                ElemState::Leaf { .. } => out.push(id),
                ElemState::Refined { .. } => {
                    for &c in e.child_ids().iter().rev() {
                        stack.push(c);
                    }
                }
            }
        }
        out
    }

    /// Root ordinal and child-index path of an element (an intrinsic
    /// address, stable across mesh replicas built from the same roots).
    pub fn element_address(&self, mut id: u32) -> (u32, Vec<u8>) {
        let mut path = Vec::new();
        loop {
            let e = self.elements.get(id).expect("dead element");
            if e.parent == NIL {
                let ordinal = self
                    .roots
                    .iter()
                    .position(|&r| r == id)
                    .expect("element not reachable from roots") as u32;
                path.reverse();
                return (ordinal, path);
            }
            let p = self.elements.get(e.parent).expect("dead parent");
            let k = p.child_ids().iter().position(|&c| c == id).expect("broken child link");
            path.push(k as u8);
            id = e.parent;
        }
    }

    /// Resolve an [`element_address`](Self::element_address).
    pub fn resolve_address(&self, root_ordinal: u32, path: &[u8]) -> Option<u32> {
        let mut id = *self.roots.get(root_ordinal as usize)?;
        for &k in path {
            let e = self.elements.get(id)?;
            match &e.state {
                ElemState::Leaf { .. } => return None,
                ElemState::Refined { .. } => {
                    id = *e.child_ids().get(k as usize)?;
                }
            }
        }
        Some(id)
    }

    /// Refinement depth of an element (roots are level 0).
    pub fn element_level(&self, mut id: u32) -> usize {
        let mut l = 0;
        while let Some(e) = self.elements.get(id) {
            if e.parent == NIL {
                break;
            }
            id = e.parent;
            l += 1;
        }
        l
    }

    /// Corner vertex ids of any tree element; for refined elements the
    /// corners are recovered from the corner-associated children.
    pub fn element_corners(&self, id: u32) -> Vec<u32> {
        let e = self.elements.get(id).expect("dead element");
        match &e.state {
            ElemState::Leaf { corners } => corners[..e.geom.num_corners()].to_vec(),
            ElemState::Refined { ref_type, children: ch } => {
                let table = children(e.geom, *ref_type).unwrap();
                (0..e.geom.num_corners())
                    .map(|i| {
                        let k = covering_child(table, i as u8);
                        self.element_corners(ch[k])[i]
                    })
                    .collect()
            }
        }
    }

    /// Add a root element over existing vertices.
    pub fn add_root(&mut self, geom: Geom, corners: &[u32]) -> Result<u32> {
        if geom.dim() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "{} element in a {}D mesh",
                geom.name(),
                self.dim
            )));
        }
        if corners.len() != geom.num_corners() {
            return Err(Error::DimensionMismatch(format!(
                "{} needs {} corners, got {}",
                geom.name(),
                geom.num_corners(),
                corners.len()
            )));
        }
        for &c in corners {
            if self.vertices.get(c).is_none() {
                return Err(Error::DimensionMismatch(format!("corner vertex {c} is not live")));
            }
        }
        let mut cs = [NIL; 8];
        cs[..corners.len()].copy_from_slice(corners);
        let id = self.elements.insert(Element {
            geom,
            rank: 0,
            parent: NIL,
            state: ElemState::Leaf { corners: cs },
        });
        self.ref_element_entities(id);
        self.roots.push(id);
        self.version += 1;
        Ok(id)
    }

    /// Reference all entities held by a leaf (corners, edges, faces),
    /// creating edges/faces as needed.
    fn ref_element_entities(&mut self, id: u32) {
        let e = self.elements.get(id).expect("dead element");
        let geom = e.geom;
        let corners: Vec<u32> = e.corners().to_vec();
        for &c in &corners {
            self.ref_vertex(c);
        }
        for &(a, b) in geom.edges() {
            let eid = self.get_or_create_edge(corners[a as usize], corners[b as usize]);
            self.ref_edge(eid);
        }
        if self.dim == 3 {
            for f in geom.faces() {
                let t = [
                    corners[f[0] as usize],
                    corners[f[1] as usize],
                    corners[f[2] as usize],
                    corners[f[3] as usize],
                ];
                let fid = self.get_or_create_face(t);
                self.ref_face(fid);
            }
        }
    }

    fn unref_element_entities(&mut self, id: u32) {
        let e = self.elements.get(id).expect("dead element");
        let geom = e.geom;
        let corners: Vec<u32> = e.corners().to_vec();
        for &(a, b) in geom.edges() {
            let eid = self
                .find_edge(corners[a as usize], corners[b as usize])
                .expect("leaf edge missing");
            self.unref_edge(eid);
        }
        if self.dim == 3 {
            for f in geom.faces() {
                let t = [
                    corners[f[0] as usize],
                    corners[f[1] as usize],
                    corners[f[2] as usize],
                    corners[f[3] as usize],
                ];
                let fid = self.find_face(t).expect("leaf face missing");
                self.unref_face(fid);
            }
        }
        for &c in &corners {
            self.unref_vertex(c);
        }
    }

    /// Refine a leaf element.  Returns the new children (in slot order).
    pub fn refine(&mut self, id: u32, ref_type: u8) -> Result<Vec<u32>> {
        let e = self.elem(id)?;
        let geom = e.geom;
        let rank = e.rank;
        if !e.is_leaf() {
            return Err(Error::NotLeaf(id));
        }
        let table = children(geom, ref_type)
            .ok_or(Error::InvalidRefType { geom: geom.name(), ref_type })?;
        let corners: Vec<u32> = e.corners().to_vec();

        // Resolve child corner specs: plain corners first, then edge
        // midpoints, then face centers, then the element center, so each
        // center creation sees its constituent midpoints.
        let mut resolved: Vec<[u32; 8]> = vec![[NIL; 8]; table.len()];
        for (ci, spec) in table.iter().enumerate() {
            for (k, &r) in spec.corners.iter().enumerate() {
                if let VRef::C(i) = r {
                    resolved[ci][k] = corners[i as usize];
                }
            }
        }
        for (ci, spec) in table.iter().enumerate() {
            for (k, &r) in spec.corners.iter().enumerate() {
                if let VRef::E(a, b) = r {
                    resolved[ci][k] =
                        self.get_or_create_mid(corners[a as usize], corners[b as usize]);
                }
            }
        }
        for (ci, spec) in table.iter().enumerate() {
            for (k, &r) in spec.corners.iter().enumerate() {
                if let VRef::F(a, b, c, d) = r {
                    let t = [
                        corners[a as usize],
                        corners[b as usize],
                        corners[c as usize],
                        corners[d as usize],
                    ];
                    resolved[ci][k] = self.face_center(t);
                }
            }
        }
        for (ci, spec) in table.iter().enumerate() {
            for (k, &r) in spec.corners.iter().enumerate() {
                if r == VRef::X {
                    resolved[ci][k] = match geom {
                        Geom::Quad => {
                            self.face_center([corners[0], corners[1], corners[2], corners[3]])
                        }
                        Geom::Hex => {
                            let fc: Vec<u32> = geom
                                .faces()
                                .iter()
                                .map(|f| {
                                    self.face_center([
                                        corners[f[0] as usize],
                                        corners[f[1] as usize],
                                        corners[f[2] as usize],
                                        corners[f[3] as usize],
                                    ])
                                })
                                .collect();
                            // face order: bottom, front, right, back,
                            // left, top → axis pairs (bottom, top),
                            // (front, back), (left, right)
                            self.get_or_create_center(&[
                                (fc[0], fc[5]),
                                (fc[1], fc[3]),
                                (fc[4], fc[2]),
                            ])
                        }
                        Geom::Tri => unreachable!("triangles have no center vertex"),
                    };
                }
            }
        }

        // Create and reference children, then release the parent leaf.
        let mut child_ids = Vec::with_capacity(table.len());
        for r in &resolved {
            let cid = self.elements.insert(Element {
                geom,
                rank,
                parent: id,
                state: ElemState::Leaf { corners: *r },
            });
            self.ref_element_entities(cid);
            child_ids.push(cid);
        }
        self.unref_element_entities(id);
        let mut ch = [NIL; 8];
        ch[..child_ids.len()].copy_from_slice(&child_ids);
        self.elements.get_mut(id).unwrap().state =
            ElemState::Refined { ref_type, children: ch };
        self.version += 1;
        Ok(child_ids)
    }

    /// Center vertex of a quadrilateral with the given corner ids,
    /// creating edge midpoints as needed and registering the center
    /// under both diagonals.
    fn face_center(&mut self, t: [u32; 4]) -> u32 {
        let m1 = self.get_or_create_mid(t[0], t[1]);
        let m2 = self.get_or_create_mid(t[1], t[2]);
        let m3 = self.get_or_create_mid(t[2], t[3]);
        let m4 = self.get_or_create_mid(t[3], t[0]);
        self.get_or_create_center(&[(m1, m3), (m2, m4)])
    }

    /// Undo one refinement: all children must be leaves.
    pub fn coarsen(&mut self, id: u32) -> Result<()> {
        let e = self.elem(id)?;
        let geom = e.geom;
        let (ref_type, child_ids): (u8, Vec<u32>) = match &e.state {
            ElemState::Refined { ref_type, .. } => (*ref_type, e.child_ids().to_vec()),
            _ => return Err(Error::NotCoarsenable(id, "element is not refined")),
        };
        for &c in &child_ids {
            if !self.elem(c)?.is_leaf() {
                return Err(Error::NotCoarsenable(id, "a child is further refined"));
            }
        }
        // Recover parent corners from the corner-associated children.
        let table = children(geom, ref_type).unwrap();
        let mut corners = [NIL; 8];
        for i in 0..geom.num_corners() {
            let k = covering_child(table, i as u8);
            corners[i] = self.elem(child_ids[k])?.corners()[i];
        }
        self.elements.get_mut(id).unwrap().state = ElemState::Leaf { corners };
        self.ref_element_entities(id);
        for &c in &child_ids {
            self.unref_element_entities(c);
            self.elements.remove(c);
        }
        self.version += 1;
        Ok(())
    }

    /// Register an existing vertex as the midpoint of `(a, b)`.
    ///
    /// Needed when a *root* mesh is deliberately non-conforming (a root
    /// corner hangs on a neighboring root's edge): such midpoints cannot
    /// be discovered by refinement hashing and must be declared.
    pub fn register_hanging_vertex(&mut self, mid: u32, a: u32, b: u32) -> Result<()> {
        for v in [mid, a, b] {
            if self.vertices.get(v).is_none() {
                return Err(Error::DimensionMismatch(format!("vertex {v} is not live")));
            }
        }
        let key = skey(a, b);
        if let Some(&existing) = self.vertex_map.get(&key) {
            if existing != mid {
                return Err(Error::InconsistentMesh(format!(
                    "midpoint of ({a},{b}) already bound to vertex {existing}"
                )));
            }
            return Ok(());
        }
        self.add_vertex_key(mid, key);
        self.version += 1;
        Ok(())
    }

    // ----- leaf entity enumeration ------------------------------------------

    /// Edge entity ids held by a leaf, in `geom.edges()` order.
    pub fn leaf_edges(&self, id: u32) -> Vec<u32> {
        let e = self.elements.get(id).expect("dead element");
        let c = e.corners();
        e.geom
            .edges()
            .iter()
            .map(|&(a, b)| {
                self.find_edge(c[a as usize], c[b as usize]).expect("leaf edge missing")
            })
            .collect()
    }

    /// Face entity ids held by a leaf, in `geom.faces()` order (3D).
    pub fn leaf_faces(&self, id: u32) -> Vec<u32> {
        let e = self.elements.get(id).expect("dead element");
        let c = e.corners();
        e.geom
            .faces()
            .iter()
            .map(|f| {
                self.find_face([
                    c[f[0] as usize],
                    c[f[1] as usize],
                    c[f[2] as usize],
                    c[f[3] as usize],
                ])
                .expect("leaf face missing")
            })
            .collect()
    }

    /// All vertices on the closed boundary of a leaf: its corners plus
    /// every hanging vertex in the interior of its edges (and faces, in
    /// 3D).  Two leaves are neighbors iff their closures intersect.
    pub fn closure_vertices(&self, id: u32) -> Vec<u32> {
        let e = self.elements.get(id).expect("dead element");
        let c = e.corners();
        let mut out: Vec<u32> = c.to_vec();
        for &(a, b) in e.geom.edges() {
            self.collect_segment_interior(c[a as usize], c[b as usize], &mut out);
        }
        if self.dim == 3 {
            for f in e.geom.faces() {
                self.collect_face_interior(
                    [
                        c[f[0] as usize],
                        c[f[1] as usize],
                        c[f[2] as usize],
                        c[f[3] as usize],
                    ],
                    &mut out,
                );
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_segment_interior(&self, a: u32, b: u32, out: &mut Vec<u32>) {
        if let Some(m) = self.find_mid_vertex(a, b) {
            out.push(m);
            self.collect_segment_interior(a, m, out);
            self.collect_segment_interior(m, b, out);
        }
    }

    fn collect_face_interior(&self, t: [u32; 4], out: &mut Vec<u32>) {
        let [a, b, c, d] = t;
        let m_ab = self.find_mid_vertex(a, b);
        let m_bc = self.find_mid_vertex(b, c);
        let m_cd = self.find_mid_vertex(c, d);
        let m_da = self.find_mid_vertex(d, a);
        let center = match (m_ab, m_cd) {
            (Some(x), Some(y)) => self.find_mid_vertex(x, y),
            _ => None,
        }
        .or(match (m_bc, m_da) {
            (Some(x), Some(y)) => self.find_mid_vertex(x, y),
            _ => None,
        });
        if let Some(ctr) = center {
            out.push(ctr);
            if let (Some(x), Some(y)) = (m_ab, m_cd) {
                self.collect_segment_interior(x, ctr, out);
                self.collect_segment_interior(ctr, y, out);
            }
            if let (Some(x), Some(y)) = (m_bc, m_da) {
                self.collect_segment_interior(x, ctr, out);
                self.collect_segment_interior(ctr, y, out);
            }
            if let (Some(vx), Some(vy), Some(hx), Some(hy)) = (m_ab, m_cd, m_bc, m_da) {
                self.collect_face_interior([a, vx, ctr, hy], out);
                self.collect_face_interior([vx, b, hx, ctr], out);
                self.collect_face_interior([ctr, hx, c, vy], out);
                self.collect_face_interior([hy, ctr, vy, d], out);
            }
        } else if let (Some(x), Some(y)) = (m_ab, m_cd) {
            if self.find_edge(x, y).is_some() {
                self.collect_segment_interior(x, y, out);
                self.collect_face_interior([a, x, y, d], out);
                self.collect_face_interior([x, b, c, y], out);
            }
        } else if let (Some(x), Some(y)) = (m_bc, m_da) {
            if self.find_edge(x, y).is_some() {
                self.collect_segment_interior(x, y, out);
                self.collect_face_interior([a, b, x, y], out);
                self.collect_face_interior([y, x, c, d], out);
            }
        }
    }

    /// Leaves adjacent (sharing at least one closure vertex) to a given
    /// leaf set; the result includes the input set and is sorted.  This
    /// is the "expand by one neighbor layer" operation for ghost layers.
    pub fn expand_neighbors(&self, set: &[u32]) -> Vec<u32> {
        let mut incident: HashMap<u32, Vec<u32>> = HashMap::new();
        for &l in &self.leaves() {
            for v in self.closure_vertices(l) {
                incident.entry(v).or_default().push(l);
            }
        }
        let mut seen: HashSet<u32> = HashSet::new();
        for &l in set {
            for v in self.closure_vertices(l) {
                if let Some(ls) = incident.get(&v) {
                    seen.extend(ls.iter().copied());
                }
            }
        }
        let mut out: Vec<u32> = seen.into_iter().collect();
        out.sort_unstable();
        out
    }

    // ----- consistency ------------------------------------------------------

    /// Scan all face regions split by refined hexes for crossing splits.
    /// Returns the conflicted regions (empty = nesting holds).
    fn find_face_conflicts(&self) -> Vec<[u32; 4]> {
        let mut conflicts = Vec::new();
        if self.dim != 3 {
            return conflicts;
        }
        let mut seen: HashSet<[u32; 4]> = HashSet::new();
        for (id, e) in self.elements.iter() {
            let rt = match &e.state {
                ElemState::Refined { ref_type, .. } => *ref_type,
                _ => continue,
            };
            if e.geom != Geom::Hex {
                continue;
            }
            let corners = self.element_corners(id);
            for f in e.geom.faces() {
                let normal_axis = face_normal_axis(*f);
                if rt & !(1 << normal_axis) & 0b111 == 0 {
                    continue; // this refinement does not split the face
                }
                let t = [
                    corners[f[0] as usize],
                    corners[f[1] as usize],
                    corners[f[2] as usize],
                    corners[f[3] as usize],
                ];
                if seen.insert(skey4(t)) {
                    self.check_face_region(t, &mut conflicts);
                }
            }
        }
        conflicts
    }

    fn check_face_region(&self, t: [u32; 4], conflicts: &mut Vec<[u32; 4]>) {
        let [a, b, c, d] = t;
        if self.find_face(t).is_some() {
            // One side still holds the whole region as a single face; all
            // structure below belongs to the other side and is nested.
            return;
        }
        let v_mids = match (self.find_mid_vertex(a, b), self.find_mid_vertex(c, d)) {
            (Some(x), Some(y)) => Some((x, y)),
            _ => None,
        };
        let h_mids = match (self.find_mid_vertex(b, c), self.find_mid_vertex(d, a)) {
            (Some(x), Some(y)) => Some((x, y)),
            _ => None,
        };
        let center = v_mids
            .and_then(|(x, y)| self.find_mid_vertex(x, y))
            .or_else(|| h_mids.and_then(|(x, y)| self.find_mid_vertex(x, y)));

        let v_half_exists = v_mids.is_some_and(|(x, y)| {
            self.find_face([a, x, y, d]).is_some() || self.find_face([x, b, c, y]).is_some()
        });
        let h_half_exists = h_mids.is_some_and(|(x, y)| {
            self.find_face([a, b, x, y]).is_some() || self.find_face([y, x, c, d]).is_some()
        });
        let v_evidence =
            v_half_exists || v_mids.is_some_and(|(x, y)| self.find_edge(x, y).is_some());
        let h_evidence =
            h_half_exists || h_mids.is_some_and(|(x, y)| self.find_edge(x, y).is_some());

        if v_half_exists && h_half_exists {
            // two whole half-faces cross each other
            conflicts.push(t);
            return;
        }
        if v_evidence && h_evidence && center.is_none() {
            // crossing split lines with no vertex at the intersection
            conflicts.push(t);
            return;
        }
        if let Some(ctr) = center {
            match (v_mids, h_mids) {
                (Some((vx, vy)), Some((hx, hy))) => {
                    self.check_face_region([a, vx, ctr, hy], conflicts);
                    self.check_face_region([vx, b, hx, ctr], conflicts);
                    self.check_face_region([ctr, hx, c, vy], conflicts);
                    self.check_face_region([hy, ctr, vy, d], conflicts);
                }
                (Some((vx, vy)), None) => {
                    self.check_face_region([a, vx, vy, d], conflicts);
                    self.check_face_region([vx, b, c, vy], conflicts);
                }
                (None, Some((hx, hy))) => {
                    self.check_face_region([a, b, hx, hy], conflicts);
                    self.check_face_region([hy, hx, c, d], conflicts);
                }
                (None, None) => {}
            }
        } else if v_evidence {
            let (x, y) = v_mids.unwrap();
            self.check_face_region([a, x, y, d], conflicts);
            self.check_face_region([x, b, c, y], conflicts);
        } else if h_evidence {
            let (x, y) = h_mids.unwrap();
            self.check_face_region([a, b, x, y], conflicts);
            self.check_face_region([y, x, c, d], conflicts);
        }
    }

    /// Verify the nesting property; `Err(InconsistentMesh)` if violated.
    pub fn check_consistency(&self) -> Result<()> {
        let conflicts = self.find_face_conflicts();
        if conflicts.is_empty() {
            Ok(())
        } else {
            Err(Error::InconsistentMesh(format!(
                "{} face region(s) have crossing splits (first: {:?})",
                conflicts.len(),
                conflicts[0]
            )))
        }
    }

    /// Detect and repair crossing face splits by refining the elements
    /// that hold an offending half-face (or a crossing split-line edge)
    /// along the complementary axis.  Returns the number of repair
    /// passes performed.
    pub fn ensure_consistency(&mut self) -> Result<usize> {
        const MAX_PASSES: usize = 10;
        for pass in 0..=MAX_PASSES {
            let conflicts = self.find_face_conflicts();
            if conflicts.is_empty() {
                return Ok(pass);
            }
            if pass == MAX_PASSES {
                break;
            }
            // leaf holders of every live face / edge
            let mut face_holder: HashMap<u32, Vec<u32>> = HashMap::new();
            let mut edge_holder: HashMap<u32, Vec<u32>> = HashMap::new();
            for (id, e) in self.elements.iter() {
                if e.is_leaf() && e.geom == Geom::Hex {
                    for f in self.leaf_faces(id) {
                        face_holder.entry(f).or_default().push(id);
                    }
                    for eid in self.leaf_edges(id) {
                        edge_holder.entry(eid).or_default().push(id);
                    }
                }
            }
            let mut refinements: Vec<(u32, u8)> = Vec::new();
            for t in &conflicts {
                let [a, b, c, d] = *t;
                let v_mids = (self.find_mid_vertex(a, b), self.find_mid_vertex(c, d));
                let h_mids = (self.find_mid_vertex(b, c), self.find_mid_vertex(d, a));
                // Prefer splitting a whole half-face along the other axis
                // (the pair after each tuple is separated by that split).
                let mut halves: Vec<([u32; 4], u32, u32)> = Vec::new();
                if let (Some(x), Some(y)) = v_mids {
                    halves.push(([a, x, y, d], a, d));
                    halves.push(([x, b, c, y], b, c));
                }
                if let (Some(x), Some(y)) = h_mids {
                    halves.push(([a, b, x, y], a, b));
                    halves.push(([y, x, c, d], d, c));
                }
                let mut matched = false;
                for (half, p, q) in halves {
                    if let Some(fid) = self.find_face(half) {
                        if let Some(ls) = face_holder.get(&fid) {
                            for &l in ls {
                                if let Some(axis) = self.corner_separation_axis(l, p, q) {
                                    refinements.push((l, 1 << axis));
                                    matched = true;
                                }
                            }
                        }
                    }
                }
                if !matched {
                    // Both crossing lines exist only as edges (their half
                    // faces are refined away): split the holders of each
                    // line along the line's own direction, creating the
                    // missing intersection vertex.
                    for (x, y) in [v_mids, h_mids] {
                        if let (Some(x), Some(y)) = (x, y) {
                            if let Some(eid) = self.find_edge(x, y) {
                                if let Some(ls) = edge_holder.get(&eid) {
                                    for &l in ls {
                                        if let Some(axis) =
                                            self.corner_separation_axis(l, x, y)
                                        {
                                            refinements.push((l, 1 << axis));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            refinements.sort_unstable();
            refinements.dedup();
            let mut progressed = false;
            for (l, rt) in refinements {
                if self.elements.get(l).map(|e| e.is_leaf()) == Some(true) {
                    self.refine(l, rt)?;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        Err(Error::ConsistencyLimitExceeded(MAX_PASSES))
    }

    /// Reference axis along which two corner vertices of a leaf differ
    /// (`None` unless both are corners differing on exactly one axis).
    fn corner_separation_axis(&self, leaf: u32, p: u32, q: u32) -> Option<usize> {
        let e = self.elements.get(leaf)?;
        let cs = e.corners();
        let ip = cs.iter().position(|&v| v == p)?;
        let iq = cs.iter().position(|&v| v == q)?;
        let rp = e.geom.ref_corners()[ip];
        let rq = e.geom.ref_corners()[iq];
        let mut axis = None;
        for dimn in 0..3 {
            if rp[dimn] != rq[dimn] {
                if axis.is_some() {
                    return None;
                }
                axis = Some(dimn);
            }
        }
        axis
    }

    // ----- validation -------------------------------------------------------

    /// Check all internal invariants (reference counts, registry
    /// bijections, tree structure).  Intended for tests.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InconsistentMesh(msg));
        // tree structure
        let mut reachable = HashSet::new();
        let mut stack: Vec<u32> = self.roots.clone();
        while let Some(id) = stack.pop() {
            if !reachable.insert(id) {
                return fail(format!("element {id} reachable twice"));
            }
            let e = match self.elements.get(id) {
                Some(e) => e,
                None => return fail(format!("dead element {id} in tree")),
            };
            if let ElemState::Refined { .. } = e.state {
                for &c in e.child_ids() {
                    match self.elements.get(c) {
                        Some(ce) if ce.parent == id => stack.push(c),
                        Some(_) => return fail(format!("child {c} has wrong parent")),
                        None => return fail(format!("dead child {c}")),
                    }
                }
            }
        }
        if reachable.len() != self.elements.len() {
            return fail("orphan elements exist".into());
        }
        // expected refcounts from leaves
        let mut vref: HashMap<u32, u32> = HashMap::new();
        let mut eref: HashMap<u32, u32> = HashMap::new();
        let mut fref: HashMap<u32, u32> = HashMap::new();
        for (id, e) in self.elements.iter() {
            if !e.is_leaf() {
                continue;
            }
            for &c in e.corners() {
                *vref.entry(c).or_default() += 1;
            }
            for eid in self.leaf_edges(id) {
                *eref.entry(eid).or_default() += 1;
            }
            if self.dim == 3 {
                for fid in self.leaf_faces(id) {
                    *fref.entry(fid).or_default() += 1;
                }
            }
        }
        // registered midpoint keys also reference their key vertices
        for (_, v) in self.vertices.iter() {
            for k in &v.keys {
                *vref.entry(k.0).or_default() += 1;
                *vref.entry(k.1).or_default() += 1;
            }
        }
        for (id, v) in self.vertices.iter() {
            let want = vref.get(&id).copied().unwrap_or(0);
            if v.refcount != want {
                return fail(format!("vertex {id}: refcount {} != expected {want}", v.refcount));
            }
            if want == 0 {
                return fail(format!("vertex {id} has zero references but is live"));
            }
            for k in &v.keys {
                if self.vertex_map.get(k) != Some(&id) {
                    return fail(format!("vertex {id}: key {k:?} not in registry"));
                }
            }
        }
        let key_total: usize = self.vertices.iter().map(|(_, v)| v.keys.len()).sum();
        if self.vertex_map.len() != key_total {
            return fail("midpoint registry has stale entries".into());
        }
        for (id, e) in self.edges.iter() {
            let want = eref.get(&id).copied().unwrap_or(0);
            if e.refcount != want {
                return fail(format!("edge {id}: refcount {} != expected {want}", e.refcount));
            }
            if self.edge_map.get(&e.v) != Some(&id) {
                return fail(format!("edge {id} not in registry"));
            }
        }
        if self.edge_map.len() != self.edges.len() {
            return fail("edge registry has stale entries".into());
        }
        for (id, f) in self.faces.iter() {
            let want = fref.get(&id).copied().unwrap_or(0);
            if f.refcount != want {
                return fail(format!("face {id}: refcount {} != expected {want}", f.refcount));
            }
            if self.face_map.get(&skey4(f.corners)) != Some(&id) {
                return fail(format!("face {id} not in registry"));
            }
        }
        if self.face_map.len() != self.faces.len() {
            return fail("face registry has stale entries".into());
        }
        Ok(())
    }

    /// (leaves, vertices, edges, faces) — the mesh census used by tests.
    pub fn census(&self) -> (usize, usize, usize, usize) {
        (self.num_leaves(), self.vertices.len(), self.edges.len(), self.faces.len())
    }
}

/// Index (within the child table) of the child covering parent corner
/// `corner`.
pub fn covering_child(table: &[ChildSpec], corner: u8) -> usize {
    table
        .iter()
        .position(|ch| ch.corners[corner as usize] == VRef::C(corner))
        .expect("every parent corner is covered by exactly one child")
}

/// The reference axis on which all four corners of a hex face agree.
fn face_normal_axis(f: [u8; 4]) -> usize {
    let rc = Geom::Hex.ref_corners();
    (0..3)
        .find(|&d| {
            let v = rc[f[0] as usize][d];
            f.iter().all(|&i| rc[i as usize][d] == v)
        })
        .expect("hex face corners must agree on one axis")
}
