//! Master/slave classification of shared mesh entities.
//!
//! On a non-conforming mesh, a lower-dimensional entity shared between
//! elements is either *conforming* (shared as an equal by all holders),
//! a *master* (its far side is tiled by smaller entities of refined
//! neighbors), or a *slave* (contained in the interior of a larger entity).
//! The classification, together with the position of each slave inside its
//! master's reference domain, is what the constraint assembly consumes.
//!
//! Discovery works purely through the vertex/edge/face registries: a leaf
//! entity is probed as a potential master by recursively looking up
//! mid-vertices of its corner pairs.  Quadrilateral faces are descended as a
//! binary tree (an isotropically refined face is treated as split twice),
//! with the split direction decided by the existence of the central vertex
//! or central edge.  The descent stops at the first *live* entity, so a
//! nested slave always records its smallest enclosing master.

use crate::error::Error;
use crate::ncmesh::{NCMesh, NIL};
use crate::Result;
use std::collections::{HashMap, HashSet};
use std::fmt;

/// Recursion guard for traversals; meshes this deep are not reachable with
/// 32-bit entity budgets.
const MAX_TRAVERSAL_DEPTH: u32 = 32;

// ---------------------------------------------------------------------------
// Dyadic rationals
// ---------------------------------------------------------------------------

/// An exact dyadic rational `num / 2^log_den`, kept normalized (odd
/// numerator or zero exponent).  Placement coordinates are midpoints of
/// midpoints of {0, 1}, so they are always dyadic; storing them exactly
/// keeps deeply nested placements drift-free.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Dyadic {
    num: i64,
    log_den: u32,
}

impl Dyadic {
    pub const ZERO: Dyadic = Dyadic { num: 0, log_den: 0 };
    pub const ONE: Dyadic = Dyadic { num: 1, log_den: 0 };

    pub fn new(num: i64, log_den: u32) -> Self {
        let mut d = Dyadic { num, log_den };
        d.normalize();
        d
    }

    fn normalize(&mut self) {
        while self.log_den > 0 && self.num % 2 == 0 {
            self.num /= 2;
            self.log_den -= 1;
        }
    }

    /// Exact midpoint of two dyadic numbers.
    pub fn mid(a: Dyadic, b: Dyadic) -> Dyadic {
        let log = a.log_den.max(b.log_den);
        let na = a.num << (log - a.log_den);
        let nb = b.num << (log - b.log_den);
        Dyadic::new(na + nb, log + 1)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / (1u64 << self.log_den) as f64
    }

    pub fn numerator(self) -> i64 {
        self.num
    }

    pub fn denominator(self) -> i64 {
        1i64 << self.log_den
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.log_den == 0 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, 1i64 << self.log_den)
        }
    }
}

/// A point in a master entity's reference domain.  Edge placements use only
/// the first coordinate.
pub type RefPoint = [Dyadic; 2];

fn mid_point(a: RefPoint, b: RefPoint) -> RefPoint {
    [Dyadic::mid(a[0], b[0]), Dyadic::mid(a[1], b[1])]
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// A slave entity located inside a master, with the positions of its corners
/// in the master's reference domain.  `corners[k]` sits at `placement[k]`.
#[derive(Clone, Debug)]
pub struct SlaveRecord {
    pub entity: u32,
    pub corners: Vec<u32>,
    pub placement: Vec<RefPoint>,
}

/// A master entity and the slaves tiling (part of) its far side.
#[derive(Clone, Debug)]
pub struct MasterRecord {
    pub entity: u32,
    pub corners: Vec<u32>,
    pub slaves: Vec<SlaveRecord>,
}

/// Classification of all live entities of one dimension.
#[derive(Clone, Debug, Default)]
pub struct EntityClasses {
    /// Interior entities shared as equals by two or more leaves.
    pub conforming: Vec<u32>,
    /// Entities whose far side is covered by smaller (slave) entities.
    pub masters: Vec<MasterRecord>,
    /// Entities contained in the interior of some master.
    pub slaves: Vec<u32>,
    /// Entities on the domain boundary (single holder, no finer side).
    pub boundary: Vec<u32>,
}

impl EntityClasses {
    pub fn master_of(&self, entity: u32) -> Option<&MasterRecord> {
        self.masters.iter().find(|m| m.entity == entity)
    }
}

/// Complete interface classification of a mesh snapshot.
#[derive(Clone, Debug)]
pub struct InterfaceList {
    pub edges: EntityClasses,
    pub faces: EntityClasses,
    mesh_version: u64,
}

impl InterfaceList {
    /// Version of the mesh this list was built from; consumers can detect
    /// stale lists after further refinement.
    pub fn mesh_version(&self) -> u64 {
        self.mesh_version
    }

    /// One line per master in a stable order:
    /// `master edge 1 (1,2) slaves [edge 10 (1,9) @ [0,1/2]; ...]`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (kind, classes) in [("edge", &self.edges), ("face", &self.faces)] {
            for m in &classes.masters {
                out.push_str(&format!("master {} {} (", kind, m.entity));
                push_ids(&mut out, &m.corners);
                out.push_str(") slaves [");
                for (i, s) in m.slaves.iter().enumerate() {
                    if i > 0 {
                        out.push_str("; ");
                    }
                    out.push_str(&format!("{} {} (", kind, s.entity));
                    push_ids(&mut out, &s.corners);
                    out.push_str(") @ [");
                    for (k, p) in s.placement.iter().enumerate() {
                        if k > 0 {
                            out.push_str(",");
                        }
                        if kind == "edge" {
                            out.push_str(&format!("{}", p[0]));
                        } else {
                            out.push_str(&format!("({},{})", p[0], p[1]));
                        }
                    }
                    out.push(']');
                }
                out.push_str("]\n");
            }
        }
        out
    }
}

fn push_ids(out: &mut String, ids: &[u32]) {
    for (i, v) in ids.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&v.to_string());
    }
}

// ---------------------------------------------------------------------------
// Entity lookup abstraction
// ---------------------------------------------------------------------------

/// Registry queries the traversals need.  Implemented by [`NCMesh`]; tests
/// provide synthetic registries (e.g. for triangular faces, which no
/// supported volume element produces).
pub trait EntityLookup {
    /// The vertex registered at the midpoint of `(a, b)`, if any.
    fn mid_vertex(&self, a: u32, b: u32) -> Option<u32>;
    /// The live edge with endpoints `(a, b)`, if any.
    fn edge_between(&self, a: u32, b: u32) -> Option<u32>;
    /// The live face with the given corners (order-insensitive); triangular
    /// faces pass the nil sentinel in the fourth slot.
    fn face_of(&self, corners: [u32; 4]) -> Option<u32>;
}

impl EntityLookup for NCMesh {
    fn mid_vertex(&self, a: u32, b: u32) -> Option<u32> {
        self.find_mid_vertex(a, b)
    }
    fn edge_between(&self, a: u32, b: u32) -> Option<u32> {
        self.find_edge(a, b)
    }
    fn face_of(&self, corners: [u32; 4]) -> Option<u32> {
        self.find_face(corners)
    }
}

// ---------------------------------------------------------------------------
// Traversals
// ---------------------------------------------------------------------------

/// How a quadrilateral face region is split by the finer side.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FaceSplit {
    NotSplit,
    /// Split by the line from mid(v1,v2) to mid(v3,v4).
    Vertical,
    /// Split by the line from mid(v2,v3) to mid(v4,v1).
    Horizontal,
}

/// Determine whether the face region `(v1, v2, v3, v4)` is split by the
/// finer side, and in which direction.
///
/// A split verdict requires both opposite mid-edge vertices *and* central
/// evidence between them: either the central vertex or the central edge.
/// (A face whose four boundary edges are all bisected by neighbors across
/// those edges, with nothing in the face interior, is not split.)  When both
/// directions have evidence (isotropic refinement), Vertical is preferred;
/// the caller recurses and picks up the other direction one level down.
pub fn face_split_type<L: EntityLookup>(lk: &L, v: [u32; 4]) -> FaceSplit {
    let v12 = lk.mid_vertex(v[0], v[1]);
    let v23 = lk.mid_vertex(v[1], v[2]);
    let v34 = lk.mid_vertex(v[2], v[3]);
    let v41 = lk.mid_vertex(v[3], v[0]);
    let central = |a: Option<u32>, b: Option<u32>| match (a, b) {
        (Some(a), Some(b)) => lk.mid_vertex(a, b).is_some() || lk.edge_between(a, b).is_some(),
        _ => false,
    };
    if central(v12, v34) {
        FaceSplit::Vertical
    } else if central(v23, v41) {
        FaceSplit::Horizontal
    } else {
        FaceSplit::NotSplit
    }
}

/// List slave faces of a potential quadrilateral master face by recursive
/// binary descent.  `p` tracks the corner positions of the current region in
/// the master's reference domain.
pub fn traverse_quad_face<L: EntityLookup>(
    lk: &L,
    v: [u32; 4],
    p: [RefPoint; 4],
    depth: u32,
    out: &mut Vec<SlaveRecord>,
) -> Result<()> {
    if depth > MAX_TRAVERSAL_DEPTH {
        return Err(Error::InconsistentMesh(
            "quad face traversal exceeded maximum depth".into(),
        ));
    }
    match face_split_type(lk, v) {
        FaceSplit::Vertical => {
            let v12 = lk.mid_vertex(v[0], v[1]).expect("split verdict implies mid-vertex");
            let v34 = lk.mid_vertex(v[2], v[3]).expect("split verdict implies mid-vertex");
            let p12 = mid_point(p[0], p[1]);
            let p34 = mid_point(p[2], p[3]);
            traverse_quad_face(lk, [v[0], v12, v34, v[3]], [p[0], p12, p34, p[3]], depth + 1, out)?;
            traverse_quad_face(lk, [v12, v[1], v[2], v34], [p12, p[1], p[2], p34], depth + 1, out)?;
        }
        FaceSplit::Horizontal => {
            let v23 = lk.mid_vertex(v[1], v[2]).expect("split verdict implies mid-vertex");
            let v41 = lk.mid_vertex(v[3], v[0]).expect("split verdict implies mid-vertex");
            let p23 = mid_point(p[1], p[2]);
            let p41 = mid_point(p[3], p[0]);
            traverse_quad_face(lk, [v[0], v[1], v23, v41], [p[0], p[1], p23, p41], depth + 1, out)?;
            traverse_quad_face(lk, [v41, v23, v[2], v[3]], [p41, p23, p[2], p[3]], depth + 1, out)?;
        }
        FaceSplit::NotSplit => {
            if depth > 0 {
                if let Some(f) = lk.face_of(v) {
                    out.push(SlaveRecord {
                        entity: f,
                        corners: v.to_vec(),
                        placement: p.to_vec(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// List slave faces of a potential triangular master face.  All three
/// mid-edge vertices must exist to recurse into the four sub-triangles; a
/// located face at positive depth is reported with its corner placements.
pub fn traverse_tri_face<L: EntityLookup>(
    lk: &L,
    v: [u32; 3],
    p: [RefPoint; 3],
    depth: u32,
    out: &mut Vec<SlaveRecord>,
) -> Result<()> {
    if depth > MAX_TRAVERSAL_DEPTH {
        return Err(Error::InconsistentMesh(
            "tri face traversal exceeded maximum depth".into(),
        ));
    }
    let v12 = lk.mid_vertex(v[0], v[1]);
    let v23 = lk.mid_vertex(v[1], v[2]);
    let v31 = lk.mid_vertex(v[2], v[0]);
    if let (Some(v12), Some(v23), Some(v31)) = (v12, v23, v31) {
        let p12 = mid_point(p[0], p[1]);
        let p23 = mid_point(p[1], p[2]);
        let p31 = mid_point(p[2], p[0]);
        traverse_tri_face(lk, [v[0], v12, v31], [p[0], p12, p31], depth + 1, out)?;
        traverse_tri_face(lk, [v12, v[1], v23], [p12, p[1], p23], depth + 1, out)?;
        traverse_tri_face(lk, [v31, v23, v[2]], [p31, p23, p[2]], depth + 1, out)?;
        traverse_tri_face(lk, [v12, v23, v31], [p12, p23, p31], depth + 1, out)?;
    } else if depth > 0 {
        if let Some(f) = lk.face_of([v[0], v[1], v[2], NIL]) {
            out.push(SlaveRecord { entity: f, corners: v.to_vec(), placement: p.to_vec() });
        }
    }
    Ok(())
}

/// List slave edges of a potential master edge by recursive bisection.
/// `t1`, `t2` are the parameters of the current segment inside the master.
///
/// The descent stops at the first live edge: deeper structure below a live
/// edge is reported by that edge's own traversal, which realizes the
/// smallest-master rule for chained (irregularity > 1) configurations.
pub fn traverse_edge<L: EntityLookup>(
    lk: &L,
    v1: u32,
    v2: u32,
    t1: Dyadic,
    t2: Dyadic,
    depth: u32,
    out: &mut Vec<SlaveRecord>,
) -> Result<()> {
    if depth > MAX_TRAVERSAL_DEPTH {
        return Err(Error::InconsistentMesh("edge traversal exceeded maximum depth".into()));
    }
    if depth > 0 {
        if let Some(e) = lk.edge_between(v1, v2) {
            out.push(SlaveRecord {
                entity: e,
                corners: vec![v1, v2],
                placement: vec![[t1, Dyadic::ZERO], [t2, Dyadic::ZERO]],
            });
            return Ok(());
        }
    }
    if let Some(mid) = lk.mid_vertex(v1, v2) {
        let tm = Dyadic::mid(t1, t2);
        traverse_edge(lk, v1, mid, t1, tm, depth + 1, out)?;
        traverse_edge(lk, mid, v2, tm, t2, depth + 1, out)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Classify every live edge (and, in 3D, face) of the mesh as conforming,
/// master, slave, or boundary.
///
/// The mesh must be consistent (see `NCMesh::ensure_consistency`); on an
/// inconsistent mesh intersecting entities have no subset relation and no
/// valid classification exists.
///
/// In meshes of irregularity ≥ 2 a 3D edge can be a slave of a larger edge
/// and simultaneously the master of still smaller ones; it then appears in
/// both lists.  `conforming` and `boundary` are always disjoint from both.
pub fn build_interface_list(mesh: &NCMesh) -> Result<InterfaceList> {
    mesh.check_consistency()?;

    let unit_corners: [RefPoint; 4] = [
        [Dyadic::ZERO, Dyadic::ZERO],
        [Dyadic::ONE, Dyadic::ZERO],
        [Dyadic::ONE, Dyadic::ONE],
        [Dyadic::ZERO, Dyadic::ONE],
    ];

    let mut edge_masters: Vec<MasterRecord> = Vec::new();
    let mut face_masters: Vec<MasterRecord> = Vec::new();
    let mut edge_slaves: HashSet<u32> = HashSet::new();
    let mut face_slaves: HashSet<u32> = HashSet::new();
    let mut visited_edges: HashSet<u32> = HashSet::new();
    let mut visited_faces: HashSet<u32> = HashSet::new();

    for leaf in mesh.dfs_leaves() {
        for e in mesh.leaf_edges(leaf) {
            if !visited_edges.insert(e) {
                continue;
            }
            let (a, b) = mesh.edge_endpoints(e);
            let mut slaves = Vec::new();
            traverse_edge(mesh, a, b, Dyadic::ZERO, Dyadic::ONE, 0, &mut slaves)?;
            if !slaves.is_empty() {
                for s in &slaves {
                    edge_slaves.insert(s.entity);
                }
                edge_masters.push(MasterRecord { entity: e, corners: vec![a, b], slaves });
            }
        }
        for f in mesh.leaf_faces(leaf) {
            if !visited_faces.insert(f) {
                continue;
            }
            let c = mesh.face_corners(f);
            let mut slaves = Vec::new();
            traverse_quad_face(mesh, c, unit_corners, 0, &mut slaves)?;
            if !slaves.is_empty() {
                for s in &slaves {
                    face_slaves.insert(s.entity);
                }
                face_masters.push(MasterRecord { entity: f, corners: c.to_vec(), slaves });
            }
        }
    }

    edge_masters.sort_by_key(|m| m.entity);
    face_masters.sort_by_key(|m| m.entity);

    let classify = |ids: Vec<u32>,
                    masters: Vec<MasterRecord>,
                    slave_set: &HashSet<u32>,
                    count: &dyn Fn(u32) -> u32|
     -> EntityClasses {
        let master_set: HashSet<u32> = masters.iter().map(|m| m.entity).collect();
        let mut classes = EntityClasses { masters, ..Default::default() };
        for id in ids {
            let is_master = master_set.contains(&id);
            let is_slave = slave_set.contains(&id);
            if is_slave {
                classes.slaves.push(id);
            }
            if !is_master && !is_slave {
                if count(id) >= 2 {
                    classes.conforming.push(id);
                } else {
                    classes.boundary.push(id);
                }
            }
        }
        classes
    };

    let edges = classify(mesh.edge_ids(), edge_masters, &edge_slaves, &|e| {
        mesh.edge_leaf_count(e)
    });
    let faces = classify(mesh.face_ids(), face_masters, &face_slaves, &|f| {
        mesh.face_leaf_count(f)
    });

    Ok(InterfaceList { edges, faces, mesh_version: mesh.version() })
}

// ---------------------------------------------------------------------------
// Irregularity limiting
// ---------------------------------------------------------------------------

/// Uniform key for entities of any dimension.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum EKey {
    V(u32),
    E(u32),
    F(u32),
}

/// Closure of a master or slave entity as a key set: the entity itself, its
/// edges (for faces), and its corner vertices.
fn closure_keys(mesh: &NCMesh, kind: EKey, corners: &[u32]) -> Vec<EKey> {
    let mut keys = vec![kind];
    for &v in corners {
        keys.push(EKey::V(v));
    }
    if let EKey::F(_) = kind {
        for i in 0..4 {
            let (a, b) = (corners[i], corners[(i + 1) % 4]);
            if let Some(e) = mesh.find_edge(a, b) {
                keys.push(EKey::E(e));
            }
        }
    }
    keys
}

/// Dependency graph over masters: an arc `m1 -> m2` means some entity
/// constrained under `m1` (a slave or hanging vertex interior to it) belongs
/// to the closure of `m2`, i.e. the constraints of `m2`'s slaves reference
/// DOFs that are themselves constrained under `m1`.  The longest path is an
/// upper bound for the constraint-resolution sweep count (the mesh
/// irregularity).
struct MasterGraph {
    /// Per master: (entity key, supporting closure keys).
    nodes: Vec<(EKey, Vec<EKey>)>,
    /// Arcs by node index.
    succ: Vec<Vec<usize>>,
    /// Longest-path depth per node, 1-based; `CYCLE_DEPTH` marks cycles.
    depth: Vec<usize>,
}

const CYCLE_DEPTH: usize = usize::MAX / 2;

fn build_master_graph(mesh: &NCMesh, ifaces: &InterfaceList) -> MasterGraph {
    let mut nodes: Vec<(EKey, Vec<EKey>)> = Vec::new();
    let mut constrained: Vec<Vec<EKey>> = Vec::new();

    let mut add = |records: &[MasterRecord], kind: fn(u32) -> EKey, skind: fn(u32) -> EKey| {
        for m in records {
            let support = closure_keys(mesh, kind(m.entity), &m.corners);
            let support_set: HashSet<EKey> = support.iter().copied().collect();
            let mut bound = Vec::new();
            for s in &m.slaves {
                for k in closure_keys(mesh, skind(s.entity), &s.corners) {
                    if !support_set.contains(&k) {
                        bound.push(k);
                    }
                }
            }
            nodes.push((kind(m.entity), support));
            constrained.push(bound);
        }
    };
    add(&ifaces.edges.masters, EKey::E, EKey::E);
    add(&ifaces.faces.masters, EKey::F, EKey::F);

    // Index supports so arcs are found without a quadratic scan.
    let mut supporters: HashMap<EKey, Vec<usize>> = HashMap::new();
    for (i, (_, support)) in nodes.iter().enumerate() {
        for &k in support {
            supporters.entry(k).or_default().push(i);
        }
    }

    let n = nodes.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, bound) in constrained.iter().enumerate() {
        let mut targets: Vec<usize> = Vec::new();
        for k in bound {
            if let Some(list) = supporters.get(k) {
                targets.extend(list.iter().copied().filter(|&j| j != i));
            }
        }
        targets.sort_unstable();
        targets.dedup();
        succ[i] = targets;
    }

    // Longest-path relaxation; lack of convergence within n passes means a
    // cycle, whose members keep changing and are marked with CYCLE_DEPTH.
    let mut depth = vec![1usize; n];
    let mut changed_nodes: Vec<bool> = vec![false; n];
    for pass in 0..=n {
        let mut changed = false;
        for i in 0..n {
            for &j in &succ[i] {
                if depth[i] + 1 > depth[j] && depth[i] < CYCLE_DEPTH {
                    depth[j] = depth[i] + 1;
                    changed = true;
                    if pass == n {
                        changed_nodes[j] = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
        if pass == n {
            for (i, &c) in changed_nodes.iter().enumerate() {
                if c || depth[i] > n {
                    depth[i] = CYCLE_DEPTH;
                }
            }
        }
    }

    MasterGraph { nodes, succ, depth }
}

/// Force refinements until no chain of indirect constraints is longer than
/// `n` (so the prolongation resolution needs at most `n` sweeps).  Returns
/// the elements refined.
///
/// Wherever a master's dependent master sits at chain depth > `n`, the
/// holders of the *prerequisite* master are refined isotropically, turning
/// its hanging vertices into real conforming ones and shortening the chain.
/// This also breaks constraint cycles, which behave as infinitely long
/// chains.
pub fn limit_irregularity(mesh: &mut NCMesh, n: usize) -> Result<Vec<u32>> {
    assert!(n >= 1, "irregularity limit must be at least 1");
    let mut refined = Vec::new();
    for _pass in 0..64 {
        let ifaces = build_interface_list(mesh)?;
        let graph = build_master_graph(mesh, &ifaces);

        let mut offending: HashSet<EKey> = HashSet::new();
        for i in 0..graph.nodes.len() {
            for &j in &graph.succ[i] {
                if graph.depth[j] > n {
                    offending.insert(graph.nodes[i].0);
                }
            }
        }
        if offending.is_empty() {
            return Ok(refined);
        }

        // Holders of the offending master entities.
        let mut to_refine: Vec<u32> = Vec::new();
        for leaf in mesh.dfs_leaves() {
            let holds = mesh.leaf_edges(leaf).iter().any(|&e| offending.contains(&EKey::E(e)))
                || mesh.leaf_faces(leaf).iter().any(|&f| offending.contains(&EKey::F(f)));
            if holds {
                to_refine.push(leaf);
            }
        }
        for id in to_refine {
            if mesh.element(id).map(|e| e.is_leaf()) == Some(true) {
                let geom = mesh.element(id).expect("leaf exists").geom;
                mesh.refine(id, geom.iso_ref_type())?;
                refined.push(id);
            }
        }
        mesh.ensure_consistency()?;
    }
    Err(Error::ConsistencyLimitExceeded(64))
}

/// Entity-level irregularity estimate: the longest chain in the master
/// dependency graph (0 on a conforming mesh, `None` if the chain graph is
/// cyclic).  The authoritative count is the constraint-resolution sweep
/// count; this estimate bounds it from above and is used for limiting.
pub fn entity_irregularity(mesh: &NCMesh) -> Result<Option<usize>> {
    let ifaces = build_interface_list(mesh)?;
    let graph = build_master_graph(mesh, &ifaces);
    if graph.depth.iter().any(|&d| d >= CYCLE_DEPTH) {
        return Ok(None);
    }
    Ok(Some(graph.depth.iter().copied().max().unwrap_or(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Geom, REF_X, REF_XY, REF_XYZ, REF_Y, REF_Z};
    use crate::ncmesh::tests::{two_hexes, unit_quad};
    use crate::testutil::{indirect_pair, single_hanging_pair, two_quads};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dy(num: i64, log_den: u32) -> Dyadic {
        Dyadic::new(num, log_den)
    }

    #[test]
    fn dyadic_arithmetic() {
        // [TRIVIAL] Midpoint arithmetic and normalization on small fractions.
        let half = Dyadic::mid(Dyadic::ZERO, Dyadic::ONE);
        assert_eq!(half, dy(1, 1));
        let quarter = Dyadic::mid(Dyadic::ZERO, half);
        assert_eq!(quarter, dy(1, 2));
        let three_quarters = Dyadic::mid(half, Dyadic::ONE);
        assert_eq!(three_quarters, dy(3, 2));
        // mid(1/4, 3/4) normalizes back to 1/2.
        assert_eq!(Dyadic::mid(quarter, three_quarters), dy(1, 1));
        assert_eq!(three_quarters.to_f64(), 0.75);
        assert_eq!(format!("{}", three_quarters), "3/4");
        assert_eq!(format!("{}", Dyadic::ONE), "1");
        assert_eq!(half.numerator(), 1);
        assert_eq!(half.denominator(), 2);
    }

    #[test]
    fn conforming_grid_has_only_conforming_and_boundary_edges() {
        // [TRIVIAL] A 3x3 conforming quad grid: 24 edges total, 12 on the
        // boundary, 12 interior; no masters or slaves anywhere.
        let mut m = NCMesh::new(2);
        let mut ids = HashMap::new();
        for j in 0..=3u32 {
            for i in 0..=3u32 {
                ids.insert((i, j), m.add_vertex([i as f64, j as f64, 0.0]));
            }
        }
        for j in 0..3 {
            for i in 0..3 {
                m.add_root(
                    Geom::Quad,
                    &[ids[&(i, j)], ids[&(i + 1, j)], ids[&(i + 1, j + 1)], ids[&(i, j + 1)]],
                )
                .unwrap();
            }
        }
        let ifc = build_interface_list(&m).unwrap();
        assert!(ifc.edges.masters.is_empty());
        assert!(ifc.edges.slaves.is_empty());
        assert_eq!(ifc.edges.conforming.len(), 12);
        assert_eq!(ifc.edges.boundary.len(), 12);
        assert!(ifc.faces.masters.is_empty() && ifc.faces.conforming.is_empty());
    }

    #[test]
    fn single_hanging_node_classification() {
        // [DERIVED] Two quads, right refined isotropically.  Hand census:
        // 1 master (the shared edge) with 2 slaves at [0,1/2] and [1/2,1];
        // 4 conforming interior spokes; 9 boundary edges (3 left + 6 right).
        let (m, _, _) = single_hanging_pair();
        let ifc = build_interface_list(&m).unwrap();
        assert_eq!(ifc.edges.masters.len(), 1);
        assert_eq!(ifc.edges.slaves.len(), 2);
        assert_eq!(ifc.edges.conforming.len(), 4);
        assert_eq!(ifc.edges.boundary.len(), 9);

        let master = &ifc.edges.masters[0];
        assert_eq!(master.slaves.len(), 2);
        // The two placements tile [0,1]: lengths 1/2 each, endpoints exact.
        let mut ts: Vec<(Dyadic, Dyadic)> = master
            .slaves
            .iter()
            .map(|s| {
                let (a, b) = (s.placement[0][0], s.placement[1][0]);
                if a.to_f64() < b.to_f64() {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect();
        ts.sort_by(|x, y| x.0.to_f64().partial_cmp(&y.0.to_f64()).unwrap());
        assert_eq!(ts, vec![(Dyadic::ZERO, dy(1, 1)), (dy(1, 1), Dyadic::ONE)]);

        check_placements_geometrically(&m, &ifc);
    }

    #[test]
    fn dump_is_stable_and_matches_hand_derived_ids() {
        // [DERIVED] Entity ids follow deterministic creation order: the two
        // root quads create vertices 0..=5 and edges 0..=6 (shared edge is
        // edge 1 between vertices 1 and 2); refining the right quad creates
        // the hanging vertex 7 at (1, 0.5), and the slave halves are edges
        // 10 (below) and 18 (above), created by children 0 and 3.
        let (m, _, _) = single_hanging_pair();
        assert_eq!(m.vertex_pos(7), [1.0, 0.5, 0.0]);
        let ifc = build_interface_list(&m).unwrap();
        assert_eq!(
            ifc.dump(),
            "master edge 1 (1,2) slaves [edge 10 (1,7) @ [0,1/2]; edge 18 (7,2) @ [1/2,1]]\n"
        );
        // Stability: rebuilding gives the identical dump.
        assert_eq!(build_interface_list(&m).unwrap().dump(), ifc.dump());
    }

    #[test]
    fn indirect_constraint_mesh_has_nested_masters() {
        // [DERIVED] In the 2-irregular mesh, the shared x = 1 edge has three
        // slaves (two quarter pieces and one half piece), and the interior
        // y = 1/2 edge of the right column is a second master with two
        // slaves.  The chain estimate is 2.
        let (m, _) = indirect_pair();
        let ifc = build_interface_list(&m).unwrap();
        assert_eq!(ifc.edges.masters.len(), 2);

        let by_len: Vec<usize> = {
            let mut v: Vec<usize> = ifc.edges.masters.iter().map(|mr| mr.slaves.len()).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(by_len, vec![2, 3]);

        // The 3-slave master tiles [0,1] as {[0,1/4],[1/4,1/2],[1/2,1]}.
        let big = ifc.edges.masters.iter().find(|mr| mr.slaves.len() == 3).unwrap();
        let mut intervals: Vec<(f64, f64)> = big
            .slaves
            .iter()
            .map(|s| {
                let (a, b) = (s.placement[0][0].to_f64(), s.placement[1][0].to_f64());
                (a.min(b), a.max(b))
            })
            .collect();
        intervals.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        assert_eq!(intervals, vec![(0.0, 0.25), (0.25, 0.5), (0.5, 1.0)]);

        check_placements_geometrically(&m, &ifc);
        assert_eq!(entity_irregularity(&m).unwrap(), Some(2));
    }

    #[test]
    fn limit_irregularity_refines_the_coarse_neighbor() {
        // [DERIVED] Limiting the 2-irregular mesh to 1 must refine the
        // holder of the chain-starting master: the big left element.  A
        // limit of 2 (or 3) requires nothing.
        let (mut m, left) = indirect_pair();
        assert!(limit_irregularity(&mut m.clone(), 2).unwrap().is_empty());

        let forced = limit_irregularity(&mut m, 1).unwrap();
        assert!(forced.contains(&left), "expected the coarse left element to be refined");
        assert!(!m.element(left).unwrap().is_leaf());
        assert!(entity_irregularity(&m).unwrap().unwrap_or(99) <= 1);

        // Already 1-irregular mesh: nothing to do.
        let (mut m4, _, _) = single_hanging_pair();
        assert!(limit_irregularity(&mut m4, 1).unwrap().is_empty());
    }

    #[test]
    fn iso_refined_hex_face_yields_four_quarter_slaves() {
        // [DERIVED] Two face-adjacent hexes, right one refined isotropically:
        // the shared face becomes a master with 4 quarter slaves (binary
        // descent twice), and each of its 4 edges a master with 2 slaves.
        let (mut m, _h0, h1) = two_hexes();
        m.refine(h1, REF_XYZ).unwrap();
        let ifc = build_interface_list(&m).unwrap();

        assert_eq!(ifc.faces.masters.len(), 1);
        let fm = &ifc.faces.masters[0];
        assert_eq!(fm.slaves.len(), 4);
        // Quarter areas, tiling the unit square exactly.
        let mut corners_seen: HashSet<(i64, i64, i64, i64)> = HashSet::new();
        for s in &fm.slaves {
            let us: Vec<f64> = s.placement.iter().map(|p| p[0].to_f64()).collect();
            let vs: Vec<f64> = s.placement.iter().map(|p| p[1].to_f64()).collect();
            let w = us.iter().cloned().fold(f64::MAX, f64::min)
                ..us.iter().cloned().fold(f64::MIN, f64::max);
            let h = vs.iter().cloned().fold(f64::MAX, f64::min)
                ..vs.iter().cloned().fold(f64::MIN, f64::max);
            assert!((w.end - w.start - 0.5).abs() < 1e-15);
            assert!((h.end - h.start - 0.5).abs() < 1e-15);
            corners_seen.insert((
                (w.start * 2.0) as i64,
                (h.start * 2.0) as i64,
                (w.end * 2.0) as i64,
                (h.end * 2.0) as i64,
            ));
        }
        assert_eq!(corners_seen.len(), 4, "four distinct quarters");

        assert_eq!(ifc.edges.masters.len(), 4);
        for em in &ifc.edges.masters {
            assert_eq!(em.slaves.len(), 2);
        }
        check_placements_geometrically(&m, &ifc);
    }

    #[test]
    fn face_parallel_split_keeps_face_conforming() {
        // [DERIVED] Splitting the right hex along x (parallel to the shared
        // x = 1 face) leaves the shared face intact: the left hex holds it
        // and the right hex's near child holds it — conforming, no masters.
        // The split also creates the internal x = 1.5 face shared by the two
        // children, so the mesh has exactly 2 conforming faces.
        let (mut m, _h0, h1) = two_hexes();
        m.refine(h1, REF_X).unwrap();
        let ifc = build_interface_list(&m).unwrap();
        assert!(ifc.faces.masters.is_empty());
        assert!(ifc.edges.masters.is_empty());
        assert_eq!(ifc.faces.conforming.len(), 2);
    }

    #[test]
    fn anisotropic_half_split_face() {
        // [DERIVED] Splitting the right hex along y halves the shared face:
        // one face master with exactly 2 half slaves; the two shared-face
        // edges crossing the split (the y-direction ones) become masters.
        let (mut m, _h0, h1) = two_hexes();
        m.refine(h1, REF_Y).unwrap();
        let ifc = build_interface_list(&m).unwrap();
        assert_eq!(ifc.faces.masters.len(), 1);
        assert_eq!(ifc.faces.masters[0].slaves.len(), 2);
        for s in &ifc.faces.masters[0].slaves {
            // Each half has placement area 1/2.
            let us: Vec<f64> = s.placement.iter().map(|p| p[0].to_f64()).collect();
            let vs: Vec<f64> = s.placement.iter().map(|p| p[1].to_f64()).collect();
            let du = us.iter().cloned().fold(f64::MIN, f64::max)
                - us.iter().cloned().fold(f64::MAX, f64::min);
            let dv = vs.iter().cloned().fold(f64::MIN, f64::max)
                - vs.iter().cloned().fold(f64::MAX, f64::min);
            assert!((du * dv - 0.5).abs() < 1e-15);
        }
        assert_eq!(ifc.edges.masters.len(), 2);
        check_placements_geometrically(&m, &ifc);
    }

    /// Synthetic registry for traversal unit tests.
    #[derive(Default)]
    struct MockRegistry {
        mids: HashMap<(u32, u32), u32>,
        edges: HashMap<(u32, u32), u32>,
        faces: HashMap<[u32; 4], u32>,
    }

    impl MockRegistry {
        fn key2(a: u32, b: u32) -> (u32, u32) {
            (a.min(b), a.max(b))
        }
        fn key4(mut c: [u32; 4]) -> [u32; 4] {
            c.sort_unstable();
            c
        }
        fn add_mid(&mut self, a: u32, b: u32, m: u32) {
            self.mids.insert(Self::key2(a, b), m);
        }
        fn add_edge(&mut self, a: u32, b: u32, e: u32) {
            self.edges.insert(Self::key2(a, b), e);
        }
        fn add_face(&mut self, c: [u32; 4], f: u32) {
            self.faces.insert(Self::key4(c), f);
        }
    }

    impl EntityLookup for MockRegistry {
        fn mid_vertex(&self, a: u32, b: u32) -> Option<u32> {
            self.mids.get(&Self::key2(a, b)).copied()
        }
        fn edge_between(&self, a: u32, b: u32) -> Option<u32> {
            self.edges.get(&Self::key2(a, b)).copied()
        }
        fn face_of(&self, c: [u32; 4]) -> Option<u32> {
            self.faces.get(&Self::key4(c)).copied()
        }
    }

    #[test]
    fn face_split_type_cases() {
        // [TRIVIAL] No mid-vertices at all: not split.
        let mut r = MockRegistry::default();
        assert_eq!(face_split_type(&r, [1, 2, 3, 4]), FaceSplit::NotSplit);

        // [TRIVIAL] Opposite mids plus central vertex: vertical.
        r.add_mid(1, 2, 12);
        r.add_mid(3, 4, 34);
        assert_eq!(face_split_type(&r, [1, 2, 3, 4]), FaceSplit::NotSplit);
        r.add_mid(12, 34, 99);
        assert_eq!(face_split_type(&r, [1, 2, 3, 4]), FaceSplit::Vertical);

        // [DERIVED] Central evidence may also be the central *edge* alone: a
        // neighbor split once in half creates the edge (mid12, mid34) but no
        // center vertex.
        let mut r2 = MockRegistry::default();
        r2.add_mid(1, 2, 12);
        r2.add_mid(3, 4, 34);
        r2.add_edge(12, 34, 7);
        assert_eq!(face_split_type(&r2, [1, 2, 3, 4]), FaceSplit::Vertical);

        // [TRIVIAL] Horizontal variant.
        let mut r3 = MockRegistry::default();
        r3.add_mid(2, 3, 23);
        r3.add_mid(4, 1, 41);
        r3.add_edge(23, 41, 8);
        assert_eq!(face_split_type(&r3, [1, 2, 3, 4]), FaceSplit::Horizontal);

        // [TRIVIAL] Isotropic (both central vertices exist): Vertical wins.
        let mut r4 = MockRegistry::default();
        for (a, b, m) in [(1, 2, 12), (2, 3, 23), (3, 4, 34), (4, 1, 41)] {
            r4.add_mid(a, b, m);
        }
        r4.add_mid(12, 34, 99);
        r4.add_mid(23, 41, 99);
        assert_eq!(face_split_type(&r4, [1, 2, 3, 4]), FaceSplit::Vertical);

        // [DERIVED] All four boundary mids but no central evidence: the
        // neighbors across the edges are refined, the face itself is not.
        let mut r5 = MockRegistry::default();
        for (a, b, m) in [(1, 2, 12), (2, 3, 23), (3, 4, 34), (4, 1, 41)] {
            r5.add_mid(a, b, m);
        }
        assert_eq!(face_split_type(&r5, [1, 2, 3, 4]), FaceSplit::NotSplit);
    }

    #[test]
    fn tri_face_traversal_on_synthetic_registry() {
        // [DERIVED] One isotropic refinement level of a triangular face:
        // 4 slaves with corner/mid placements from midpoint arithmetic.
        let mut r = MockRegistry::default();
        let (v1, v2, v3) = (1, 2, 3);
        let (m12, m23, m31) = (12, 23, 31);
        r.add_mid(v1, v2, m12);
        r.add_mid(v2, v3, m23);
        r.add_mid(v3, v1, m31);
        r.add_face([v1, m12, m31, NIL], 101);
        r.add_face([m12, v2, m23, NIL], 102);
        r.add_face([m31, m23, v3, NIL], 103);
        r.add_face([m12, m23, m31, NIL], 104);

        let p0: [RefPoint; 3] = [
            [Dyadic::ZERO, Dyadic::ZERO],
            [Dyadic::ONE, Dyadic::ZERO],
            [Dyadic::ZERO, Dyadic::ONE],
        ];
        let mut out = Vec::new();
        traverse_tri_face(&r, [v1, v2, v3], p0, 0, &mut out).unwrap();
        assert_eq!(out.len(), 4);

        let h = dy(1, 1);
        let by_entity: HashMap<u32, Vec<(f64, f64)>> = out
            .iter()
            .map(|s| {
                (s.entity, s.placement.iter().map(|p| (p[0].to_f64(), p[1].to_f64())).collect())
            })
            .collect();
        assert_eq!(by_entity[&101], vec![(0.0, 0.0), (0.5, 0.0), (0.0, 0.5)]);
        assert_eq!(by_entity[&102], vec![(0.5, 0.0), (1.0, 0.0), (0.5, 0.5)]);
        assert_eq!(by_entity[&103], vec![(0.0, 0.5), (0.5, 0.5), (0.0, 1.0)]);
        assert_eq!(by_entity[&104], vec![(0.5, 0.0), (0.5, 0.5), (0.0, 0.5)]);
        let _ = h;

        // [DERIVED] Refine the corner sub-triangle at v2 once more (its face
        // disappears, four smaller ones plus the mid vertices appear):
        // 3 + 4 = 7 slaves in total.
        let mut r2 = r;
        r2.faces.remove(&MockRegistry::key4([m12, v2, m23, NIL]));
        let (a, b, c) = (120, 223, 123);
        r2.add_mid(m12, v2, a);
        r2.add_mid(v2, m23, b);
        r2.add_mid(m23, m12, c);
        r2.add_face([m12, a, c, NIL], 105);
        r2.add_face([a, v2, b, NIL], 106);
        r2.add_face([c, b, m23, NIL], 107);
        r2.add_face([a, b, c, NIL], 108);

        let mut out2 = Vec::new();
        traverse_tri_face(&r2, [v1, v2, v3], p0, 0, &mut out2).unwrap();
        assert_eq!(out2.len(), 7);
        // The deepest slave corner placements are quarter-resolution.
        let deep = out2.iter().find(|s| s.entity == 106).unwrap();
        assert_eq!(
            deep.placement.iter().map(|p| (p[0].to_f64(), p[1].to_f64())).collect::<Vec<_>>(),
            vec![(0.75, 0.0), (1.0, 0.0), (0.75, 0.25)]
        );

        // [TRIVIAL] Conforming face: no mids, empty result.
        let empty = MockRegistry::default();
        let mut out3 = Vec::new();
        traverse_tri_face(&empty, [v1, v2, v3], p0, 0, &mut out3).unwrap();
        assert!(out3.is_empty());
    }

    /// Placement fidelity: interpolating the master's corner coordinates at
    /// each placement point must reproduce the slave corner coordinates.
    fn check_placements_geometrically(m: &NCMesh, ifc: &InterfaceList) {
        for (classes, is_face) in [(&ifc.edges, false), (&ifc.faces, true)] {
            for mr in &classes.masters {
                let mc: Vec<[f64; 3]> = mr.corners.iter().map(|&v| m.vertex_pos(v)).collect();
                for s in &mr.slaves {
                    for (k, &sv) in s.corners.iter().enumerate() {
                        let p = s.placement[k];
                        let (u, v) = (p[0].to_f64(), p[1].to_f64());
                        let mapped: Vec<f64> = (0..3)
                            .map(|d| {
                                if is_face {
                                    mc[0][d] * (1.0 - u) * (1.0 - v)
                                        + mc[1][d] * u * (1.0 - v)
                                        + mc[2][d] * u * v
                                        + mc[3][d] * (1.0 - u) * v
                                } else {
                                    mc[0][d] * (1.0 - u) + mc[1][d] * u
                                }
                            })
                            .collect();
                        let actual = m.vertex_pos(sv);
                        for d in 0..3 {
                            assert!(
                                (mapped[d] - actual[d]).abs() < 1e-12,
                                "slave corner mismatch: {:?} vs {:?}",
                                mapped,
                                actual
                            );
                        }
                    }
                }
            }
        }
    }

    // -----------------------------------------------------------------
    // Brute-force geometric oracle (axis-aligned corpus meshes)
    // -----------------------------------------------------------------

    fn seg_contains(m: &NCMesh, big: (u32, u32), small: (u32, u32)) -> bool {
        let (pa, pb) = (m.vertex_pos(big.0), m.vertex_pos(big.1));
        let on = |p: [f64; 3]| {
            let d = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
            let w = [p[0] - pa[0], p[1] - pa[1], p[2] - pa[2]];
            let len2: f64 = d.iter().map(|x| x * x).sum();
            let t = (0..3).map(|i| w[i] * d[i]).sum::<f64>() / len2;
            if !(-1e-12..=1.0 + 1e-12).contains(&t) {
                return false;
            }
            (0..3).all(|i| (pa[i] + t * d[i] - p[i]).abs() < 1e-9)
        };
        on(m.vertex_pos(small.0)) && on(m.vertex_pos(small.1))
    }

    fn edge_len(m: &NCMesh, e: (u32, u32)) -> f64 {
        let (a, b) = (m.vertex_pos(e.0), m.vertex_pos(e.1));
        (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
    }

    /// Axis-aligned rectangle of a face: (normal axis, plane coord, 2D box).
    fn face_rect(m: &NCMesh, f: u32) -> (usize, f64, [f64; 4]) {
        let c: Vec<[f64; 3]> = m.face_corners(f).iter().map(|&v| m.vertex_pos(v)).collect();
        let axis = (0..3)
            .find(|&d| c.iter().all(|p| (p[d] - c[0][d]).abs() < 1e-12))
            .expect("corpus faces are axis-aligned");
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut box2 = [f64::MAX, f64::MAX, f64::MIN, f64::MIN];
        for p in &c {
            box2[0] = box2[0].min(p[u]);
            box2[1] = box2[1].min(p[v]);
            box2[2] = box2[2].max(p[u]);
            box2[3] = box2[3].max(p[v]);
        }
        (axis, c[0][axis], box2)
    }

    fn rect_contains(big: &[f64; 4], small: &[f64; 4]) -> bool {
        small[0] >= big[0] - 1e-12
            && small[1] >= big[1] - 1e-12
            && small[2] <= big[2] + 1e-12
            && small[3] <= big[3] + 1e-12
    }

    /// Brute-force O(n^2) containment classification: for every live entity,
    /// its smallest strictly-containing live entity (if any).
    fn oracle_slave_masters(m: &NCMesh) -> (HashMap<u32, u32>, HashMap<u32, u32>) {
        let mut edge_master: HashMap<u32, u32> = HashMap::new();
        let edges = m.edge_ids();
        for &s in &edges {
            let se = m.edge_endpoints(s);
            let mut best: Option<(f64, u32)> = None;
            for &b in &edges {
                if b == s {
                    continue;
                }
                let be = m.edge_endpoints(b);
                if edge_len(m, be) > edge_len(m, se) + 1e-12 && seg_contains(m, be, se) {
                    let l = edge_len(m, be);
                    if best.map(|(bl, _)| l < bl).unwrap_or(true) {
                        best = Some((l, b));
                    }
                }
            }
            if let Some((_, b)) = best {
                edge_master.insert(s, b);
            }
        }
        let mut face_master: HashMap<u32, u32> = HashMap::new();
        let faces = m.face_ids();
        for &s in &faces {
            let (sa, sc, sb) = face_rect(m, s);
            let area = |b: &[f64; 4]| (b[2] - b[0]) * (b[3] - b[1]);
            let mut best: Option<(f64, u32)> = None;
            for &b in &faces {
                if b == s {
                    continue;
                }
                let (ba, bc, bb) = face_rect(m, b);
                if ba == sa
                    && (bc - sc).abs() < 1e-12
                    && area(&bb) > area(&sb) + 1e-12
                    && rect_contains(&bb, &sb)
                {
                    let a = area(&bb);
                    if best.map(|(bl, _)| a < bl).unwrap_or(true) {
                        best = Some((a, b));
                    }
                }
            }
            if let Some((_, b)) = best {
                face_master.insert(s, b);
            }
        }
        (edge_master, face_master)
    }

    fn assert_matches_oracle(m: &NCMesh) {
        let ifc = build_interface_list(m).unwrap();
        let (edge_oracle, face_oracle) = oracle_slave_masters(m);

        for (classes, oracle) in [(&ifc.edges, &edge_oracle), (&ifc.faces, &face_oracle)] {
            let mut listed: HashMap<u32, u32> = HashMap::new();
            for mr in &classes.masters {
                for s in &mr.slaves {
                    let prev = listed.insert(s.entity, mr.entity);
                    assert!(prev.is_none(), "slave listed under two masters");
                }
            }
            assert_eq!(&listed, oracle, "slave→smallest-master maps must agree");
            let slaves: HashSet<u32> = classes.slaves.iter().copied().collect();
            assert_eq!(
                slaves,
                oracle.keys().copied().collect::<HashSet<u32>>(),
                "slave sets must agree"
            );
            // Conforming and boundary entities are never contained anywhere.
            for &c in classes.conforming.iter().chain(&classes.boundary) {
                assert!(!oracle.contains_key(&c));
            }
        }
        check_placements_geometrically(m, &ifc);
    }

    #[test]
    fn classification_matches_containment_oracle_on_fuzzed_meshes() {
        // [DERIVED] Random mixed iso/aniso refinement with consistency
        // repair; classification must equal brute-force geometric
        // containment on every intermediate mesh.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..12 {
            let (mut m, roots): (NCMesh, Vec<u32>) = if case % 2 == 0 {
                let (m, l, r) = two_quads();
                (m, vec![l, r])
            } else {
                let (m, a, b) = two_hexes();
                (m, vec![a, b])
            };
            let _ = roots;
            for _ in 0..10 {
                let leaves = m.leaves();
                if leaves.len() > 120 {
                    break;
                }
                let id = leaves[rng.gen_range(0..leaves.len())];
                let geom = m.element(id).unwrap().geom;
                let rts = geom.valid_ref_types();
                let rt = rts[rng.gen_range(0..rts.len())];
                m.refine(id, rt).unwrap();
                m.ensure_consistency().unwrap();
                assert_matches_oracle(&m);
            }
        }
    }

    #[test]
    fn triangle_mesh_edges_classify_like_quads() {
        // [DERIVED] Two triangles sharing a hypotenuse; refining one
        // isotropically hangs a vertex on the shared edge: 1 master with 2
        // slaves, matching the containment oracle.
        let mut m = NCMesh::new(2);
        let v0 = m.add_vertex([0.0, 0.0, 0.0]);
        let v1 = m.add_vertex([1.0, 0.0, 0.0]);
        let v2 = m.add_vertex([0.0, 1.0, 0.0]);
        let v3 = m.add_vertex([1.0, 1.0, 0.0]);
        let t0 = m.add_root(Geom::Tri, &[v0, v1, v2]).unwrap();
        let _t1 = m.add_root(Geom::Tri, &[v1, v3, v2]).unwrap();
        m.refine(t0, REF_XY).unwrap();
        let ifc = build_interface_list(&m).unwrap();
        assert_eq!(ifc.edges.masters.len(), 1);
        assert_eq!(ifc.edges.masters[0].slaves.len(), 2);
        assert_matches_oracle(&m);

        // Second level on the hypotenuse child: smallest-master chains.
        let kids = m.element(t0).unwrap().child_ids().to_vec();
        m.refine(kids[3], REF_XY).unwrap();
        assert_matches_oracle(&m);
    }

    #[test]
    fn deep_chain_matches_oracle_and_counts() {
        // [DERIVED] Repeatedly refining the child next to the shared edge
        // builds a 4-deep nest on the right.  The shared edge stays live, so
        // all its nested pieces are its *direct* slaves (depth 1 regardless
        // of nesting depth); only the horizontal interior masters whose
        // endpoints hang on the shared edge chain one level deeper, so the
        // estimate is exactly 2.
        let (mut m, _left, right) = two_quads();
        let mut cur = right;
        for _ in 0..4 {
            let kids = m.refine(cur, REF_XY).unwrap();
            // Child 0 sits at the shared edge's lower end (corner 1 side of
            // the left quad is corner 0 of the right quad).
            cur = kids[0];
        }
        assert_matches_oracle(&m);
        let est = entity_irregularity(&m).unwrap().unwrap();
        assert_eq!(est, 2);
        // The live shared edge carries the whole nest directly: 5 slave
        // pieces with exact dyadic endpoints 0, 1/16, 1/8, 1/4, 1/2, 1.
        let ifc = build_interface_list(&m).unwrap();
        let shared = ifc
            .edges
            .masters
            .iter()
            .max_by_key(|mr| mr.slaves.len())
            .unwrap();
        let mut cuts: Vec<f64> = shared
            .slaves
            .iter()
            .flat_map(|s| s.placement.iter().map(|p| p[0].to_f64()))
            .collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        assert_eq!(cuts, vec![0.0, 0.0625, 0.125, 0.25, 0.5, 1.0]);

        let forced = limit_irregularity(&mut m, 1).unwrap();
        assert!(!forced.is_empty());
        assert!(entity_irregularity(&m).unwrap().unwrap_or(99) <= 1);
        assert_matches_oracle(&m);
    }

    #[test]
    fn inconsistent_mesh_is_rejected() {
        // [DERIVED] Two hexes split along crossing axes share a face whose
        // pieces are not in a subset relation; classification must refuse.
        let (mut m, h0, h1) = two_hexes();
        m.refine(h0, REF_Y).unwrap();
        m.refine(h1, REF_Z).unwrap();
        match build_interface_list(&m) {
            Err(Error::InconsistentMesh(_)) => {}
            other => panic!("expected InconsistentMesh, got {:?}", other.map(|_| ())),
        }
        // After repair the classification succeeds and matches the
        // geometric containment oracle (the repair refines both sides to
        // matching quarter faces, so the interface becomes conforming).
        m.ensure_consistency().unwrap();
        assert_matches_oracle(&m);
    }

    #[test]
    fn unrefined_single_element_has_only_boundary() {
        // [TRIVIAL] One quad: all 4 edges boundary.
        let (m, _q) = unit_quad();
        let ifc = build_interface_list(&m).unwrap();
        assert_eq!(ifc.edges.boundary.len(), 4);
        assert!(ifc.edges.conforming.is_empty());
        assert!(ifc.edges.masters.is_empty());
        assert!(ifc.edges.slaves.is_empty());
    }
}
