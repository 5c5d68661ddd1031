//! Simulated-parallel construction of the conforming prolongation
//! operator.
//!
//! Each rank assembles the dependency matrix of its *local* mesh (owned
//! region + ghost layer), keeps the constraint rows of DOFs on owned
//! elements, and classifies every such DOF by ownership: the owner of a
//! DOF is the lowest rank whose owned elements carry it.  Owned true
//! DOFs are seeded as identity rows in a globally agreed column space
//! (rank-contiguous blocks in ascending rank order) and shipped to the
//! DOF's *group* — every rank holding any DOF of the same constraint
//! cluster.  Constrained rows resolve locally once all referenced rows
//! are known, and owners ship each resolved row to the group as well.
//!
//! Rows travel fully resolved and are addressed by node position, so
//! ranks never need to agree on entity numbering.  A received row may be
//! forwarded *once* to ranks missing from the sender's group view, which
//! happens when a constraint cluster spans more ranks than any single
//! rank sees; this is what makes indirect constraints across several
//! ranks resolvable.  The exchange runs in synchronous iterations until
//! every DOF of every owned element is resolved everywhere and no
//! message is in flight; an iteration that delivers nothing and resolves
//! nothing while DOFs remain unresolved is a deadlock (cyclic
//! constraints).

use std::collections::{BTreeSet, HashMap};

use crate::conforming::{assemble_dependencies, ConformingOperator};
use crate::error::Error;
use crate::fespace::FESpace;
use crate::interfaces::build_interface_list;
use crate::ncmesh::{NCMesh, NIL};
use crate::Result;

use super::codec::{Reader, Writer};
use super::transport::Transport;
use super::{RankMesh, MSG_P_ROWS};

/// Entries below this magnitude are dropped when combining rows.
const PRUNE_TOL: f64 = 1e-14;
/// Quantization cell edge for the position index.
const POS_CELL: f64 = 1e-6;
/// Two node positions within this distance are the same DOF.
const POS_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Position index
// ---------------------------------------------------------------------------

/// Node kind, used to disambiguate DOFs whose nodes coincide
/// geometrically: for even orders the center node of a master edge (or
/// face) sits exactly on the hanging vertex splitting it.  Nodes of the
/// *same* kind at the same position are always the same DOF on a
/// consistent mesh.
const KIND_VERTEX: u8 = 0;
const KIND_EDGE: u8 = 1;
const KIND_FACE: u8 = 2;
const KIND_INTERIOR: u8 = 3;

/// Kind of every DOF of a space, from the entity that carries it.
fn dof_kinds(mesh: &NCMesh, fes: &FESpace) -> Vec<u8> {
    let p = fes.order();
    let mut kinds = vec![KIND_INTERIOR; fes.num_dofs()];
    for v in mesh.vertex_ids() {
        if let Some(d) = fes.vertex_dof(v) {
            kinds[d] = KIND_VERTEX;
        }
    }
    if p >= 2 {
        for e in mesh.edge_ids() {
            if let Some(s) = fes.edge_dof_start(e) {
                for i in 0..p - 1 {
                    kinds[s + i] = KIND_EDGE;
                }
            }
        }
        if fes.dim() == 3 {
            for f in mesh.face_ids() {
                if let Some(s) = fes.face_dof_start(f) {
                    for i in 0..(p - 1) * (p - 1) {
                        kinds[s + i] = KIND_FACE;
                    }
                }
            }
        }
    }
    kinds
}

/// Hash grid over (node position, node kind); lookups scan the 27 cells
/// around the query's cell so matches survive quantization boundaries.
#[derive(Default)]
struct PosIndex {
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl PosIndex {
    fn key(p: [f64; 3]) -> [i64; 3] {
        [
            (p[0] / POS_CELL).round() as i64,
            (p[1] / POS_CELL).round() as i64,
            (p[2] / POS_CELL).round() as i64,
        ]
    }

    fn build(positions: &[[f64; 3]]) -> PosIndex {
        let mut idx = PosIndex::default();
        for i in 0..positions.len() {
            idx.insert(positions, i);
        }
        idx
    }

    fn insert(&mut self, positions: &[[f64; 3]], i: usize) {
        self.cells.entry(Self::key(positions[i])).or_default().push(i);
    }

    fn find(&self, positions: &[[f64; 3]], kinds: &[u8], p: [f64; 3], kind: u8) -> Option<usize> {
        let k = Self::key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(cell) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    for &i in cell {
                        if kinds[i] != kind {
                            continue;
                        }
                        let q = positions[i];
                        let d2 = (q[0] - p[0]).powi(2)
                            + (q[1] - p[1]).powi(2)
                            + (q[2] - p[2]).powi(2);
                        if d2 <= POS_TOL * POS_TOL {
                            return Some(i);
                        }
                    }
                }
            }
        }
        None
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

// ---------------------------------------------------------------------------
// Result block
// ---------------------------------------------------------------------------

/// One rank's slice of the distributed prolongation operator.
#[derive(Debug, Clone)]
pub struct RankPBlock {
    pub rank: u32,
    /// First global column owned by this rank.
    pub col_start: u64,
    /// Number of true DOFs (= columns) owned by this rank.
    pub num_true_owned: usize,
    /// Total number of true DOFs across all ranks.
    pub num_true_global: u64,
    /// Local DOF index behind each owned column: the `j`-th entry is
    /// global column `col_start + j`.
    pub true_dofs: Vec<u32>,
    /// Resolved operator rows, in global column space, for every DOF of
    /// an owned element; ascending by local DOF index.
    pub rows: Vec<(u32, Vec<(u64, f64)>)>,
    /// Node position of every local DOF.
    pub positions: Vec<[f64; 3]>,
    /// Carrier-entity kind of every local DOF (vertex/edge/face/interior);
    /// together with the position this identifies a DOF across ranks.
    pub kinds: Vec<u8>,
    /// Whether a local DOF lies on an owned element.
    pub region: Vec<bool>,
    /// Synchronous exchange iterations used.
    pub outer_iterations: usize,
}

// ---------------------------------------------------------------------------
// Row messages
// ---------------------------------------------------------------------------

struct RowMsg {
    pos: [f64; 3],
    kind: u8,
    forwarded: bool,
    /// Ranks known (by the sender) to be receiving this row.
    group: Vec<u32>,
    entries: Vec<(u64, f64)>,
}

fn encode_rows(rows: &[RowMsg]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(MSG_P_ROWS);
    w.u32(rows.len() as u32);
    for r in rows {
        w.f64(r.pos[0]);
        w.f64(r.pos[1]);
        w.f64(r.pos[2]);
        w.u8(r.kind);
        w.u8(u8::from(r.forwarded));
        w.u8(r.group.len() as u8);
        for &g in &r.group {
            w.u32(g);
        }
        w.u32(r.entries.len() as u32);
        for &(c, v) in &r.entries {
            w.u64(c);
            w.f64(v);
        }
    }
    w.take()
}

fn decode_rows(bytes: &[u8]) -> Result<Vec<RowMsg>> {
    let mut r = Reader::new(bytes);
    let tag = r.u8()?;
    if tag != MSG_P_ROWS {
        return Err(Error::Decode(format!("expected operator rows, got tag {tag}")));
    }
    let n = r.u32()?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let pos = [r.f64()?, r.f64()?, r.f64()?];
        let kind = r.u8()?;
        let forwarded = r.u8()? != 0;
        let glen = r.u8()?;
        let mut group = Vec::with_capacity(glen as usize);
        for _ in 0..glen {
            group.push(r.u32()?);
        }
        let nnz = r.u32()?;
        let mut entries = Vec::with_capacity(nnz as usize);
        for _ in 0..nnz {
            entries.push((r.u64()?, r.f64()?));
        }
        out.push(RowMsg { pos, kind, forwarded, group, entries });
    }
    if !r.done() {
        return Err(Error::Decode("trailing bytes after operator rows".into()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

struct RankState {
    rank: u32,
    positions: Vec<[f64; 3]>,
    kinds: Vec<u8>,
    index: PosIndex,
    region: Vec<bool>,
    owner: Vec<u32>,
    group: Vec<Vec<u32>>,
    dep_rows: HashMap<usize, Vec<(usize, f64)>>,
    resolved: HashMap<usize, Vec<(u64, f64)>>,
    true_dofs: Vec<u32>,
    col_start: u64,
    unresolved_region: BTreeSet<usize>,
    outbox: HashMap<u32, Vec<RowMsg>>,
}

impl RankState {
    fn stage_owned_row(&mut self, i: usize) {
        let row = self.resolved[&i].clone();
        for t in self.group[i].clone() {
            if t != self.rank {
                self.outbox.entry(t).or_default().push(RowMsg {
                    pos: self.positions[i],
                    kind: self.kinds[i],
                    forwarded: false,
                    group: self.group[i].clone(),
                    entries: row.clone(),
                });
            }
        }
    }

    /// Resolve everything currently resolvable from local rows; returns
    /// whether anything new resolved.
    fn local_sweeps(&mut self) -> bool {
        let mut any = false;
        loop {
            let mut newly: Vec<usize> = Vec::new();
            for (&i, row) in &self.dep_rows {
                if !self.resolved.contains_key(&i)
                    && row.iter().all(|(j, _)| self.resolved.contains_key(j))
                {
                    newly.push(i);
                }
            }
            if newly.is_empty() {
                return any;
            }
            newly.sort_unstable();
            for i in newly {
                let dep = self.dep_rows[&i].clone();
                let mut acc: HashMap<u64, f64> = HashMap::new();
                for (j, w) in dep {
                    for &(c, v) in &self.resolved[&j] {
                        *acc.entry(c).or_insert(0.0) += w * v;
                    }
                }
                let mut entries: Vec<(u64, f64)> =
                    acc.into_iter().filter(|&(_, v)| v.abs() > PRUNE_TOL).collect();
                entries.sort_by_key(|e| e.0);
                self.resolved.insert(i, entries);
                self.unresolved_region.remove(&i);
                if self.owner[i] == self.rank {
                    self.stage_owned_row(i);
                }
                any = true;
            }
        }
    }
}

/// Builds the prolongation operator block-by-block over the simulated
/// ranks.  `ranks` must hold a consistent distributed mesh; `p` is the
/// polynomial order.  Returns one [`RankPBlock`] per rank.
pub fn construct_parallel_p(
    ranks: &[RankMesh],
    p: usize,
    net: &mut Transport,
) -> Result<Vec<RankPBlock>> {
    let num_ranks = ranks.len();
    let mut states: Vec<RankState> = Vec::with_capacity(num_ranks);

    // Per-rank setup: local dependency matrix, ownership and groups.
    for rm in ranks {
        let fes = FESpace::new(&rm.mesh, p);
        let ifc = build_interface_list(&rm.mesh)?;
        let d = assemble_dependencies(&rm.mesh, &fes, &ifc)?;
        let n = fes.num_dofs();
        let positions = fes.dof_positions(&rm.mesh);
        let kinds = dof_kinds(&rm.mesh, &fes);
        let index = PosIndex::build(&positions);

        let mut region = vec![false; n];
        for l in rm.owned_leaves() {
            for dof in fes.element_dofs(&rm.mesh, l) {
                region[dof] = true;
            }
        }

        // Ranks whose owned elements carry each DOF.  Restricted to the
        // region this is the complete (global) holder set, because every
        // element touching an owned element is realized in the ghost
        // layer with its true owner.
        let mut holders: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
        for l in rm.mesh.dfs_leaves() {
            let r = rm.mesh.element(l).unwrap().rank;
            if r == NIL {
                continue;
            }
            for dof in fes.element_dofs(&rm.mesh, l) {
                holders[dof].insert(r);
            }
        }
        let owner: Vec<u32> =
            holders.iter().map(|h| h.iter().next().copied().unwrap_or(NIL)).collect();

        // Constraint clusters: each master record ties the closure DOFs
        // of the master entity and all of its slaves together.
        let mut uf = UnionFind::new(n);
        for m in &ifc.edges.masters {
            let (mdofs, _) = fes.edge_closure(&rm.mesh, m.entity);
            let anchor = mdofs[0];
            for &d2 in &mdofs {
                uf.union(anchor, d2);
            }
            for s in &m.slaves {
                let (sdofs, _) = fes.edge_closure(&rm.mesh, s.entity);
                for &d2 in &sdofs {
                    uf.union(anchor, d2);
                }
            }
        }
        for m in &ifc.faces.masters {
            let (mdofs, _) = fes.face_closure(&rm.mesh, m.entity);
            let anchor = mdofs[0];
            for &d2 in &mdofs {
                uf.union(anchor, d2);
            }
            for s in &m.slaves {
                let (sdofs, _) = fes.face_closure(&rm.mesh, s.entity);
                for &d2 in &sdofs {
                    uf.union(anchor, d2);
                }
            }
        }
        let mut class_ranks: HashMap<usize, BTreeSet<u32>> = HashMap::new();
        for i in 0..n {
            class_ranks.entry(uf.find(i)).or_default().extend(holders[i].iter().copied());
        }
        let group: Vec<Vec<u32>> =
            (0..n).map(|i| class_ranks[&uf.find(i)].iter().copied().collect()).collect();

        // Keep constraint rows only for region DOFs: outside the region
        // the local mesh's pruned stubs can fake interfaces that do not
        // exist globally.
        let dep_rows: HashMap<usize, Vec<(usize, f64)>> = d
            .slave_rows()
            .filter(|(i, _)| region[*i])
            .map(|(i, r)| (i, r.to_vec()))
            .collect();

        let true_dofs: Vec<u32> = (0..n)
            .filter(|&i| region[i] && !dep_rows.contains_key(&i) && owner[i] == rm.rank)
            .map(|i| i as u32)
            .collect();
        let unresolved_region: BTreeSet<usize> = (0..n).filter(|&i| region[i]).collect();

        states.push(RankState {
            rank: rm.rank,
            positions,
            kinds,
            index,
            region,
            owner,
            group,
            dep_rows,
            resolved: HashMap::new(),
            true_dofs,
            col_start: 0,
            unresolved_region,
            outbox: HashMap::new(),
        });
    }

    // Exclusive scan over owned true counts fixes the global columns.
    let mut col_start = 0u64;
    for st in &mut states {
        st.col_start = col_start;
        col_start += st.true_dofs.len() as u64;
    }
    let num_true_global = col_start;

    // Seed identity rows and ship them to each DOF's group.
    for st in &mut states {
        for j in 0..st.true_dofs.len() {
            let i = st.true_dofs[j] as usize;
            st.resolved.insert(i, vec![(st.col_start + j as u64, 1.0)]);
            st.unresolved_region.remove(&i);
            st.stage_owned_row(i);
        }
        st.local_sweeps();
        flush_outbox(st, net);
    }

    // Synchronous exchange until every region DOF is resolved everywhere
    // and the transport is quiescent.
    let mut iterations = 0usize;
    loop {
        if states.iter().all(|st| st.unresolved_region.is_empty()) && net.quiescent() {
            break;
        }
        let delivered_before = net.delivered;
        net.begin_iteration();
        iterations += 1;
        let mut progress = false;
        for k in 0..num_ranks {
            let msgs = net.recv_all(k as u32);
            let st = &mut states[k];
            for (src, bytes) in msgs {
                for row in decode_rows(&bytes)? {
                    let Some(i) = st.index.find(&st.positions, &st.kinds, row.pos, row.kind)
                    else {
                        // Group routing is cluster-wide, so a rank can
                        // receive rows for DOFs it never sees.
                        continue;
                    };
                    if !row.forwarded {
                        let known: BTreeSet<u32> = row.group.iter().copied().collect();
                        let mine: BTreeSet<u32> = st.group[i].iter().copied().collect();
                        let targets: Vec<u32> = mine
                            .iter()
                            .copied()
                            .filter(|t| !known.contains(t) && *t != st.rank && *t != src)
                            .collect();
                        if !targets.is_empty() {
                            let merged: Vec<u32> = known.union(&mine).copied().collect();
                            for t in targets {
                                st.outbox.entry(t).or_default().push(RowMsg {
                                    pos: row.pos,
                                    kind: row.kind,
                                    forwarded: true,
                                    group: merged.clone(),
                                    entries: row.entries.clone(),
                                });
                            }
                        }
                    }
                    if st.resolved.contains_key(&i) {
                        continue;
                    }
                    st.resolved.insert(i, row.entries);
                    st.unresolved_region.remove(&i);
                    progress = true;
                }
            }
            progress |= st.local_sweeps();
            flush_outbox(st, net);
        }
        let delivered = net.delivered - delivered_before;
        if !progress && delivered == 0 && net.pending() == 0 {
            let stalled =
                states.iter().filter(|st| !st.unresolved_region.is_empty()).count();
            return Err(Error::Deadlock(stalled));
        }
    }

    Ok(states
        .into_iter()
        .map(|st| {
            let rows: Vec<(u32, Vec<(u64, f64)>)> = (0..st.positions.len())
                .filter(|&i| st.region[i])
                .map(|i| (i as u32, st.resolved[&i].clone()))
                .collect();
            RankPBlock {
                rank: st.rank,
                col_start: st.col_start,
                num_true_owned: st.true_dofs.len(),
                num_true_global,
                true_dofs: st.true_dofs,
                rows,
                positions: st.positions,
                kinds: st.kinds,
                region: st.region,
                outer_iterations: iterations,
            }
        })
        .collect())
}

fn flush_outbox(st: &mut RankState, net: &mut Transport) {
    let outbox = std::mem::take(&mut st.outbox);
    let mut dsts: Vec<u32> = outbox.keys().copied().collect();
    dsts.sort_unstable();
    for dst in dsts {
        let rows = &outbox[&dst];
        let fwd = rows.iter().filter(|r| r.forwarded).count();
        net.send(st.rank, dst, encode_rows(rows), rows.len(), fwd);
    }
}

// ---------------------------------------------------------------------------
// Stacking and comparison against the serial operator
// ---------------------------------------------------------------------------

/// Largest absolute difference between two rows in global column space.
fn row_diff(a: &[(u64, f64)], b: &[(u64, f64)]) -> f64 {
    let mut diff: f64 = 0.0;
    let (mut ia, mut ib) = (0, 0);
    while ia < a.len() || ib < b.len() {
        let ca = a.get(ia).map_or(u64::MAX, |e| e.0);
        let cb = b.get(ib).map_or(u64::MAX, |e| e.0);
        if ca < cb {
            diff = diff.max(a[ia].1.abs());
            ia += 1;
        } else if cb < ca {
            diff = diff.max(b[ib].1.abs());
            ib += 1;
        } else {
            diff = diff.max((a[ia].1 - b[ib].1).abs());
            ia += 1;
            ib += 1;
        }
    }
    diff
}

/// Merges per-rank blocks into one operator keyed by (node position,
/// node kind).  Rows reported by several ranks must agree to `1e-12`.
pub fn stack_p_blocks(
    blocks: &[RankPBlock],
) -> Result<Vec<([f64; 3], u8, Vec<(u64, f64)>)>> {
    let mut out: Vec<([f64; 3], u8, Vec<(u64, f64)>)> = Vec::new();
    let mut positions: Vec<[f64; 3]> = Vec::new();
    let mut kinds: Vec<u8> = Vec::new();
    let mut index = PosIndex::default();
    for b in blocks {
        for (dof, row) in &b.rows {
            let pos = b.positions[*dof as usize];
            let kind = b.kinds[*dof as usize];
            match index.find(&positions, &kinds, pos, kind) {
                Some(at) => {
                    let d = row_diff(&out[at].2, row);
                    if d > 1e-12 {
                        return Err(Error::InconsistentMesh(format!(
                            "ranks disagree by {d:.3e} on the operator row at \
                             ({}, {}, {})",
                            pos[0], pos[1], pos[2]
                        )));
                    }
                }
                None => {
                    positions.push(pos);
                    kinds.push(kind);
                    index.insert(&positions, positions.len() - 1);
                    out.push((pos, kind, row.clone()));
                }
            }
        }
    }
    Ok(out)
}

/// Compares the stacked distributed operator against the serial one on
/// the same (serial) mesh: every serial DOF must be covered and every
/// entry must match once the global columns are permuted onto the serial
/// true-DOF columns.  Returns the largest absolute entry difference.
pub fn max_diff_vs_serial(
    mesh: &NCMesh,
    space: &FESpace,
    op: &ConformingOperator,
    blocks: &[RankPBlock],
) -> Result<f64> {
    let serial_pos = space.dof_positions(mesh);
    let serial_kinds = dof_kinds(mesh, space);
    let index = PosIndex::build(&serial_pos);

    // Global column -> serial column, via the owning rank's node
    // position of the column's true DOF.
    let num_cols: u64 = blocks.iter().map(|b| b.num_true_owned as u64).sum();
    if num_cols != op.num_true_dofs() as u64 {
        return Err(Error::InconsistentMesh(format!(
            "distributed operator has {num_cols} columns, serial has {}",
            op.num_true_dofs()
        )));
    }
    let mut col_map: HashMap<u64, u64> = HashMap::new();
    for b in blocks {
        for (j, dof) in b.true_dofs.iter().enumerate() {
            let pos = b.positions[*dof as usize];
            let kind = b.kinds[*dof as usize];
            let sdof =
                index.find(&serial_pos, &serial_kinds, pos, kind).ok_or_else(|| {
                    Error::InconsistentMesh(format!(
                        "no serial DOF at ({}, {}, {})",
                        pos[0], pos[1], pos[2]
                    ))
                })?;
            let scol = op.true_col(sdof).ok_or_else(|| {
                Error::InconsistentMesh(format!(
                    "serial DOF {sdof} is constrained but owns a distributed column"
                ))
            })?;
            col_map.insert(b.col_start + j as u64, scol as u64);
        }
    }

    let stacked = stack_p_blocks(blocks)?;
    if stacked.len() != space.num_dofs() {
        return Err(Error::InconsistentMesh(format!(
            "distributed operator covers {} DOFs, serial space has {}",
            stacked.len(),
            space.num_dofs()
        )));
    }
    let mut diff: f64 = 0.0;
    for (pos, kind, row) in &stacked {
        let sdof =
            index.find(&serial_pos, &serial_kinds, *pos, *kind).ok_or_else(|| {
                Error::InconsistentMesh(format!(
                    "no serial DOF at ({}, {}, {})",
                    pos[0], pos[1], pos[2]
                ))
            })?;
        let mut mapped: Vec<(u64, f64)> =
            row.iter().map(|&(c, v)| (col_map[&c], v)).collect();
        mapped.sort_by_key(|e| e.0);
        let (cols, vals) = op.matrix().row(sdof);
        let serial_row: Vec<(u64, f64)> =
            cols.iter().zip(vals).map(|(&c, &v)| (c as u64, v)).collect();
        diff = diff.max(row_diff(&mapped, &serial_row));
    }
    Ok(diff)
}
