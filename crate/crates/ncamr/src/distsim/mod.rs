//! Deterministic simulated multi-rank mesh engine.
//!
//! Every simulated rank holds a *pruned* copy of the global refinement
//! forest: the elements it owns, a minimal ghost layer of remote
//! neighbors enclosing them, and collapsed stubs everywhere else.  All
//! cross-rank communication happens through byte messages over an
//! in-memory [`Transport`], and elements are addressed structurally
//! (root ordinal + child-slot path) so that ranks with different local
//! id assignments can talk about the same global element.
//!
//! Rank bookkeeping lives in `Element::rank`:
//!
//! * owned leaves carry the local rank,
//! * ghost-layer leaves carry their owner's rank,
//! * every other leaf (pruned stubs and incidentally retained siblings)
//!   carries [`NIL`], meaning "not a real global leaf / not tracked".
//!
//! This makes the canonical replay text of a rank's mesh depend only on
//! the distributed state, so "equals a fresh [`distribute`] of the same
//! serial mesh" can be tested as string equality.

pub mod codec;
mod parallel_p;
pub mod transport;

pub use parallel_p::{construct_parallel_p, max_diff_vs_serial, stack_p_blocks, RankPBlock};
pub use transport::{TraceRow, Transport};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::error::Error;
use crate::meshio::save_mesh;
use crate::ncmesh::{NCMesh, NIL};
use crate::partition::{equipartition, sfc_enumerate, SfcCurve};
use crate::Result;

use codec::{decode_element_set, encode_element_set, Reader, Writer};

const MSG_REFINE: u8 = 1;
const MSG_NEW_RANKS: u8 = 2;
const MSG_MIGRATE: u8 = 3;
pub(crate) const MSG_P_ROWS: u8 = 4;

// ---------------------------------------------------------------------------
// RankMesh
// ---------------------------------------------------------------------------

/// One simulated rank's view of the distributed mesh.
#[derive(Debug, Clone)]
pub struct RankMesh {
    pub rank: u32,
    pub num_ranks: u32,
    /// The space-filling curve the partition was built with.
    pub curve: SfcCurve,
    /// Local pruned mesh: owned region + ghost layer + stubs.
    pub mesh: NCMesh,
}

impl RankMesh {
    /// Leaves owned by this rank, in depth-first order.
    pub fn owned_leaves(&self) -> Vec<u32> {
        self.mesh
            .dfs_leaves()
            .into_iter()
            .filter(|&l| self.mesh.element(l).unwrap().rank == self.rank)
            .collect()
    }

    /// The ghost layer: real remote leaves that are vertex/edge/face
    /// neighbors of an owned leaf, in depth-first order.
    pub fn ghost_leaves(&self) -> Vec<u32> {
        let owned: HashSet<u32> = self.owned_leaves().into_iter().collect();
        let exp = neighbor_expansion(&self.mesh, &owned);
        self.mesh.dfs_leaves().into_iter().filter(|l| exp.contains(l)).collect()
    }

    /// Owned leaves that touch the ghost layer; any change to them must
    /// be broadcast to the neighbors that mirror them.
    pub fn boundary_leaves(&self) -> Vec<u32> {
        let ghosts: HashSet<u32> = self.ghost_leaves().into_iter().collect();
        let exp = neighbor_expansion(&self.mesh, &ghosts);
        self.mesh
            .dfs_leaves()
            .into_iter()
            .filter(|l| exp.contains(l) && self.mesh.element(*l).unwrap().rank == self.rank)
            .collect()
    }

    /// Ranks owning at least one ghost leaf, ascending.
    pub fn neighbor_ranks(&self) -> Vec<u32> {
        let mut set = BTreeSet::new();
        for g in self.ghost_leaves() {
            set.insert(self.mesh.element(g).unwrap().rank);
        }
        set.into_iter().collect()
    }

    /// Canonical replay text of the local mesh (structure + leaf ranks).
    pub fn canonical_text(&self) -> String {
        save_mesh(&self.mesh)
    }

    /// Structural path of a local element: root ordinal plus child slots.
    pub fn element_path(&self, id: u32) -> String {
        element_path(&self.mesh, id)
    }

    /// Per-rank consistency checks: rank fields are canonical and stubs
    /// are strictly outside the owned region's neighborhood.
    pub fn check_invariants(&self) -> Result<()> {
        let owned: HashSet<u32> = self.owned_leaves().into_iter().collect();
        let ghosts: HashSet<u32> = self.ghost_leaves().into_iter().collect();
        for &g in &ghosts {
            let r = self.mesh.element(g).unwrap().rank;
            if r == NIL || r == self.rank || r >= self.num_ranks {
                return Err(Error::InconsistentMesh(format!(
                    "ghost leaf {g} of rank {} has owner {r}",
                    self.rank
                )));
            }
        }
        for l in self.mesh.dfs_leaves() {
            let r = self.mesh.element(l).unwrap().rank;
            let tracked = owned.contains(&l) || ghosts.contains(&l);
            if tracked && r == NIL {
                return Err(Error::InconsistentMesh(format!("tracked leaf {l} has no owner")));
            }
            if !tracked && r != NIL {
                return Err(Error::InconsistentMesh(format!(
                    "leaf {l} beyond the ghost layer still carries rank {r}"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Ghost discovery and pruning
// ---------------------------------------------------------------------------

/// All leaves outside `set` that share at least one boundary-closure
/// vertex (corner or hanging vertex) with a member of `set`.  This is the
/// vertex/edge/face neighbor relation, so applied to an owned region it
/// yields exactly the minimal enclosing ghost layer.
pub fn neighbor_expansion(mesh: &NCMesh, set: &HashSet<u32>) -> HashSet<u32> {
    let input: Vec<u32> = set.iter().copied().collect();
    mesh.expand_neighbors(&input).into_iter().filter(|l| !set.contains(l)).collect()
}

/// Collapses every subtree that contains no leaf from `keep`, as high up
/// the forest as possible.  Kept leaves and their ancestors keep their
/// ids; collapsed regions turn into single coarse leaves ("stubs").
fn prune_to_keep(mesh: &mut NCMesh, keep: &HashSet<u32>) {
    fn has_kept(mesh: &NCMesh, id: u32, keep: &HashSet<u32>) -> bool {
        let e = mesh.element(id).unwrap();
        if e.is_leaf() {
            keep.contains(&id)
        } else {
            e.child_ids().to_vec().iter().any(|&c| has_kept(mesh, c, keep))
        }
    }
    fn collapse(mesh: &mut NCMesh, id: u32) {
        let kids: Vec<u32> = match mesh.element(id) {
            Some(e) if !e.is_leaf() => e.child_ids().to_vec(),
            _ => return,
        };
        for c in kids {
            collapse(mesh, c);
        }
        mesh.coarsen(id).expect("collapsing an empty subtree");
    }
    fn walk(mesh: &mut NCMesh, id: u32, keep: &HashSet<u32>) {
        if mesh.element(id).unwrap().is_leaf() {
            return;
        }
        if !has_kept(mesh, id, keep) {
            collapse(mesh, id);
            return;
        }
        for c in mesh.element(id).unwrap().child_ids().to_vec() {
            walk(mesh, c, keep);
        }
    }
    for root in mesh.roots().to_vec() {
        walk(mesh, root, keep);
    }
}

/// Sets canonical leaf ranks: leaves in neither `owned` nor the ghost
/// layer are marked [`NIL`].  `owned` and ghost leaves must already carry
/// correct ranks.
fn canonicalize_ranks(mesh: &mut NCMesh, rank: u32) {
    let owned: HashSet<u32> = mesh
        .dfs_leaves()
        .into_iter()
        .filter(|&l| mesh.element(l).unwrap().rank == rank)
        .collect();
    let ghosts = neighbor_expansion(mesh, &owned);
    for l in mesh.dfs_leaves() {
        if !owned.contains(&l) && !ghosts.contains(&l) {
            mesh.set_rank(l, NIL);
        }
    }
}

fn leaf_descendants(mesh: &NCMesh, id: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut stack = vec![id];
    while let Some(e) = stack.pop() {
        let el = mesh.element(e).expect("dead element");
        if el.is_leaf() {
            out.push(e);
        } else {
            stack.extend(el.child_ids().iter().copied());
        }
    }
    out
}

/// Ids of all refined (interior) tree nodes.
fn refined_ids(mesh: &NCMesh) -> HashSet<u32> {
    let mut out = HashSet::new();
    let mut stack: Vec<u32> = mesh.roots().to_vec();
    while let Some(e) = stack.pop() {
        let el = mesh.element(e).expect("dead element");
        if !el.is_leaf() {
            out.insert(e);
            stack.extend(el.child_ids().iter().copied());
        }
    }
    out
}

fn element_path(mesh: &NCMesh, id: u32) -> String {
    let (ordinal, path) = mesh.element_address(id);
    let mut s = ordinal.to_string();
    for slot in path {
        s.push('/');
        s.push_str(&slot.to_string());
    }
    s
}

// ---------------------------------------------------------------------------
// distribute
// ---------------------------------------------------------------------------

/// Partitions `mesh` over `num_ranks` simulated ranks along `curve`:
/// assigns `Element::rank` on the serial mesh via contiguous
/// equipartition of the SFC sequence, then builds each rank's pruned
/// local copy with its ghost layer.
pub fn distribute(mesh: &mut NCMesh, num_ranks: u32, curve: SfcCurve) -> Result<Vec<RankMesh>> {
    let seq = sfc_enumerate(mesh, curve)?;
    let assignment = equipartition(&seq, num_ranks as usize);
    for &leaf in &seq {
        mesh.set_rank(leaf, assignment.rank_of(leaf).unwrap() as u32);
    }
    build_rank_meshes(mesh, num_ranks, curve)
}

/// Like [`distribute`] but with an arbitrary caller-supplied assignment
/// (useful for constructing unbalanced or adversarial ownerships).
pub fn distribute_assigned(
    mesh: &mut NCMesh,
    num_ranks: u32,
    curve: SfcCurve,
    rank_of: &dyn Fn(u32) -> u32,
) -> Result<Vec<RankMesh>> {
    for leaf in mesh.dfs_leaves() {
        let r = rank_of(leaf);
        assert!(r < num_ranks, "assignment rank out of range");
        mesh.set_rank(leaf, r);
    }
    build_rank_meshes(mesh, num_ranks, curve)
}

/// Builds the per-rank pruned copies from the ranks already present on
/// the serial mesh.  This is also the "gold" reference for the
/// distributed update operations: their post-state must equal a fresh
/// rebuild from the equivalently updated serial mesh.
pub fn build_rank_meshes(mesh: &NCMesh, num_ranks: u32, curve: SfcCurve) -> Result<Vec<RankMesh>> {
    assert!(num_ranks >= 1, "need at least one rank");
    let leaves = mesh.dfs_leaves();
    for &l in &leaves {
        let r = mesh.element(l).unwrap().rank;
        if r >= num_ranks {
            return Err(Error::InconsistentMesh(format!(
                "leaf {l} carries rank {r} outside 0..{num_ranks}"
            )));
        }
    }
    let mut out = Vec::with_capacity(num_ranks as usize);
    for k in 0..num_ranks {
        let mut local = mesh.clone();
        let owned: HashSet<u32> =
            leaves.iter().copied().filter(|&l| mesh.element(l).unwrap().rank == k).collect();
        let ghosts = neighbor_expansion(&local, &owned);
        let keep: HashSet<u32> = owned.union(&ghosts).copied().collect();
        prune_to_keep(&mut local, &keep);
        canonicalize_ranks(&mut local, k);
        out.push(RankMesh { rank: k, num_ranks, curve, mesh: local });
    }
    Ok(out)
}

/// Cross-rank structural checks: per-rank invariants, disjoint coverage
/// of the global leaves, and ghost synchrony (a ghost copy has the same
/// tree path, shape, and owner as the owner's copy).
pub fn check_partition(ranks: &[RankMesh]) -> Result<()> {
    let mut owned_paths: BTreeMap<String, u32> = BTreeMap::new();
    for rm in ranks {
        rm.check_invariants()?;
        for l in rm.owned_leaves() {
            let p = rm.element_path(l);
            if let Some(prev) = owned_paths.insert(p.clone(), rm.rank) {
                return Err(Error::InconsistentMesh(format!(
                    "leaf {p} owned by both rank {prev} and rank {}",
                    rm.rank
                )));
            }
        }
    }
    for rm in ranks {
        for g in rm.ghost_leaves() {
            let owner = rm.mesh.element(g).unwrap().rank;
            let path = rm.element_path(g);
            match owned_paths.get(&path) {
                Some(&r) if r == owner => {}
                Some(&r) => {
                    return Err(Error::InconsistentMesh(format!(
                        "rank {} believes {path} is owned by {owner}, but {r} owns it",
                        rm.rank
                    )))
                }
                None => {
                    return Err(Error::InconsistentMesh(format!(
                        "rank {} ghost {path} is not owned as a leaf by any rank",
                        rm.rank
                    )))
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Distributed refinement
// ---------------------------------------------------------------------------

/// Applies per-rank refinement requests, broadcasting boundary-layer
/// refinements (including consistency repairs) to the neighbors that
/// mirror the refined elements, until the whole simulated machine is
/// quiescent.  Afterwards each rank's state equals a fresh
/// [`build_rank_meshes`] of the equivalently refined serial mesh.
pub fn refine_distributed(
    ranks: &mut [RankMesh],
    net: &mut Transport,
    marked: &[Vec<(u32, u8)>],
) -> Result<()> {
    let num_ranks = ranks.len();
    assert_eq!(marked.len(), num_ranks, "one marked set per rank");

    // Pending refinements per rank.  Local requests (marked or
    // consistency-forced on owned leaves) are broadcast; received
    // mirrors are not.  Mirror addresses are resolved only when applied,
    // because a mirrored child may arrive in the same message as the
    // refinement creating it.
    enum Target {
        Local(u32),
        Mirror { ordinal: u32, path: Vec<u8>, src: u32 },
    }
    struct Pending {
        target: Target,
        ref_type: u8,
    }
    let mut pending: Vec<Vec<Pending>> = Vec::with_capacity(num_ranks);
    for (k, marks) in marked.iter().enumerate() {
        let rm = &ranks[k];
        let owned: HashSet<u32> = rm.owned_leaves().into_iter().collect();
        let mut v = Vec::new();
        for &(el, rt) in marks {
            if !owned.contains(&el) {
                return Err(Error::InconsistentMesh(format!(
                    "rank {k} may only refine its own leaves, {el} is not owned"
                )));
            }
            v.push(Pending { target: Target::Local(el), ref_type: rt });
        }
        pending.push(v);
    }

    loop {
        net.begin_iteration();
        let mut any_work = false;

        for k in 0..num_ranks {
            // Receive refinement mirrors queued by neighbors last round.
            // Records are ordered parents-first, so an address either
            // resolves against already-applied structure or the protocol
            // was violated.
            for (src, bytes) in net.recv_all(k as u32) {
                let mut r = Reader::new(&bytes);
                let tag = r.u8()?;
                if tag != MSG_REFINE {
                    return Err(Error::Decode(format!(
                        "rank {k} expected a refinement message from {src}, got tag {tag}"
                    )));
                }
                let n = r.u32()?;
                for _ in 0..n {
                    let ordinal = r.u32()?;
                    let plen = r.u8()? as usize;
                    let mut path = Vec::with_capacity(plen);
                    for _ in 0..plen {
                        path.push(r.u8()?);
                    }
                    let rt = r.u8()?;
                    pending[k].push(Pending {
                        target: Target::Mirror { ordinal, path, src },
                        ref_type: rt,
                    });
                }
            }

            if pending[k].is_empty() {
                continue;
            }
            any_work = true;

            let rank = ranks[k].rank;
            let mesh = &mut ranks[k].mesh;
            let mut to_broadcast: Vec<u32> = Vec::new();
            for p in std::mem::take(&mut pending[k]) {
                let (el, broadcast) = match p.target {
                    Target::Local(el) => (el, true),
                    Target::Mirror { ordinal, ref path, src } => {
                        let el = mesh.resolve_address(ordinal, path).ok_or_else(|| {
                            Error::InconsistentMesh(format!(
                                "rank {k} cannot resolve mirrored element {ordinal}/{path:?} \
                                 from rank {src}"
                            ))
                        })?;
                        let owner = mesh.element(el).unwrap().rank;
                        if owner != src {
                            return Err(Error::InconsistentMesh(format!(
                                "rank {src} refined element {ordinal}/{path:?}, which rank {k} \
                                 attributes to rank {owner}"
                            )));
                        }
                        (el, false)
                    }
                };
                let e = mesh.element(el).ok_or(Error::BadElement(el))?;
                if !e.is_leaf() {
                    if e.ref_type() == Some(p.ref_type) {
                        continue; // duplicate mirror of a known refinement
                    }
                    return Err(Error::InconsistentMesh(format!(
                        "element {el} already refined with a different type"
                    )));
                }
                mesh.refine(el, p.ref_type)?;
                if broadcast {
                    to_broadcast.push(el);
                }
            }

            // Local consistency repair; forced refinements of owned
            // elements (including children born during the repair) must
            // be broadcast like explicit ones.  A repair in a pruned
            // region would mean the ghost layer failed to expose the
            // conflict and the simulation has diverged.
            let before_refined = refined_ids(mesh);
            mesh.ensure_consistency()?;
            let mesh = &ranks[k].mesh;
            for el in refined_ids(mesh).difference(&before_refined) {
                match mesh.element(*el).unwrap().rank {
                    r if r == rank => to_broadcast.push(*el),
                    NIL => {
                        return Err(Error::InconsistentMesh(format!(
                            "consistency repair refined pruned element {el} on rank {rank}"
                        )))
                    }
                    _ => {} // ghost mirror; its owner repairs and broadcasts
                }
            }

            // Queue one message per neighbor that mirrors any refined
            // element (i.e. owns a leaf adjacent to its region), with the
            // records ordered parents-first.
            if !to_broadcast.is_empty() {
                let mut per_dst: BTreeMap<u32, Vec<(u32, Vec<u8>, u8)>> = BTreeMap::new();
                for &el in &to_broadcast {
                    let rt = mesh.element(el).unwrap().ref_type().unwrap();
                    let desc: HashSet<u32> = leaf_descendants(mesh, el).into_iter().collect();
                    let (ordinal, path) = mesh.element_address(el);
                    for nb in neighbor_expansion(mesh, &desc) {
                        let owner = mesh.element(nb).unwrap().rank;
                        if owner != NIL && owner != rank {
                            per_dst
                                .entry(owner)
                                .or_default()
                                .push((ordinal, path.clone(), rt));
                        }
                    }
                }
                for (dst, mut recs) in per_dst {
                    recs.sort();
                    recs.dedup();
                    let mut w = Writer::new();
                    w.u8(MSG_REFINE);
                    w.u32(recs.len() as u32);
                    for (ordinal, path, rt) in &recs {
                        w.u32(*ordinal);
                        w.u8(path.len() as u8);
                        for &b in path {
                            w.u8(b);
                        }
                        w.u8(*rt);
                    }
                    let n = recs.len();
                    net.send(rank, dst, w.take(), n, 0);
                }
            }
        }

        if !any_work && net.pending() == 0 {
            break;
        }
    }

    // Re-establish minimal ghost layers and pruning.
    for rm in ranks.iter_mut() {
        let owned: HashSet<u32> = rm.owned_leaves().into_iter().collect();
        let ghosts = neighbor_expansion(&rm.mesh, &owned);
        let keep: HashSet<u32> = owned.union(&ghosts).copied().collect();
        prune_to_keep(&mut rm.mesh, &keep);
        canonicalize_ranks(&mut rm.mesh, rm.rank);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Load balancing
// ---------------------------------------------------------------------------

/// One entry of the migration report: `elements` leaves moved from rank
/// `from` to rank `to`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationRecord {
    pub from: u32,
    pub to: u32,
    pub elements: usize,
}

/// Rebalances ownership so every rank ends with `n/K` or `n/K + 1`
/// leaves, preserving the global SFC order.  New assignments are
/// computed from a simulated scan of per-rank counts, communicated
/// within the ghost layers, and elements are migrated together with a
/// layer of ghosts so each receiver can rebuild a valid local state.
/// Afterwards each rank's state equals a fresh [`distribute`] of the
/// same serial mesh.
pub fn load_balance(ranks: &mut [RankMesh], net: &mut Transport) -> Result<Vec<MigrationRecord>> {
    let num_ranks = ranks.len();
    let curve = ranks[0].curve;

    // Simulated MPI_Scan: global SFC offsets of each rank's contiguous
    // owned range, plus the target chunk sizes.
    let counts: Vec<usize> = ranks.iter().map(|rm| rm.owned_leaves().len()).collect();
    let total: usize = counts.iter().sum();
    let base = total / num_ranks;
    let extra = total % num_ranks;
    let targets: Vec<usize> =
        (0..num_ranks).map(|r| base + usize::from(r < extra)).collect();
    if counts == targets {
        return Ok(Vec::new());
    }
    let mut chunk_start = vec![0usize; num_ranks + 1];
    for r in 0..num_ranks {
        chunk_start[r + 1] = chunk_start[r] + targets[r];
    }
    let new_rank_of_pos = |g: usize| -> u32 {
        chunk_start.partition_point(|&s| s <= g) as u32 - 1
    };
    let mut scan_start = vec![0usize; num_ranks];
    for r in 1..num_ranks {
        scan_start[r] = scan_start[r - 1] + counts[r - 1];
    }

    // Phase 1 (local): new rank of every owned leaf from its global SFC
    // position.
    let mut new_rank: Vec<HashMap<u32, u32>> = vec![HashMap::new(); num_ranks];
    for (k, rm) in ranks.iter().enumerate() {
        if counts[k] == 0 {
            continue;
        }
        let seq = sfc_enumerate(&rm.mesh, curve)?;
        let mut pos = scan_start[k];
        for l in seq {
            if rm.mesh.element(l).unwrap().rank == rm.rank {
                new_rank[k].insert(l, new_rank_of_pos(pos));
                pos += 1;
            }
        }
        debug_assert_eq!(pos, scan_start[k] + counts[k]);
    }

    // Phase 2: tell each neighbor the new ranks of the leaves it mirrors.
    net.begin_iteration();
    for (k, rm) in ranks.iter().enumerate() {
        let ghosts: HashSet<u32> = rm.ghost_leaves().into_iter().collect();
        let mut per_dst: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for &b in &rm.boundary_leaves() {
            let mut single = HashSet::new();
            single.insert(b);
            for nb in neighbor_expansion(&rm.mesh, &single) {
                if ghosts.contains(&nb) {
                    let owner = rm.mesh.element(nb).unwrap().rank;
                    per_dst.entry(owner).or_default().insert(b);
                }
            }
        }
        for (dst, els) in per_dst {
            let els: Vec<u32> = els.into_iter().collect();
            let mut w = Writer::new();
            w.u8(MSG_NEW_RANKS);
            let order = encode_element_set(&rm.mesh, &els, &mut w)?;
            let n = order.len();
            for el in order {
                w.u32(new_rank[k][&el]);
            }
            net.send(rm.rank, dst, w.take(), n, 0);
        }
    }

    // Phase 3: receive neighbor updates, then send migrations: the
    // emigrant leaves plus a layer of ghost elements around them, each
    // ghost tagged with its new owner.
    net.begin_iteration();
    let mut ghost_new_rank: Vec<HashMap<u32, u32>> = vec![HashMap::new(); num_ranks];
    let mut report: Vec<MigrationRecord> = Vec::new();
    for k in 0..num_ranks {
        for (_src, bytes) in net.recv_all(k as u32) {
            let mut r = Reader::new(&bytes);
            let tag = r.u8()?;
            if tag != MSG_NEW_RANKS {
                return Err(Error::Decode(format!("expected rank updates, got tag {tag}")));
            }
            let els = decode_element_set(&mut ranks[k].mesh, &mut r, false)?;
            for el in els {
                ghost_new_rank[k].insert(el, r.u32()?);
            }
        }

        let rm = &ranks[k];
        let mut per_dst: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (&l, &nr) in &new_rank[k] {
            if nr != rm.rank {
                per_dst.entry(nr).or_default().push(l);
            }
        }
        for (dst, mut emigrants) in per_dst {
            emigrants.sort_unstable();
            report.push(MigrationRecord { from: rm.rank, to: dst, elements: emigrants.len() });
            let eset: HashSet<u32> = emigrants.iter().copied().collect();
            let mut layer: Vec<u32> = neighbor_expansion(&rm.mesh, &eset)
                .into_iter()
                .filter(|&l| rm.mesh.element(l).unwrap().rank != NIL)
                .collect();
            layer.sort_unstable();
            let mut w = Writer::new();
            w.u8(MSG_MIGRATE);
            encode_element_set(&rm.mesh, &emigrants, &mut w)?;
            let order = encode_element_set(&rm.mesh, &layer, &mut w)?;
            for el in order {
                let owner = rm.mesh.element(el).unwrap().rank;
                let nr = if owner == rm.rank {
                    new_rank[k][&el]
                } else {
                    *ghost_new_rank[k].get(&el).ok_or_else(|| {
                        Error::InconsistentMesh(format!(
                            "rank {} has no new owner for ghost {el}",
                            rm.rank
                        ))
                    })?
                };
                w.u32(nr);
            }
            net.send(rm.rank, dst, w.take(), emigrants.len() + layer.len(), 0);
        }
    }

    // Phase 4: receive migrations (realizing pruned regions), apply all
    // known new ranks, then restore minimal ghost layers and pruning.
    net.begin_iteration();
    for k in 0..num_ranks {
        for (_src, bytes) in net.recv_all(k as u32) {
            let mut r = Reader::new(&bytes);
            let tag = r.u8()?;
            if tag != MSG_MIGRATE {
                return Err(Error::Decode(format!("expected a migration, got tag {tag}")));
            }
            let mesh = &mut ranks[k].mesh;
            let immigrants = decode_element_set(mesh, &mut r, true)?;
            let layer = decode_element_set(mesh, &mut r, true)?;
            for el in immigrants {
                mesh.set_rank(el, k as u32);
            }
            for el in layer {
                let nr = r.u32()?;
                mesh.set_rank(el, nr);
            }
        }
        // Updates for leaves this rank already represented.
        let mesh = &mut ranks[k].mesh;
        for (&l, &nr) in &new_rank[k] {
            mesh.set_rank(l, nr);
        }
        for (&l, &nr) in &ghost_new_rank[k] {
            mesh.set_rank(l, nr);
        }
        let rm = &mut ranks[k];
        let owned: HashSet<u32> = rm.owned_leaves().into_iter().collect();
        let ghosts = neighbor_expansion(&rm.mesh, &owned);
        let keep: HashSet<u32> = owned.union(&ghosts).copied().collect();
        prune_to_keep(&mut rm.mesh, &keep);
        canonicalize_ranks(&mut rm.mesh, rm.rank);
    }
    net.begin_iteration(); // flush accounting; nothing may remain staged
    report.sort_by_key(|m| (m.from, m.to));
    Ok(report)
}
