//! Constraint assembly and resolution for hanging-node meshes.
//!
//! DOFs on slave entities are not independent: the finite element function
//! must stay continuous across a coarse-fine interface, so every slave DOF
//! is an interpolated combination of the DOFs on its master entity.  This
//! module evaluates those combinations (local interpolation matrices `Q`),
//! gathers them into a global [`DependencyMatrix`] `D`, and eliminates
//! chained (indirect) constraints to produce the final
//! [`ConformingOperator`] `P` mapping true (independent) DOFs to all DOFs:
//!
//! ```text
//!   û = P u,   P = [ I ]   (identity on true DOFs)
//!              [ W ]   (interpolation weights on slave DOFs)
//! ```

use std::collections::hash_map::Entry;
use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use crate::basis::Basis1D;
use crate::error::Error;
use crate::fespace::FESpace;
use crate::interfaces::InterfaceList;
use crate::ncmesh::NCMesh;
use crate::sparse::CsrMatrix;
use crate::Result;

/// Tolerance for snapping near-unit interpolation rows to exact unit rows.
/// A row that is a unit vector means the "slave" node coincides with a
/// master node; such DOFs must be recognized exactly, or true-DOF counting
/// breaks.
const SNAP_TOL: f64 = 1e-12;

/// Tolerance for the idempotence check on duplicate constraint writes.
const WRITE_TOL: f64 = 1e-12;

/// Entries smaller than this are dropped when scattering and combining
/// constraint rows (they are floating-point residue of exact zeros).
const PRUNE_TOL: f64 = 1e-14;

// ---------------------------------------------------------------------------
// Local interpolation
// ---------------------------------------------------------------------------

/// Snap rows that are within `SNAP_TOL` of a unit vector to an exact unit
/// vector; leave all other rows untouched.
fn snap_unit_rows(q: &mut [Vec<f64>]) {
    for row in q.iter_mut() {
        let mut unit_at = None;
        let mut is_unit = true;
        for (c, &v) in row.iter().enumerate() {
            if (v - 1.0).abs() <= SNAP_TOL {
                if unit_at.is_some() {
                    is_unit = false;
                    break;
                }
                unit_at = Some(c);
            } else if v.abs() >= SNAP_TOL {
                is_unit = false;
                break;
            }
        }
        if let (true, Some(c)) = (is_unit, unit_at) {
            row.iter_mut().for_each(|v| *v = 0.0);
            row[c] = 1.0;
        }
    }
}

/// Local interpolation matrix for an edge: row `r` holds the master edge's
/// shape functions evaluated at master parameter `ts[r]` (the position of
/// the slave's `r`-th nodal point within the master).  Near-unit rows are
/// snapped exactly.
pub fn edge_interpolation(basis: &Basis1D, ts: &[f64]) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = ts.iter().map(|&t| basis.eval(t)).collect();
    snap_unit_rows(&mut q);
    q
}

/// Local interpolation matrix for a quadrilateral face: row `r` holds the
/// master face's tensor-product shape functions evaluated at master
/// coordinates `uvs[r]`.  Column order is the face-closure tensor order
/// (`x` fastest): column `j*(p+1)+i` is the shape at node `(i, j)`.
pub fn face_interpolation(basis: &Basis1D, uvs: &[[f64; 2]]) -> Vec<Vec<f64>> {
    let n = basis.len();
    let mut q = Vec::with_capacity(uvs.len());
    for &[u, v] in uvs {
        let bu = basis.eval(u);
        let bv = basis.eval(v);
        let mut row = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                row.push(bu[i] * bv[j]);
            }
        }
        q.push(row);
    }
    snap_unit_rows(&mut q);
    q
}

// ---------------------------------------------------------------------------
// Dependency matrix
// ---------------------------------------------------------------------------

/// Classification of a [`DependencyMatrix`] row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowClass {
    /// Unconstrained (true) DOF.
    Identity,
    /// Slave DOF depending only on true DOFs.
    DirectSlave,
    /// Slave DOF depending on at least one other slave DOF.
    IndirectSlave,
}

/// The global dependency matrix `D`: conceptually an `N̂ × N̂` matrix
/// initialized to the identity, with the rows of constrained (slave) DOFs
/// overwritten by interpolation weights.  Only the non-identity rows are
/// stored.
#[derive(Clone, Debug, Default)]
pub struct DependencyMatrix {
    n: usize,
    rows: HashMap<usize, Vec<(usize, f64)>>,
}

impl DependencyMatrix {
    pub fn new(n: usize) -> Self {
        DependencyMatrix { n, rows: HashMap::new() }
    }

    /// Total number of DOFs `N̂` (rows and columns).
    pub fn num_dofs(&self) -> usize {
        self.n
    }

    /// Number of constrained (non-identity) rows.
    pub fn num_slave_rows(&self) -> usize {
        self.rows.len()
    }

    /// The constraint row of `dof`, or `None` if the row is identity.
    /// Entries are sorted by column.
    pub fn row(&self, dof: usize) -> Option<&[(usize, f64)]> {
        self.rows.get(&dof).map(|v| v.as_slice())
    }

    /// Iterate over all constrained rows in unspecified order.
    pub fn slave_rows(&self) -> impl Iterator<Item = (usize, &[(usize, f64)])> {
        self.rows.iter().map(|(&d, v)| (d, v.as_slice()))
    }

    pub fn classify(&self, dof: usize) -> RowClass {
        match self.rows.get(&dof) {
            None => RowClass::Identity,
            Some(entries) => {
                if entries.iter().any(|(c, _)| self.rows.contains_key(c)) {
                    RowClass::IndirectSlave
                } else {
                    RowClass::DirectSlave
                }
            }
        }
    }

    /// Install the constraint row of `dof`.  `entries` must be sorted by
    /// column.  Writing the same row twice is legal as long as both writes
    /// agree within `1e-12` (shared slave-boundary nodes are visited from
    /// several masters); disagreeing writes are a hard error.
    pub fn set_row(&mut self, dof: usize, entries: Vec<(usize, f64)>) -> Result<()> {
        assert!(dof < self.n, "row index out of range");
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0), "unsorted row");
        match self.rows.entry(dof) {
            Entry::Occupied(slot) => {
                let delta = max_union_diff(slot.get(), &entries);
                if delta > WRITE_TOL {
                    return Err(Error::ConflictingConstraint { dof, delta });
                }
                Ok(())
            }
            Entry::Vacant(slot) => {
                slot.insert(entries);
                Ok(())
            }
        }
    }
}

/// Largest absolute difference between two sparse rows, treating missing
/// columns as zero.
fn max_union_diff(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let mut delta: f64 = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let ca = a.get(i).map(|e| e.0);
        let cb = b.get(j).map(|e| e.0);
        match (ca, cb) {
            (Some(x), Some(y)) if x == y => {
                delta = delta.max((a[i].1 - b[j].1).abs());
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x < y => {
                delta = delta.max(a[i].1.abs());
                i += 1;
            }
            (Some(_), Some(_)) => {
                delta = delta.max(b[j].1.abs());
                j += 1;
            }
            (Some(_), None) => {
                delta = delta.max(a[i].1.abs());
                i += 1;
            }
            (None, Some(_)) => {
                delta = delta.max(b[j].1.abs());
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    delta
}

// ---------------------------------------------------------------------------
// Assembly of D
// ---------------------------------------------------------------------------

/// Scatter the rows of a local interpolation matrix into `D`.
///
/// Row `r` constrains global DOF `sdofs[r]`; column `c` refers to global
/// DOF `mdofs[c]`.  A row that is an exact unit vector pointing at the
/// row's own DOF is no constraint at all (the node coincides with a master
/// node of itself) and is skipped; a unit row pointing at a *different*
/// DOF is a genuine copy constraint and is kept.  DOFs in `skip` are not
/// written at all (they already carry an equivalent constraint from a
/// lower-dimensional master).
fn scatter(
    d: &mut DependencyMatrix,
    q: &[Vec<f64>],
    sdofs: &[usize],
    mdofs: &[usize],
    skip: Option<&std::collections::HashSet<usize>>,
) -> Result<()> {
    for (r, row) in q.iter().enumerate() {
        let own = sdofs[r];
        if skip.is_some_and(|s| s.contains(&own)) {
            continue;
        }
        if let Some(c) = exact_unit_col(row) {
            if mdofs[c] == own {
                continue;
            }
        }
        let mut entries: Vec<(usize, f64)> = row
            .iter()
            .enumerate()
            .filter(|&(_, &v)| v.abs() >= PRUNE_TOL)
            .map(|(c, &v)| (mdofs[c], v))
            .collect();
        entries.sort_unstable_by_key(|e| e.0);
        d.set_row(own, entries)?;
    }
    Ok(())
}

/// If `row` is exactly a unit vector (after snapping), the column holding
/// the 1.
fn exact_unit_col(row: &[f64]) -> Option<usize> {
    let mut unit = None;
    for (c, &v) in row.iter().enumerate() {
        if v == 1.0 && unit.is_none() {
            unit = Some(c);
        } else if v != 0.0 {
            return None;
        }
    }
    unit
}

/// Assemble the global dependency matrix from an interface classification.
///
/// For every master entity, every slave's nodal points are mapped through
/// the slave's placement into the master's reference domain, the master's
/// shape functions are evaluated there, and the resulting rows are written
/// at the slave DOFs.  Nodes shared by several slaves of same-dimensional
/// masters are written multiple times; those writes agree by construction
/// and the duplicate write check enforces it.
///
/// A DOF constrained by masters of *both* dimensions (a node on a slave
/// edge that also lies inside a master face) can receive two different but
/// equivalent constraint rows — equal only after the hanging DOFs they
/// reference are themselves resolved.  Edge masters are processed first
/// and win: the face-master write for such a DOF is skipped.
///
/// Errors with [`Error::StaleVersion`] if `space` or `ifc` were built from
/// a different version of `mesh`, and with
/// [`Error::ConflictingConstraint`] if duplicate writes disagree.
pub fn assemble_dependencies(
    mesh: &NCMesh,
    space: &FESpace,
    ifc: &InterfaceList,
) -> Result<DependencyMatrix> {
    for built in [space.mesh_version(), ifc.mesh_version()] {
        if built != mesh.version() {
            return Err(Error::StaleVersion { built, current: mesh.version() });
        }
    }
    let basis = Basis1D::gauss_lobatto(space.order());
    let mut d = DependencyMatrix::new(space.num_dofs());

    for m in &ifc.edges.masters {
        let (mdofs, _) = space.edge_closure(mesh, m.entity);
        for s in &m.slaves {
            let (sdofs, sparams) = space.edge_closure(mesh, s.entity);
            // edge_closure orders nodes from the lower-id endpoint; align
            // the placement parameters with that direction.
            let (sa, _) = mesh.edge_endpoints(s.entity);
            let (pa, pb) = if s.corners[0] == sa {
                (s.placement[0][0].to_f64(), s.placement[1][0].to_f64())
            } else {
                (s.placement[1][0].to_f64(), s.placement[0][0].to_f64())
            };
            let ts: Vec<f64> = sparams.iter().map(|&t| pa + t * (pb - pa)).collect();
            let q = edge_interpolation(&basis, &ts);
            scatter(&mut d, &q, &sdofs, &mdofs, None)?;
        }
    }

    let edge_constrained: std::collections::HashSet<usize> =
        d.rows.keys().copied().collect();

    for m in &ifc.faces.masters {
        let (mdofs, _) = space.face_closure(mesh, m.entity);
        for s in &m.slaves {
            let (sdofs, sparams) = space.face_closure(mesh, s.entity);
            // The slave's stored corner order (the frame face_closure uses)
            // can be any rotation/reflection of the traversal order the
            // placement was recorded in; route each stored corner to its
            // placement slot.
            let stored = mesh.face_corners(s.entity);
            let sigma: Vec<usize> = stored
                .iter()
                .map(|c| {
                    s.corners
                        .iter()
                        .position(|x| x == c)
                        .expect("slave face corners must match stored corners")
                })
                .collect();
            let pl: Vec<[f64; 2]> = sigma
                .iter()
                .map(|&k| [s.placement[k][0].to_f64(), s.placement[k][1].to_f64()])
                .collect();
            let uvs: Vec<[f64; 2]> = sparams
                .iter()
                .map(|&[u, v]| {
                    let w = [(1.0 - u) * (1.0 - v), u * (1.0 - v), u * v, (1.0 - u) * v];
                    let mut x = 0.0;
                    let mut y = 0.0;
                    for k in 0..4 {
                        x += w[k] * pl[k][0];
                        y += w[k] * pl[k][1];
                    }
                    [x, y]
                })
                .collect();
            let q = face_interpolation(&basis, &uvs);
            scatter(&mut d, &q, &sdofs, &mdofs, Some(&edge_constrained))?;
        }
    }

    Ok(d)
}

// ---------------------------------------------------------------------------
// Resolution of P
// ---------------------------------------------------------------------------

/// The conforming prolongation operator `P` (size `N̂ × N`): unit rows at
/// the `N` true DOFs, interpolation weights at slave DOFs.  `sweeps`
/// records how many dependency-resolution sweeps were needed, which equals
/// the mesh irregularity (the longest chain of indirect constraints; `0`
/// on a conforming mesh).
#[derive(Clone, Debug)]
pub struct ConformingOperator {
    matrix: CsrMatrix,
    true_dofs: Vec<usize>,
    sweeps: usize,
}

impl ConformingOperator {
    /// The sparse matrix `P` itself (`N̂` rows, `N` columns).
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// The DOFs whose rows are identity, ascending.  Column `c` of `P`
    /// corresponds to DOF `true_dofs[c]`.
    pub fn true_dofs(&self) -> &[usize] {
        &self.true_dofs
    }

    /// Number of resolution sweeps (= irregularity of the constraints).
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn num_hat_dofs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_true_dofs(&self) -> usize {
        self.true_dofs.len()
    }

    /// Column of `P` owned by `dof`, or `None` if `dof` is a slave.
    pub fn true_col(&self, dof: usize) -> Option<usize> {
        self.true_dofs.binary_search(&dof).ok()
    }

    /// Prolong a true-DOF vector to all DOFs: `û = P u`.
    pub fn prolong(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(u)
    }

    /// Restrict a full-space vector to true DOFs: `Pᵀ v̂`.
    pub fn restrict_vec(&self, v: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec_transpose(v)
    }

    /// Plain-text coordinate export: header `N̂ N nnz`, then one
    /// `row col value` line per entry in row-major order, values with 17
    /// significant digits.
    pub fn export(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {}",
            self.matrix.nrows(),
            self.matrix.ncols(),
            self.matrix.nnz()
        );
        for i in 0..self.matrix.nrows() {
            let (cols, vals) = self.matrix.row(i);
            for (c, v) in cols.iter().zip(vals) {
                let _ = writeln!(out, "{} {} {:.16e}", i, c, v);
            }
        }
        out
    }
}

/// Resolve the dependency matrix into the prolongation operator.
///
/// Rows whose dependencies are all true DOFs resolve immediately; rows
/// depending on other slave rows resolve once those have been substituted
/// (`P_i = Σ_j D_ij P_j`).  Implemented as a worklist, but the reported
/// sweep count is the depth of the longest substitution chain — what a
/// sweep-until-converged implementation would need.
///
/// Errors with [`Error::CyclicDependency`] (carrying the number of
/// unresolvable rows) if constraints form a cycle.
pub fn resolve_p(d: &DependencyMatrix) -> Result<ConformingOperator> {
    let n = d.num_dofs();
    let true_dofs: Vec<usize> = (0..n).filter(|i| d.row(*i).is_none()).collect();
    let col_of: HashMap<usize, usize> =
        true_dofs.iter().enumerate().map(|(c, &dof)| (dof, c)).collect();

    // pending[i] = number of not-yet-resolved slave dependencies of row i;
    // dependents[j] = slave rows that wait on slave row j.
    let mut pending: HashMap<usize, usize> = HashMap::new();
    let mut dependents: HashMap<usize, Vec<usize>> = HashMap::new();
    for (dof, entries) in d.slave_rows() {
        let mut cnt = 0;
        for &(c, _) in entries {
            if d.row(c).is_some() {
                cnt += 1;
                dependents.entry(c).or_default().push(dof);
            }
        }
        pending.insert(dof, cnt);
    }

    // Resolved slave rows of P, in true-DOF column indices.
    let mut resolved: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
    let mut depth: HashMap<usize, usize> = HashMap::new();
    let mut queue: VecDeque<usize> =
        pending.iter().filter(|&(_, &c)| c == 0).map(|(&dof, _)| dof).collect();

    let mut max_depth = 0usize;
    while let Some(dof) = queue.pop_front() {
        let mut acc: HashMap<usize, f64> = HashMap::new();
        let mut dep_depth = 0usize;
        for &(c, w) in d.row(dof).unwrap() {
            match col_of.get(&c) {
                Some(&col) => *acc.entry(col).or_insert(0.0) += w,
                None => {
                    dep_depth = dep_depth.max(depth[&c]);
                    for &(col, pw) in &resolved[&c] {
                        *acc.entry(col).or_insert(0.0) += w * pw;
                    }
                }
            }
        }
        let mut row: Vec<(usize, f64)> =
            acc.into_iter().filter(|&(_, v)| v.abs() >= PRUNE_TOL).collect();
        row.sort_unstable_by_key(|e| e.0);
        resolved.insert(dof, row);
        let dd = dep_depth + 1;
        depth.insert(dof, dd);
        max_depth = max_depth.max(dd);
        if let Some(deps) = dependents.get(&dof) {
            for &i in deps {
                let c = pending.get_mut(&i).unwrap();
                *c -= 1;
                if *c == 0 {
                    queue.push_back(i);
                }
            }
        }
    }

    let unresolved = d.num_slave_rows() - resolved.len();
    if unresolved > 0 {
        return Err(Error::CyclicDependency(unresolved));
    }

    let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
    for i in 0..n {
        match col_of.get(&i) {
            Some(&col) => rows.push(vec![(col as u32, 1.0)]),
            None => rows.push(
                resolved[&i].iter().map(|&(c, v)| (c as u32, v)).collect(),
            ),
        }
    }
    let matrix = CsrMatrix::from_rows(true_dofs.len(), &rows);
    Ok(ConformingOperator { matrix, true_dofs, sweeps: max_depth })
}

/// Number of resolution sweeps the constraints need: `0` for a conforming
/// mesh, `n` when the longest indirect-constraint chain has length `n`.
pub fn irregularity(d: &DependencyMatrix) -> Result<usize> {
    Ok(resolve_p(d)?.sweeps)
}

/// One-shot construction of the conforming operator for a mesh and space.
pub fn conforming_operator(mesh: &NCMesh, space: &FESpace) -> Result<ConformingOperator> {
    let ifc = crate::interfaces::build_interface_list(mesh)?;
    let d = assemble_dependencies(mesh, space, &ifc)?;
    resolve_p(&d)
}
