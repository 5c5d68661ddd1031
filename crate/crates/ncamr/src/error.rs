//! Crate-wide error type.

use thiserror::Error;

/// All errors produced by the ncamr library.
#[derive(Debug, Error)]
pub enum Error {
    /// A refinement type is not valid for the geometry of the element
    /// (e.g. an anisotropic split requested on a triangle).
    #[error("invalid refinement type {ref_type:#04x} for {geom}")]
    InvalidRefType { geom: &'static str, ref_type: u8 },

    /// `coarsen` was called on an element that is not refined, or whose
    /// children are not all leaves.
    #[error("element {0} cannot be coarsened: {1}")]
    NotCoarsenable(u32, &'static str),

    /// An element id does not refer to a live element.
    #[error("element id {0} is not live")]
    BadElement(u32),

    /// Operation needs a leaf element but the element is refined.
    #[error("element {0} is refined (operation requires a leaf)")]
    NotLeaf(u32),

    /// A matrix or space was built against an older mesh version.
    #[error("stale object: built for mesh version {built}, mesh is now {current}")]
    StaleVersion { built: u64, current: u64 },

    /// `ensure_consistency` failed to reach a consistent state within its
    /// pass limit.
    #[error("mesh consistency not reached after {0} passes")]
    ConsistencyLimitExceeded(usize),

    /// The mesh contains intersecting entities that are neither identical
    /// nor in a subset relation, and the repair pass was not requested.
    #[error("inconsistent mesh: {0}")]
    InconsistentMesh(String),

    /// Two interfaces constrained the same slave row with materially
    /// different coefficients.
    #[error("conflicting constraint for DOF {dof}: coefficient mismatch {delta:e}")]
    ConflictingConstraint { dof: usize, delta: f64 },

    /// Constraint resolution could not make progress: slave rows depend on
    /// each other in a cycle.
    #[error("cyclic constraint dependency involving {0} unresolved rows")]
    CyclicDependency(usize),

    /// A geometric map degenerated (non-positive Jacobian determinant).
    #[error("degenerate element geometry (det J = {0:e})")]
    DegenerateElement(f64),

    /// Input data has the wrong spatial or structural dimension.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Dirichlet data was attached to a slave boundary DOF; boundary
    /// conditions must be expressed on conforming (master) DOFs.
    #[error("boundary condition on slave DOF {0}; constrain master DOFs instead")]
    BoundaryConditionOnSlave(usize),

    /// An iterative process (CG, Newton) failed to converge.
    #[error("no convergence: {what} after {iters} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iters: usize,
        residual: f64,
    },

    /// Space-filling-curve ordering is not available for the request.
    #[error("unsupported curve: {0}")]
    UnsupportedCurve(String),

    /// A serialized mesh or element-set stream could not be decoded.
    #[error("decode error: {0}")]
    Decode(String),

    /// Mesh-file parse failure.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// The simulated message-passing run stalled: every rank is waiting.
    #[error("deadlock: all {0} ranks waiting on receives")]
    Deadlock(usize),

    /// I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
