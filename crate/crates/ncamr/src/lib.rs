//! Non-conforming (hanging-node) adaptive mesh refinement for high-order
//! nodal finite elements.
//!
//! The library maintains a refinement-tree mesh of quadrilaterals,
//! triangles and hexahedra in which neighboring elements may be refined to
//! different levels.  Degrees of freedom on the resulting "hanging"
//! (slave) entities are eliminated through a conforming interpolation
//! operator `P`, so that standard element-by-element assembly over the
//! (cut off) leaf elements yields a conforming discretization:
//!
//! ```text
//!   A = P^T Â P,      b = P^T b̂,      û = P u.
//! ```
//!
//! Main entry points:
//! - [`NCMesh`]: the mesh itself (refine / coarsen / consistency control).
//! - [`FESpace`]: nodal H1 space of order `p` on the leaf elements.
//! - [`ConformingOperator`]: the prolongation matrix `P` and its
//!   constraint data.
//! - [`assembly`]: Poisson assembly, variational restriction, CG solver.
//! - [`adaptivity`]: an AMR benchmark driver with exact-error tracking.
//! - [`partition`]: space-filling-curve mesh ordering and equipartition.
//! - [`distsim`]: a simulated multi-rank (message passing) environment in
//!   which the parallel `P` construction algorithm runs unmodified.

pub mod adaptivity;
pub mod assembly;
pub mod basis;
pub mod conforming;
pub mod distsim;
pub mod error;
pub mod fespace;
pub mod geom;
pub mod interfaces;
pub mod meshgen;
pub mod meshio;
pub mod ncmesh;
pub mod partition;
pub mod quadrature;
pub mod sparse;
#[cfg(test)]
pub(crate) mod testutil;
pub mod vtk;

pub use conforming::ConformingOperator;
pub use error::Error;
pub use fespace::FESpace;
pub use ncmesh::NCMesh;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
