//! Poisson assembly in the partially conforming space and the
//! variational-restriction solve path.
//!
//! Assembly runs element by element over the leaves exactly as it would on
//! a conforming mesh, producing the unconstrained system `Â û = f̂`.  The
//! conforming operator `P` then restricts it to the true DOFs,
//!
//! ```text
//!   (Pᵀ Â P) u = Pᵀ f̂,
//! ```
//!
//! and essential boundary conditions are eliminated *after* that
//! restriction (eliminating before it destroys the constraint coupling of
//! boundary-adjacent hanging DOFs).

use crate::basis::{Basis1D, TriBasis};
use crate::conforming::ConformingOperator;
use crate::error::Error;
use crate::fespace::FESpace;
use crate::geom::Geom;
use crate::ncmesh::NCMesh;
use crate::quadrature::QuadratureRule;
use crate::sparse::{cg_solve, CooBuilder, CsrMatrix};
use crate::Result;

/// An assembled linear system (either the full `N̂`-sized one or the
/// restricted `N`-sized one).
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

impl LinearSystem {
    pub fn num_dofs(&self) -> usize {
        self.rhs.len()
    }
}

/// Evaluate all reference shape functions and gradients of `geom` at a
/// reference point, in the same local order `FESpace::element_dofs` uses
/// (tensor order, x fastest, for quads and hexes; the triangle basis's own
/// order for triangles).
pub(crate) fn shapes_at(
    geom: Geom,
    basis: &Basis1D,
    tri: Option<&TriBasis>,
    pt: [f64; 3],
) -> (Vec<f64>, Vec<[f64; 3]>) {
    match geom {
        Geom::Tri => {
            let (vals, grads2) = tri.unwrap().eval_grad(pt[0], pt[1]);
            let grads = grads2.iter().map(|g| [g[0], g[1], 0.0]).collect();
            (vals, grads)
        }
        Geom::Quad => {
            let (bx, dx) = basis.eval_deriv(pt[0]);
            let (by, dy) = basis.eval_deriv(pt[1]);
            let n = basis.len();
            let mut vals = Vec::with_capacity(n * n);
            let mut grads = Vec::with_capacity(n * n);
            for j in 0..n {
                for i in 0..n {
                    vals.push(bx[i] * by[j]);
                    grads.push([dx[i] * by[j], bx[i] * dy[j], 0.0]);
                }
            }
            (vals, grads)
        }
        Geom::Hex => {
            let (bx, dx) = basis.eval_deriv(pt[0]);
            let (by, dy) = basis.eval_deriv(pt[1]);
            let (bz, dz) = basis.eval_deriv(pt[2]);
            let n = basis.len();
            let mut vals = Vec::with_capacity(n * n * n);
            let mut grads = Vec::with_capacity(n * n * n);
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        vals.push(bx[i] * by[j] * bz[k]);
                        grads.push([
                            dx[i] * by[j] * bz[k],
                            bx[i] * dy[j] * bz[k],
                            bx[i] * by[j] * dz[k],
                        ]);
                    }
                }
            }
            (vals, grads)
        }
    }
}

/// Multilinear vertex shape functions of `geom` and their reference
/// gradients at a point (for the geometry map).
fn corner_shapes(geom: Geom, pt: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let [x, y, z] = pt;
    match geom {
        Geom::Tri => (
            vec![1.0 - x - y, x, y],
            vec![[-1.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        ),
        Geom::Quad => (
            vec![
                (1.0 - x) * (1.0 - y),
                x * (1.0 - y),
                x * y,
                (1.0 - x) * y,
            ],
            vec![
                [-(1.0 - y), -(1.0 - x), 0.0],
                [1.0 - y, -x, 0.0],
                [y, x, 0.0],
                [-y, 1.0 - x, 0.0],
            ],
        ),
        Geom::Hex => {
            let corners = [
                (0.0, 0.0, 0.0),
                (1.0, 0.0, 0.0),
                (1.0, 1.0, 0.0),
                (0.0, 1.0, 0.0),
                (0.0, 0.0, 1.0),
                (1.0, 0.0, 1.0),
                (1.0, 1.0, 1.0),
                (0.0, 1.0, 1.0),
            ];
            let mut vals = Vec::with_capacity(8);
            let mut grads = Vec::with_capacity(8);
            for &(cx, cy, cz) in &corners {
                let fx = if cx > 0.5 { x } else { 1.0 - x };
                let fy = if cy > 0.5 { y } else { 1.0 - y };
                let fz = if cz > 0.5 { z } else { 1.0 - z };
                let sx = if cx > 0.5 { 1.0 } else { -1.0 };
                let sy = if cy > 0.5 { 1.0 } else { -1.0 };
                let sz = if cz > 0.5 { 1.0 } else { -1.0 };
                vals.push(fx * fy * fz);
                grads.push([sx * fy * fz, fx * sy * fz, fx * fy * sz]);
            }
            (vals, grads)
        }
    }
}

/// The element geometry map of a leaf: physical point, Jacobian columns
/// `J[:,j] = ∂x/∂ξ_j`, at a reference point.
pub(crate) struct GeomMap {
    pub corners: Vec<[f64; 3]>,
    pub geom: Geom,
}

impl GeomMap {
    pub fn new(mesh: &NCMesh, leaf: u32) -> Self {
        let geom = mesh.element(leaf).expect("leaf exists").geom;
        let corners = mesh
            .element_corners(leaf)
            .iter()
            .map(|&v| mesh.vertex_pos(v))
            .collect();
        GeomMap { corners, geom }
    }

    /// Physical coordinates at a reference point.
    pub fn point(&self, pt: [f64; 3]) -> [f64; 3] {
        let (vals, _) = corner_shapes(self.geom, pt);
        let mut x = [0.0; 3];
        for (v, c) in vals.iter().zip(&self.corners) {
            for d in 0..3 {
                x[d] += v * c[d];
            }
        }
        x
    }

    /// Jacobian columns at a reference point (third column is the unit z
    /// vector for 2D geometries, making `det` the area Jacobian).
    pub fn jacobian(&self, pt: [f64; 3]) -> [[f64; 3]; 3] {
        let (_, grads) = corner_shapes(self.geom, pt);
        let mut j = [[0.0; 3]; 3];
        for (g, c) in grads.iter().zip(&self.corners) {
            for d in 0..3 {
                for a in 0..3 {
                    j[d][a] += c[d] * g[a];
                }
            }
        }
        if self.geom != Geom::Hex {
            j[2][2] = 1.0;
        }
        j
    }
}

pub(crate) fn det3(j: &[[f64; 3]; 3]) -> f64 {
    j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
        - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
        + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
}

/// Inverse of a 3×3 matrix given its determinant.
pub(crate) fn inv3(j: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
            let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
            // cofactor transpose
            inv[c][r] = (j[r1][c1] * j[r2][c2] - j[r1][c2] * j[r2][c1]) / det;
        }
    }
    inv
}

/// Assemble the Poisson system `a(u,v) = ∫∇u·∇v`, `l(v) = ∫ f v` over all
/// leaf elements, with no constraint handling: the result lives in the
/// full (partially conforming) space of size `N̂`.
///
/// Quadrature is exact for polynomials of degree `2p+1` per axis.  Errors
/// with [`Error::DegenerateElement`] if the geometry Jacobian is not
/// positive at some quadrature point.
pub fn assemble_poisson<F>(mesh: &NCMesh, space: &FESpace, rhs: F) -> Result<LinearSystem>
where
    F: Fn([f64; 3]) -> f64,
{
    if space.mesh_version() != mesh.version() {
        return Err(Error::StaleVersion {
            built: space.mesh_version(),
            current: mesh.version(),
        });
    }
    let p = space.order();
    let nhat = space.num_dofs();
    let basis = Basis1D::gauss_lobatto(p);
    let has_tri = mesh
        .dfs_leaves()
        .iter()
        .any(|&l| mesh.element(l).is_some_and(|e| e.geom == Geom::Tri));
    let tri = if has_tri { Some(TriBasis::new(p)) } else { None };
    let mut coo = CooBuilder::new(nhat, nhat);
    let mut f = vec![0.0; nhat];

    for leaf in mesh.dfs_leaves() {
        let map = GeomMap::new(mesh, leaf);
        let rule = QuadratureRule::for_geom(map.geom, p + 1);
        let dofs = space.element_dofs(mesh, leaf);
        let nl = dofs.len();
        let mut ke = vec![vec![0.0; nl]; nl];
        let mut fe = vec![0.0; nl];

        for (q, &pt) in rule.points.iter().enumerate() {
            let (vals, grads) = shapes_at(map.geom, &basis, tri.as_ref(), pt);
            debug_assert_eq!(vals.len(), nl);
            let j = map.jacobian(pt);
            let det = det3(&j);
            if det <= 0.0 {
                return Err(Error::DegenerateElement(det));
            }
            let jinv = inv3(&j, det);
            let w = rule.weights[q] * det;
            // Physical gradients: ∇φ = J⁻ᵀ ∇̂φ.
            let pg: Vec<[f64; 3]> = grads
                .iter()
                .map(|g| {
                    let mut out = [0.0; 3];
                    for d in 0..3 {
                        out[d] = jinv[0][d] * g[0] + jinv[1][d] * g[1] + jinv[2][d] * g[2];
                    }
                    out
                })
                .collect();
            let fx = rhs(map.point(pt));
            for i in 0..nl {
                fe[i] += w * fx * vals[i];
                let gi = pg[i];
                for k in 0..nl {
                    let gk = pg[k];
                    ke[i][k] += w * (gi[0] * gk[0] + gi[1] * gk[1] + gi[2] * gk[2]);
                }
            }
        }

        for i in 0..nl {
            f[dofs[i]] += fe[i];
            for k in 0..nl {
                coo.add(dofs[i], dofs[k], ke[i][k]);
            }
        }
    }

    Ok(LinearSystem { matrix: coo.into_csr(), rhs: f })
}

/// Restrict the unconstrained system to the true DOFs:
/// `A = Pᵀ Â P`, `b = Pᵀ f̂` (explicit triple product).
pub fn restrict_system(sys: &LinearSystem, op: &ConformingOperator) -> Result<LinearSystem> {
    if sys.matrix.nrows() != op.num_hat_dofs()
        || sys.matrix.ncols() != op.num_hat_dofs()
        || sys.rhs.len() != op.num_hat_dofs()
    {
        return Err(Error::DimensionMismatch(format!(
            "system has {} DOFs, operator expects {}",
            sys.rhs.len(),
            op.num_hat_dofs()
        )));
    }
    Ok(LinearSystem {
        matrix: CsrMatrix::restrict(&sys.matrix, op.matrix()),
        rhs: op.restrict_vec(&sys.rhs),
    })
}

/// Symmetrically eliminate essential boundary conditions from the
/// *restricted* system.
///
/// `bdr_dofs` are full-space DOF ids with prescribed `values`; each must
/// be a true DOF of `op` (a slave DOF cannot carry an independent boundary
/// value — its value is determined by its masters), otherwise
/// [`Error::BoundaryConditionOnSlave`] is returned and the system is
/// unchanged.  Known values are moved to the right-hand side and the
/// eliminated rows become unit rows with `rhs = value`.
pub fn eliminate_essential_bc(
    sys: &LinearSystem,
    op: &ConformingOperator,
    bdr_dofs: &[usize],
    values: &[f64],
) -> Result<LinearSystem> {
    assert_eq!(bdr_dofs.len(), values.len());
    let n = sys.num_dofs();
    if n != op.num_true_dofs() {
        return Err(Error::DimensionMismatch(format!(
            "boundary elimination needs the restricted system ({} DOFs), got {}",
            op.num_true_dofs(),
            n
        )));
    }
    let mut value_of: Vec<Option<f64>> = vec![None; n];
    for (&dof, &v) in bdr_dofs.iter().zip(values) {
        let col = op.true_col(dof).ok_or(Error::BoundaryConditionOnSlave(dof))?;
        value_of[col] = Some(v);
    }

    let mut coo = CooBuilder::new(n, n);
    let mut rhs = sys.rhs.clone();
    for i in 0..n {
        if let Some(v) = value_of[i] {
            coo.add(i, i, 1.0);
            rhs[i] = v;
            continue;
        }
        let (cols, vals) = sys.matrix.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            match value_of[c as usize] {
                Some(g) => rhs[i] -= v * g,
                None => coo.add(i, c as usize, v),
            }
        }
    }
    Ok(LinearSystem { matrix: coo.into_csr(), rhs })
}

/// Solve an SPD system with (Jacobi-preconditioned) conjugate gradients.
pub fn solve_cg(sys: &LinearSystem, rel_tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let (x, _iters) = cg_solve(&sys.matrix, &sys.rhs, rel_tol, max_iter)?;
    Ok(x)
}

/// Export a matrix in the same coordinate-list format as the prolongation
/// operator: header `rows cols nnz`, then `row col value` lines, 17
/// significant digits, row-major.
pub fn export_matrix(m: &CsrMatrix) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", m.nrows(), m.ncols(), m.nnz());
    for i in 0..m.nrows() {
        let (cols, vals) = m.row(i);
        for (c, v) in cols.iter().zip(vals) {
            let _ = writeln!(out, "{} {} {:.16e}", i, c, v);
        }
    }
    out
}

/// Export a vector, one value per line, 17 significant digits.
pub fn export_vector(v: &[f64]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for x in v {
        let _ = writeln!(out, "{:.16e}", x);
    }
    out
}
