//! The AMR driver: a wave-front benchmark problem with known exact
//! solution, exact per-element energy-norm errors, isotropic and
//! anisotropic marking, and the solve–estimate–mark–refine loop.

use std::time::Instant;

use crate::assembly::{
    assemble_poisson, det3, eliminate_essential_bc, restrict_system, solve_cg, GeomMap,
};
use crate::conforming::conforming_operator;
use crate::fespace::FESpace;
use crate::geom::{Geom, REF_X, REF_Y, REF_Z};
use crate::interfaces::build_interface_list;
use crate::ncmesh::NCMesh;
use crate::quadrature::QuadratureRule;
use crate::Result;

/// Quadrature points per axis for "exact" error integrals (an `n`-point
/// Gauss rule integrates degree `2n-1`; 16 points cover order 31).
const ERROR_QUAD_PTS: usize = 16;

// ---------------------------------------------------------------------------
// Benchmark problem
// ---------------------------------------------------------------------------

/// A manufactured Poisson problem with a sharp circular (spherical) wave
/// front:
///
/// ```text
///   u(x) = atan(α (ρ - r)),   ρ = |x - x_c|,
/// ```
///
/// solved on the unit square/cube with Dirichlet data `u` and right-hand
/// side `f = -Δu`.  The front center sits slightly outside the domain so
/// `ρ` never vanishes inside it.
#[derive(Clone, Debug)]
pub struct BenchmarkProblem {
    pub dim: usize,
    pub alpha: f64,
    pub center: [f64; 3],
    pub radius: f64,
}

impl BenchmarkProblem {
    /// The 2D wave front: α = 200, center (-0.05, -0.05), radius 0.7.
    pub fn wavefront_2d() -> Self {
        BenchmarkProblem {
            dim: 2,
            alpha: 200.0,
            center: [-0.05, -0.05, 0.0],
            radius: 0.7,
        }
    }

    /// The 3D wave front: same sharpness, center (-0.05, -0.05, -0.05).
    pub fn wavefront_3d() -> Self {
        BenchmarkProblem {
            dim: 3,
            alpha: 200.0,
            center: [-0.05, -0.05, -0.05],
            radius: 0.7,
        }
    }

    fn rho(&self, x: [f64; 3]) -> f64 {
        let mut s = 0.0;
        for d in 0..self.dim {
            s += (x[d] - self.center[d]) * (x[d] - self.center[d]);
        }
        s.sqrt()
    }

    /// Exact solution.
    pub fn exact(&self, x: [f64; 3]) -> f64 {
        (self.alpha * (self.rho(x) - self.radius)).atan()
    }

    /// Exact gradient (zero-padded to 3 components).
    pub fn exact_grad(&self, x: [f64; 3]) -> [f64; 3] {
        let rho = self.rho(x);
        let t = self.alpha * (rho - self.radius);
        let dudr = self.alpha / (1.0 + t * t);
        let mut g = [0.0; 3];
        for d in 0..self.dim {
            g[d] = dudr * (x[d] - self.center[d]) / rho;
        }
        g
    }

    /// Manufactured right-hand side `f = -Δu`.  For the radial profile
    /// `u(ρ)`: `Δu = u''(ρ) + (dim-1) u'(ρ)/ρ` with
    /// `u' = α/(1+t²)`, `u'' = -2α²t/(1+t²)²`, `t = α(ρ-r)`.
    pub fn rhs(&self, x: [f64; 3]) -> f64 {
        let rho = self.rho(x);
        let t = self.alpha * (rho - self.radius);
        let s = 1.0 + t * t;
        2.0 * self.alpha * self.alpha * t / (s * s)
            - (self.dim as f64 - 1.0) * self.alpha / (rho * s)
    }

    /// The initial conforming mesh: 4×4 unit-square quads (2D) or 4×4×4
    /// unit-cube hexes (3D).
    pub fn initial_mesh(&self) -> NCMesh {
        let n = 4u32;
        let h = 1.0 / n as f64;
        let mut m = NCMesh::new(self.dim);
        let mut ids = std::collections::HashMap::new();
        if self.dim == 2 {
            for j in 0..=n {
                for i in 0..=n {
                    ids.insert((i, j, 0), m.add_vertex([i as f64 * h, j as f64 * h, 0.0]));
                }
            }
            for j in 0..n {
                for i in 0..n {
                    m.add_root(
                        Geom::Quad,
                        &[
                            ids[&(i, j, 0)],
                            ids[&(i + 1, j, 0)],
                            ids[&(i + 1, j + 1, 0)],
                            ids[&(i, j + 1, 0)],
                        ],
                    )
                    .unwrap();
                }
            }
        } else {
            for k in 0..=n {
                for j in 0..=n {
                    for i in 0..=n {
                        ids.insert(
                            (i, j, k),
                            m.add_vertex([i as f64 * h, j as f64 * h, k as f64 * h]),
                        );
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
        }
        m
    }
}

// ---------------------------------------------------------------------------
// Error estimation (exact, since u is known)
// ---------------------------------------------------------------------------

/// Reusable shape-function evaluator for one mesh/space pair.
struct ShapeEval {
    basis: crate::basis::Basis1D,
    tri: Option<crate::basis::TriBasis>,
}

impl ShapeEval {
    fn new(mesh: &NCMesh, space: &FESpace) -> Self {
        let has_tri = mesh
            .dfs_leaves()
            .iter()
            .any(|&l| mesh.element(l).is_some_and(|e| e.geom == Geom::Tri));
        ShapeEval {
            basis: crate::basis::Basis1D::gauss_lobatto(space.order()),
            tri: if has_tri { Some(crate::basis::TriBasis::new(space.order())) } else { None },
        }
    }

    /// Gradient of the discrete solution at a reference point, physical
    /// frame (`∇φ = J⁻ᵀ ∇̂φ`).
    fn solution_gradient(
        &self,
        geom: Geom,
        dofs: &[usize],
        u_hat: &[f64],
        pt: [f64; 3],
        jinv: &[[f64; 3]; 3],
    ) -> [f64; 3] {
        let (_, grads) = crate::assembly::shapes_at(geom, &self.basis, self.tri.as_ref(), pt);
        let mut g = [0.0; 3];
        for (gi, &dof) in grads.iter().zip(dofs) {
            let c = u_hat[dof];
            for a in 0..3 {
                g[a] += c * (jinv[0][a] * gi[0] + jinv[1][a] * gi[1] + jinv[2][a] * gi[2]);
            }
        }
        g
    }
}

/// Exact per-element energy-norm errors
/// `e_i = (∫_{K_i} |∇(u_h - u)|² dx)^{1/2}`, one entry per leaf in
/// `mesh.dfs_leaves()` order.  `u_hat` is the prolonged solution (size N̂).
pub fn element_errors(
    mesh: &NCMesh,
    space: &FESpace,
    u_hat: &[f64],
    problem: &BenchmarkProblem,
) -> Vec<f64> {
    let eval = ShapeEval::new(mesh, space);
    let mut errors = Vec::new();
    for leaf in mesh.dfs_leaves() {
        let map = GeomMap::new(mesh, leaf);
        let rule = QuadratureRule::for_geom(map.geom, ERROR_QUAD_PTS);
        let dofs = space.element_dofs(mesh, leaf);
        let mut acc = 0.0;
        for (q, &pt) in rule.points.iter().enumerate() {
            let j = map.jacobian(pt);
            let det = det3(&j);
            let jinv = crate::assembly::inv3(&j, det);
            let gh = eval.solution_gradient(map.geom, &dofs, u_hat, pt, &jinv);
            let ge = problem.exact_grad(map.point(pt));
            let mut d2 = 0.0;
            for a in 0..3 {
                d2 += (gh[a] - ge[a]) * (gh[a] - ge[a]);
            }
            acc += rule.weights[q] * det * d2;
        }
        errors.push(acc.sqrt());
    }
    errors
}

// ---------------------------------------------------------------------------
// Marking
// ---------------------------------------------------------------------------

/// Indices of the elements whose error exceeds 70% of the maximum.
/// Scale-invariant; marks at least the argmax whenever some error is
/// positive.
pub fn mark_isotropic(errors: &[f64]) -> Vec<usize> {
    let max = errors.iter().cloned().fold(0.0f64, f64::max);
    errors
        .iter()
        .enumerate()
        .filter(|&(_, &e)| e > 0.7 * max)
        .map(|(i, _)| i)
        .collect()
}

/// Per-axis anisotropic indicators for one element:
/// `a_j = ∫_K (J^{(j)} · ∇(u_h - u))² dx` with `J^{(j)}` the j-th Jacobian
/// column.
fn axis_indicators(
    mesh: &NCMesh,
    space: &FESpace,
    eval: &ShapeEval,
    u_hat: &[f64],
    problem: &BenchmarkProblem,
    leaf: u32,
) -> Vec<f64> {
    let map = GeomMap::new(mesh, leaf);
    let dim = problem.dim;
    let rule = QuadratureRule::for_geom(map.geom, ERROR_QUAD_PTS);
    let dofs = space.element_dofs(mesh, leaf);
    let mut a = vec![0.0; dim];
    for (q, &pt) in rule.points.iter().enumerate() {
        let j = map.jacobian(pt);
        let det = det3(&j);
        let jinv = crate::assembly::inv3(&j, det);
        let gh = eval.solution_gradient(map.geom, &dofs, u_hat, pt, &jinv);
        let ge = problem.exact_grad(map.point(pt));
        let diff = [gh[0] - ge[0], gh[1] - ge[1], gh[2] - ge[2]];
        for axis in 0..dim {
            // Column `axis` of J is (j[0][axis], j[1][axis], j[2][axis]).
            let proj = j[0][axis] * diff[0] + j[1][axis] * diff[1] + j[2][axis] * diff[2];
            a[axis] += rule.weights[q] * det * proj * proj;
        }
    }
    a
}

/// Choose a refinement type for each marked element: axis `j` is refined
/// iff its indicator exceeds `τ_a = (0.6/dim) Σ_j a_j`; if no axis
/// qualifies (or the geometry only refines isotropically), fall back to
/// isotropic refinement.  Returns `(leaf, ref_type)` pairs.
pub fn mark_anisotropic(
    mesh: &NCMesh,
    space: &FESpace,
    u_hat: &[f64],
    problem: &BenchmarkProblem,
    marked: &[u32],
) -> Vec<(u32, u8)> {
    let eval = ShapeEval::new(mesh, space);
    let axis_bits = [REF_X, REF_Y, REF_Z];
    marked
        .iter()
        .map(|&leaf| {
            let geom = mesh.element(leaf).unwrap().geom;
            if geom == Geom::Tri {
                return (leaf, geom.iso_ref_type());
            }
            let a = axis_indicators(mesh, space, &eval, u_hat, problem, leaf);
            let tau = 0.6 / problem.dim as f64 * a.iter().sum::<f64>();
            let mut rt = 0u8;
            for (axis, &aj) in a.iter().enumerate() {
                if aj > tau {
                    rt |= axis_bits[axis];
                }
            }
            if rt == 0 {
                rt = geom.iso_ref_type();
            }
            (leaf, rt)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// The AMR loop
// ---------------------------------------------------------------------------

/// Refinement strategy of [`amr_loop`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmrMode {
    /// Refine every element isotropically each iteration.
    Uniform,
    /// Refine the high-error elements isotropically.
    Isotropic,
    /// Refine the high-error elements along their dominant error axes.
    Anisotropic,
}

impl AmrMode {
    pub fn parse(s: &str) -> Option<AmrMode> {
        match s {
            "uniform" => Some(AmrMode::Uniform),
            "iso" => Some(AmrMode::Isotropic),
            "aniso" => Some(AmrMode::Anisotropic),
            _ => None,
        }
    }
}

/// One iteration record of the AMR loop.
#[derive(Clone, Debug)]
pub struct ConvergenceRecord {
    pub iter: usize,
    /// True (conforming) DOFs N.
    pub dofs: usize,
    /// Total energy-norm error `(Σ e_i²)^{1/2}`.
    pub error: f64,
    /// Leaf element count.
    pub elements: usize,
    /// Constraint-resolution sweep count of this iteration's operator.
    pub irregularity: usize,
    /// Wall time of the iteration (solve + estimate), seconds.
    pub seconds: f64,
}

/// The per-iteration history of one AMR run.
#[derive(Clone, Debug, Default)]
pub struct ConvergenceLog {
    pub records: Vec<ConvergenceRecord>,
}

impl ConvergenceLog {
    /// CSV rendering: `iter,dofs,error,elements,irregularity,seconds`.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("iter,dofs,error,elements,irregularity,seconds\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:.12e},{},{},{:.3}",
                r.iter, r.dofs, r.error, r.elements, r.irregularity, r.seconds
            );
        }
        out
    }
}

/// Everything one benchmark solve on a fixed mesh produces.
pub struct SolveOutcome {
    /// The nodal space the solve was performed in.
    pub space: FESpace,
    /// Prolonged (full-space) solution coefficients.
    pub u_hat: Vec<f64>,
    /// Exact per-leaf energy-norm errors, in depth-first leaf order.
    pub errors: Vec<f64>,
    /// Conforming (true) DOF count after boundary elimination.
    pub true_dofs: usize,
    /// Constraint-resolution sweep count of the operator.
    pub sweeps: usize,
}

/// Solves the benchmark's Poisson problem on `mesh` with order-`p`
/// elements — variational restriction to true DOFs, exact Dirichlet data
/// eliminated after restriction, conjugate gradients — and measures the
/// exact energy-norm error of every leaf.
pub fn solve_benchmark(
    problem: &BenchmarkProblem,
    mesh: &NCMesh,
    p: usize,
) -> Result<SolveOutcome> {
    let fes = FESpace::new(mesh, p);
    let op = conforming_operator(mesh, &fes)?;
    let sys = assemble_poisson(mesh, &fes, |x| problem.rhs(x))?;
    let red = restrict_system(&sys, &op)?;
    let ifc = build_interface_list(mesh)?;
    let pos = fes.dof_positions(mesh);
    let bdr: Vec<usize> = fes
        .boundary_dofs(mesh, &ifc)
        .into_iter()
        .filter(|&d| op.true_col(d).is_some())
        .collect();
    let vals: Vec<f64> = bdr.iter().map(|&d| problem.exact(pos[d])).collect();
    let bc = eliminate_essential_bc(&red, &op, &bdr, &vals)?;
    let n = bc.num_dofs();
    let u = solve_cg(&bc, 1e-10, 40 * n + 1000)?;
    let u_hat = op.prolong(&u);
    let errors = element_errors(mesh, &fes, &u_hat, problem);
    Ok(SolveOutcome { space: fes, u_hat, errors, true_dofs: n, sweeps: op.sweeps() })
}

/// Run the adaptation loop (solve → estimate → record → mark → refine →
/// make consistent → rebuild) until the true-DOF count exceeds
/// `max_dofs`.  Returns the mesh in its final state along with the log.
pub fn amr_loop(
    problem: &BenchmarkProblem,
    p: usize,
    max_dofs: usize,
    mode: AmrMode,
) -> Result<(NCMesh, ConvergenceLog)> {
    let mut mesh = problem.initial_mesh();
    let mut log = ConvergenceLog::default();
    for iter in 0.. {
        let t0 = Instant::now();
        let out = solve_benchmark(problem, &mesh, p)?;
        let total = out.errors.iter().map(|e| e * e).sum::<f64>().sqrt();
        log.records.push(ConvergenceRecord {
            iter,
            dofs: out.true_dofs,
            error: total,
            elements: out.errors.len(),
            irregularity: out.sweeps,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if out.true_dofs >= max_dofs {
            break;
        }

        let leaves = mesh.dfs_leaves();
        let plan: Vec<(u32, u8)> = match mode {
            AmrMode::Uniform => leaves
                .iter()
                .map(|&l| (l, mesh.element(l).unwrap().geom.iso_ref_type()))
                .collect(),
            AmrMode::Isotropic => mark_isotropic(&out.errors)
                .into_iter()
                .map(|i| {
                    let l = leaves[i];
                    (l, mesh.element(l).unwrap().geom.iso_ref_type())
                })
                .collect(),
            AmrMode::Anisotropic => {
                let marked: Vec<u32> =
                    mark_isotropic(&out.errors).into_iter().map(|i| leaves[i]).collect();
                mark_anisotropic(&mesh, &out.space, &out.u_hat, problem, &marked)
            }
        };
        if plan.is_empty() {
            break;
        }
        for (leaf, rt) in plan {
            mesh.refine(leaf, rt)?;
        }
        mesh.ensure_consistency()?;
    }
    Ok((mesh, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::REF_XY;
    use crate::testutil::quad_grid;

    // [TRIVIAL] If u itself lies in the space (u = x at p ≥ 1) and u_h is
    // its interpolant, every element error vanishes.
    #[test]
    fn interpolant_of_linear_solution_has_zero_error() {
        // A problem whose "exact" fields we override by hand is clumsy;
        // instead check the quadrature machinery directly: u_h = nodal
        // interpolant of the benchmark's exact u must produce small (not
        // zero) errors, while interpolating onto the gradient of an
        // in-space function gives zero.  We test the in-space case via a
        // linear u against a purpose-built problem.
        let linear = BenchmarkProblem {
            dim: 2,
            alpha: 0.0, // u = atan(0) = 0, ∇u = 0
            center: [-0.05, -0.05, 0.0],
            radius: 0.7,
        };
        let m = quad_grid(2);
        let fes = FESpace::new(&m, 1);
        let u_hat = vec![0.0; fes.num_dofs()];
        let errs = element_errors(&m, &fes, &u_hat, &linear);
        assert!(errs.iter().all(|&e| e < 1e-12));
    }

    // [DERIVED] Single bilinear element, u = x², u_h = nodal interpolant
    // at p=1: the interpolant on [0,1]² is u_h = x (nodal values 0 at
    // x=0, 1 at x=1), so ∇(u_h-u) = (1-2x, 0) and
    // ∫₀¹ (1-2x)² dx = 1/3, giving e = 1/√3.
    #[test]
    fn quadratic_error_on_single_element() {
        // BenchmarkProblem cannot represent u = x², so run the same
        // quadrature loop against the hand-written gradient (2x, 0).
        let m = quad_grid(1);
        let fes = FESpace::new(&m, 1);
        // u_h = x: nodal values at the 4 corners.
        let pos = fes.dof_positions(&m);
        let u_hat: Vec<f64> = pos.iter().map(|p| p[0]).collect();
        let eval = ShapeEval::new(&m, &fes);
        let leaf = m.dfs_leaves()[0];
        let map = GeomMap::new(&m, leaf);
        let rule = QuadratureRule::for_geom(Geom::Quad, ERROR_QUAD_PTS);
        let dofs = fes.element_dofs(&m, leaf);
        let mut acc = 0.0;
        for (q, &pt) in rule.points.iter().enumerate() {
            let j = map.jacobian(pt);
            let det = det3(&j);
            let jinv = crate::assembly::inv3(&j, det);
            let gh = eval.solution_gradient(map.geom, &dofs, &u_hat, pt, &jinv);
            let x = map.point(pt)[0];
            let ge = [2.0 * x, 0.0, 0.0];
            let mut d2 = 0.0;
            for a in 0..3 {
                d2 += (gh[a] - ge[a]) * (gh[a] - ge[a]);
            }
            acc += rule.weights[q] * det * d2;
        }
        let e = acc.sqrt();
        assert!((e - (1.0f64 / 3.0).sqrt()).abs() < 1e-12, "e = {e}");
    }

    // [TRIVIAL] Threshold marking: relative rule, argmax always marked,
    // scaling-invariant.
    #[test]
    fn isotropic_marking_thresholds() {
        assert_eq!(mark_isotropic(&[1.0, 0.8, 0.6]), vec![0, 1]);
        assert_eq!(mark_isotropic(&[2.0, 2.0, 2.0]), vec![0, 1, 2]);
        let base = [0.31, 0.9, 0.05, 0.71];
        let scaled: Vec<f64> = base.iter().map(|e| e * 123.456).collect();
        assert_eq!(mark_isotropic(&base), mark_isotropic(&scaled));
        assert_eq!(mark_isotropic(&base), vec![1, 3]);
    }

    // [TRIVIAL] Anisotropic marking on manufactured gradients: an error
    // varying only along x yields X-only refinement; a radially symmetric
    // error refines isotropically.
    #[test]
    fn anisotropic_axis_selection() {
        // u_h = 0 against u with ∇u = (g(x), 0): a_y vanishes.
        // The benchmark with center far left on the x-axis and the element
        // small enough approximates a pure-x variation; instead of
        // approximating, drive the projection directly: a 2:1 stretched
        // quad with the benchmark front crossing it vertically.
        let problem = BenchmarkProblem {
            dim: 2,
            alpha: 50.0,
            center: [-10.0, 0.5, 0.0], // nearly vertical front inside [0,1]²
            radius: 10.6,              // front at x ≈ 0.6
        };
        let m = {
            let mut m = NCMesh::new(2);
            let v: Vec<u32> = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
                .iter()
                .map(|&[x, y]| m.add_vertex([x, y, 0.0]))
                .collect();
            m.add_root(Geom::Quad, &[v[0], v[1], v[2], v[3]]).unwrap();
            m
        };
        let fes = FESpace::new(&m, 1);
        let u_hat = vec![0.0; fes.num_dofs()];
        let leaf = m.dfs_leaves()[0];
        let plan = mark_anisotropic(&m, &fes, &u_hat, &problem, &[leaf]);
        assert_eq!(plan, vec![(leaf, REF_X)]);

        // Radially symmetric error about the element center: isotropic.
        let symmetric = BenchmarkProblem {
            dim: 2,
            alpha: 30.0,
            center: [0.5, 0.5, 0.0],
            radius: 0.25,
        };
        let plan = mark_anisotropic(&m, &fes, &u_hat, &symmetric, &[leaf]);
        assert_eq!(plan, vec![(leaf, REF_XY)]);
    }

    // The driver end to end on a tiny budget: errors decrease, element
    // count grows monotonically in adaptive modes, the first iteration is
    // conforming (irregularity 0), and the CSV is well formed.
    #[test]
    fn amr_loop_smoke_2d() {
        let problem = BenchmarkProblem::wavefront_2d();
        let (mesh, log) = amr_loop(&problem, 1, 400, AmrMode::Isotropic).unwrap();
        assert!(log.records.len() >= 3);
        assert_eq!(log.records[0].irregularity, 0);
        assert_eq!(log.records[0].elements, 16);
        assert!(log.records.last().unwrap().dofs >= 400);
        for w in log.records.windows(2) {
            assert!(w[1].elements > w[0].elements, "element count must grow");
        }
        // Total error at the end is lower than at the start.
        assert!(log.records.last().unwrap().error < log.records[0].error);
        assert!(mesh.leaves().len() == log.records.last().unwrap().elements);
        let csv = log.to_csv();
        assert!(csv.starts_with("iter,dofs,error,elements,irregularity,seconds\n"));
        assert_eq!(csv.lines().count(), log.records.len() + 1);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,"));
    }
}
