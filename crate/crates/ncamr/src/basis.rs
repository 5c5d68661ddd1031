//! Nodal polynomial bases: Gauss-Lobatto point sets, 1D Lagrange bases
//! (tensorized by the finite-element space for quads and hexes), and a
//! Vandermonde-constructed nodal basis on the reference triangle.
//!
//! All reference coordinates live on `[0,1]` (and the unit triangle).

use crate::sparse::dense_inverse;

/// Legendre polynomial `P_n` and derivative `P'_n` at `x ∈ [-1,1]`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut pm, mut p) = (1.0, x);
    for k in 1..n {
        let pn = ((2 * k + 1) as f64 * x * p - k as f64 * pm) / (k + 1) as f64;
        pm = p;
        p = pn;
    }
    let dp = if x.abs() < 1.0 {
        n as f64 * (pm - x * p) / (1.0 - x * x)
    } else {
        // endpoint limit: P'_n(±1) = ±1^(n-1) n(n+1)/2
        let s = if x > 0.0 { 1.0 } else { (-1.0f64).powi(n as i32 - 1) };
        s * (n * (n + 1)) as f64 / 2.0
    };
    (p, dp)
}

/// `n ≥ 2` Gauss-Lobatto points on `[0,1]`, in increasing order.
///
/// These are the endpoints plus the roots of `P'_{n-1}`; they are the
/// interpolation nodes of the nodal basis, so element DOFs sit on
/// entity boundaries (corners, edge interiors, …).
pub fn gauss_lobatto(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let mut pts = vec![0.0; n];
    pts[n - 1] = 1.0;
    for k in 1..n - 1 {
        // Newton on P'_{n-1}, starting from the Chebyshev-Lobatto guess.
        let mut x = -(std::f64::consts::PI * k as f64 / (n - 1) as f64).cos();
        for _ in 0..100 {
            // d/dx P'_{n-1} from the Legendre ODE:
            // (1-x²) P''_n = 2x P'_n - n(n+1) P_n
            let (p, dp) = legendre(n - 1, x);
            let ddp = (2.0 * x * dp - ((n - 1) * n) as f64 * p) / (1.0 - x * x);
            let step = dp / ddp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        pts[k] = 0.5 * (x + 1.0);
    }
    // enforce exact symmetry
    for k in 0..n / 2 {
        let s = 0.5 * (pts[k] + (1.0 - pts[n - 1 - k]));
        pts[k] = s;
        pts[n - 1 - k] = 1.0 - s;
    }
    pts
}

/// 1D Lagrange basis on a given node set.
#[derive(Clone, Debug)]
pub struct Basis1D {
    pub nodes: Vec<f64>,
}

impl Basis1D {
    /// Nodal basis of polynomial order `p` on the `p+1` Gauss-Lobatto
    /// points of `[0,1]`.
    pub fn gauss_lobatto(p: usize) -> Self {
        Basis1D { nodes: gauss_lobatto(p + 1) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// All basis values at `x`.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let n = self.nodes.len();
        let mut phi = vec![1.0; n];
        for i in 0..n {
            for j in 0..n {
                if j != i {
                    phi[i] *= (x - self.nodes[j]) / (self.nodes[i] - self.nodes[j]);
                }
            }
        }
        phi
    }

    /// All basis values and derivatives at `x`.
    pub fn eval_deriv(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.nodes.len();
        let phi = self.eval(x);
        let mut dphi = vec![0.0; n];
        for i in 0..n {
            let mut sum = 0.0;
            for k in 0..n {
                if k == i {
                    continue;
                }
                let mut term = 1.0 / (self.nodes[i] - self.nodes[k]);
                for j in 0..n {
                    if j != i && j != k {
                        term *= (x - self.nodes[j]) / (self.nodes[i] - self.nodes[j]);
                    }
                }
                sum += term;
            }
            dphi[i] = sum;
        }
        (phi, dphi)
    }
}

/// Nodal basis on the unit triangle `(0,0),(1,0),(0,1)` of order `p ≤ 4`.
///
/// Node layout (the space's local ordering): the 3 corners, then `p-1`
/// Gauss-Lobatto interior points per edge in edge order, then interior
/// points (the centroid for `p = 3`; the three points with barycentric
/// coordinates `(1/2,1/4,1/4)` for `p = 4`).
#[derive(Clone, Debug)]
pub struct TriBasis {
    pub p: usize,
    pub nodes: Vec<[f64; 2]>,
    /// `coeff[m][i]`: coefficient of monomial `m` in basis function `i`.
    coeff: Vec<Vec<f64>>,
    /// monomial exponents (i, j) with i + j ≤ p
    monos: Vec<(u32, u32)>,
}

impl TriBasis {
    pub fn new(p: usize) -> Self {
        assert!((1..=4).contains(&p), "triangle basis supports orders 1..=4");
        let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let mut nodes: Vec<[f64; 2]> = corners.to_vec();
        let gl = gauss_lobatto(p + 1);
        for (a, b) in [(0usize, 1usize), (1, 2), (2, 0)] {
            for k in 1..p {
                let t = gl[k];
                nodes.push([
                    corners[a][0] + t * (corners[b][0] - corners[a][0]),
                    corners[a][1] + t * (corners[b][1] - corners[a][1]),
                ]);
            }
        }
        match p {
            3 => nodes.push([1.0 / 3.0, 1.0 / 3.0]),
            4 => {
                // barycentric (1/2,1/4,1/4) and its cyclic permutations
                for bc in [[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]] {
                    nodes.push([
                        bc[0] * corners[0][0] + bc[1] * corners[1][0] + bc[2] * corners[2][0],
                        bc[0] * corners[0][1] + bc[1] * corners[1][1] + bc[2] * corners[2][1],
                    ]);
                }
            }
            _ => {}
        }
        let mut monos = Vec::new();
        for t in 0..=p as u32 {
            for i in (0..=t).rev() {
                monos.push((i, t - i));
            }
        }
        assert_eq!(monos.len(), nodes.len());
        let n = nodes.len();
        let mut vand = vec![vec![0.0; n]; n];
        for (r, node) in nodes.iter().enumerate() {
            for (c, &(i, j)) in monos.iter().enumerate() {
                vand[r][c] = node[0].powi(i as i32) * node[1].powi(j as i32);
            }
        }
        let coeff = dense_inverse(&vand).expect("triangle Vandermonde is invertible");
        TriBasis { p, nodes, coeff, monos }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// All basis values at `(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> Vec<f64> {
        let n = self.len();
        let mut phi = vec![0.0; n];
        for (m, &(i, j)) in self.monos.iter().enumerate() {
            let v = x.powi(i as i32) * y.powi(j as i32);
            for (k, p) in phi.iter_mut().enumerate() {
                *p += self.coeff[m][k] * v;
            }
        }
        phi
    }

    /// All basis values and gradients at `(x, y)`.
    pub fn eval_grad(&self, x: f64, y: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
        let n = self.len();
        let mut phi = vec![0.0; n];
        let mut grad = vec![[0.0; 2]; n];
        for (m, &(i, j)) in self.monos.iter().enumerate() {
            let (fi, fj) = (i as f64, j as f64);
            let v = x.powi(i as i32) * y.powi(j as i32);
            let dx = if i == 0 { 0.0 } else { fi * x.powi(i as i32 - 1) * y.powi(j as i32) };
            let dy = if j == 0 { 0.0 } else { fj * x.powi(i as i32) * y.powi(j as i32 - 1) };
            for k in 0..n {
                let c = self.coeff[m][k];
                phi[k] += c * v;
                grad[k][0] += c * dx;
                grad[k][1] += c * dy;
            }
        }
        (phi, grad)
    }
}
