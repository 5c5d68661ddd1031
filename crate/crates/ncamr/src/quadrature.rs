//! Numerical integration rules on the reference elements: Gauss-Legendre
//! on `[0,1]`, tensor products for the square and cube, and a collapsed
//! (Duffy) tensor rule on the unit triangle.

use crate::geom::Geom;

/// A quadrature rule: points (z = 0 in 2D/1D) and weights.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// `n`-point Gauss-Legendre rule on `[0,1]` (exact for degree `2n-1`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for k in 0..n {
        // Newton from the Chebyshev guess, on [-1,1].
        let mut t = -((std::f64::consts::PI * (k as f64 + 0.75)) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_pair(n, t);
            dp = d;
            let step = p / d;
            t -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        x[k] = 0.5 * (t + 1.0);
        w[k] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
    // symmetrize
    for k in 0..n / 2 {
        let s = 0.5 * (x[k] + 1.0 - x[n - 1 - k]);
        x[k] = s;
        x[n - 1 - k] = 1.0 - s;
        let wm = 0.5 * (w[k] + w[n - 1 - k]);
        w[k] = wm;
        w[n - 1 - k] = wm;
    }
    (x, w)
}

fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut pm, mut p) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let pn = ((2 * k + 1) as f64 * x * p - k as f64 * pm) / (k + 1) as f64;
        pm = p;
        p = pn;
    }
    let dp = n as f64 * (pm - x * p) / (1.0 - x * x);
    (p, dp)
}

impl QuadratureRule {
    /// Rule on the reference element of `geom`, exact (for the tensor
    /// geometries) for polynomials of degree `2n-1` per axis, where
    /// `n = points_per_axis`.
    pub fn for_geom(geom: Geom, points_per_axis: usize) -> Self {
        let (x, w) = gauss_legendre(points_per_axis);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        match geom {
            Geom::Quad => {
                for (i, &xi) in x.iter().enumerate() {
                    for (j, &xj) in x.iter().enumerate() {
                        points.push([xi, xj, 0.0]);
                        weights.push(w[i] * w[j]);
                    }
                }
            }
            Geom::Hex => {
                for (i, &xi) in x.iter().enumerate() {
                    for (j, &xj) in x.iter().enumerate() {
                        for (k, &xk) in x.iter().enumerate() {
                            points.push([xi, xj, xk]);
                            weights.push(w[i] * w[j] * w[k]);
                        }
                    }
                }
            }
            Geom::Tri => {
                // Duffy transform of the square: (u, v) → (u(1-v), v),
                // Jacobian (1-v); maps [0,1]² onto the unit triangle.
                for (i, &u) in x.iter().enumerate() {
                    for (j, &v) in x.iter().enumerate() {
                        points.push([u * (1.0 - v), v, 0.0]);
                        weights.push(w[i] * w[j] * (1.0 - v));
                    }
                }
            }
        }
        QuadratureRule { points, weights }
    }

    /// 1D rule embedded on `[0,1]` (for edge/trace integrals).
    pub fn segment(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        QuadratureRule {
            points: x.iter().map(|&t| [t, 0.0, 0.0]).collect(),
            weights: w,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // [TRIVIAL] ∫₀¹ x^k dx = 1/(k+1) for k ≤ 2n−1.
        for n in 1..=8 {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for k in 0..2 * n {
                let got: f64 =
                    x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(k as i32)).sum();
                let want = 1.0 / (k as f64 + 1.0);
                assert!((got - want).abs() < 1e-13, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn known_two_point_rule() {
        // [DERIVED] 2-point Gauss on [0,1]: x = (1 ∓ 1/√3)/2, w = 1/2.
        let (x, w) = gauss_legendre(2);
        let d = 0.5 / 3.0f64.sqrt();
        assert!((x[0] - (0.5 - d)).abs() < 1e-14);
        assert!((x[1] - (0.5 + d)).abs() < 1e-14);
        assert!((w[0] - 0.5).abs() < 1e-14 && (w[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn tensor_rules_have_correct_measure() {
        // [TRIVIAL] weights sum to the reference measure: 1, 1, 1/2.
        for (geom, measure) in [(Geom::Quad, 1.0), (Geom::Hex, 1.0), (Geom::Tri, 0.5)] {
            let q = QuadratureRule::for_geom(geom, 4);
            assert!((q.weights.iter().sum::<f64>() - measure).abs() < 1e-13);
        }
    }

    #[test]
    fn triangle_rule_integrates_monomials() {
        // [DERIVED] ∫_T x^a y^b = a! b! / (a+b+2)!  on the unit triangle.
        fn fact(k: u32) -> f64 {
            (1..=k).map(|v| v as f64).product::<f64>().max(1.0)
        }
        let q = QuadratureRule::for_geom(Geom::Tri, 6);
        for a in 0..4u32 {
            for b in 0..4u32 {
                let got: f64 = q
                    .points
                    .iter()
                    .zip(&q.weights)
                    .map(|(p, &w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                    .sum();
                let want = fact(a) * fact(b) / fact(a + b + 2);
                assert!((got - want).abs() < 1e-12, "a={a} b={b} got={got} want={want}");
            }
        }
    }
}
