//! Minimal sparse (CSR) and dense linear algebra used by assembly and the
//! conforming-interpolation operator: triplet assembly, sparse products
//! (including the variational restriction triple product `PᵀAP`), a
//! Jacobi-preconditioned conjugate-gradient solver, and a small dense
//! Gaussian-elimination solve for basis construction.

use crate::error::Error;
use crate::Result;

/// Compressed-sparse-row matrix.
#[derive(Clone, Debug, Default)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

/// Triplet (COO) accumulator; duplicate entries are summed on conversion.
#[derive(Clone, Debug)]
pub struct CooBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl CooBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        CooBuilder { nrows, ncols, entries: Vec::new() }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row as u32, col as u32, value));
        }
    }

    pub fn into_csr(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx: Vec<u32> = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(u32, u32)> = None;
        for &(r, c, v) in &self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }
}

impl CsrMatrix {
    /// Build directly from per-row (column, value) lists.
    pub fn from_rows(ncols: usize, rows: &[Vec<(u32, f64)>]) -> Self {
        let mut row_ptr = vec![0usize; rows.len() + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            let mut sorted = row.clone();
            sorted.sort_unstable_by_key(|&(c, _)| c);
            for &(c, v) in &sorted {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr[i + 1] = col_idx.len();
        }
        CsrMatrix { nrows: rows.len(), ncols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut s = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                s += v * x[c as usize];
            }
            y[i] = s;
        }
        y
    }

    /// `y = Aᵀ x`.
    pub fn mul_vec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c as usize] += v * x[i];
            }
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut row_ptr = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            row_ptr[c as usize + 1] += 1;
        }
        for i in 0..self.ncols {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut col_idx = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = row_ptr.clone();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let k = next[c as usize];
                col_idx[k] = i as u32;
                values[k] = v;
                next[c as usize] += 1;
            }
        }
        CsrMatrix { nrows: self.ncols, ncols: self.nrows, row_ptr, col_idx, values }
    }

    /// Sparse product `A * B` (Gustavson row-merge).
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let n = other.ncols;
        let mut acc = vec![0.0f64; n];
        let mut mark = vec![u32::MAX; n];
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0usize);
        let mut touched: Vec<u32> = Vec::new();
        for i in 0..self.nrows {
            touched.clear();
            let (cols, vals) = self.row(i);
            for (&k, &av) in cols.iter().zip(vals) {
                let (bcols, bvals) = other.row(k as usize);
                for (&j, &bv) in bcols.iter().zip(bvals) {
                    if mark[j as usize] != i as u32 {
                        mark[j as usize] = i as u32;
                        acc[j as usize] = 0.0;
                        touched.push(j);
                    }
                    acc[j as usize] += av * bv;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                let v = acc[j as usize];
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { nrows: self.nrows, ncols: n, row_ptr, col_idx, values }
    }

    /// Variational restriction triple product `Pᵀ A P`.
    pub fn restrict(a: &CsrMatrix, p: &CsrMatrix) -> CsrMatrix {
        p.transpose().matmul(&a.matmul(p))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows.min(self.ncols)];
        for (i, di) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            if let Ok(k) = cols.binary_search(&(i as u32)) {
                *di = vals[k];
            }
        }
        d
    }

    /// Dense copy, for small oracles and debugging.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                d[i][c as usize] = v;
            }
        }
        d
    }

    /// Entry lookup (zero if not stored).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&(j as u32)).map(|k| vals[k]).unwrap_or(0.0)
    }

    /// Maximum absolute difference against another matrix of equal shape.
    pub fn max_abs_diff(&self, other: &CsrMatrix) -> f64 {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut m = 0.0f64;
        for i in 0..self.nrows {
            let (c1, v1) = self.row(i);
            let (c2, v2) = other.row(i);
            let mut a = 0;
            let mut b = 0;
            while a < c1.len() || b < c2.len() {
                let ca = c1.get(a).copied().unwrap_or(u32::MAX);
                let cb = c2.get(b).copied().unwrap_or(u32::MAX);
                if ca == cb {
                    m = m.max((v1[a] - v2[b]).abs());
                    a += 1;
                    b += 1;
                } else if ca < cb {
                    m = m.max(v1[a].abs());
                    a += 1;
                } else {
                    m = m.max(v2[b].abs());
                    b += 1;
                }
            }
        }
        m
    }
}

/// Jacobi-preconditioned conjugate gradients for SPD systems.
///
/// Returns the solution and the iteration count; converged when
/// `‖r‖₂ ≤ rel_tol · ‖b‖₂` (or `‖b‖ = 0`).
pub fn cg_solve(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    assert_eq!(a.nrows(), a.ncols());
    assert_eq!(b.len(), a.nrows());
    let n = b.len();
    let mut diag = a.diagonal();
    for d in &mut diag {
        if *d <= 0.0 {
            *d = 1.0; // tolerate empty rows (shouldn't occur for SPD input)
        }
    }
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 0..max_iter {
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= rel_tol * bnorm {
            return Ok((x, it));
        }
        let ap = a.mul_vec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::NoConvergence {
                what: "conjugate gradients (matrix not positive definite)",
                iters: it,
                residual: rnorm / bnorm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rnorm <= rel_tol * bnorm {
        Ok((x, max_iter))
    } else {
        Err(Error::NoConvergence {
            what: "conjugate gradients",
            iters: max_iter,
            residual: rnorm / bnorm,
        })
    }
}

/// Dense Gaussian elimination with partial pivoting; solves `A x = b`.
///
/// Used for tiny systems (Vandermonde inversion, local traces, test
/// oracles).  Returns `None` for a singular matrix.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|r| r.len() == n));
    for k in 0..n {
        let mut piv = k;
        for i in k + 1..n {
            if a[i][k].abs() > a[piv][k].abs() {
                piv = i;
            }
        }
        if a[piv][k] == 0.0 {
            return None;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i][j] * b[j];
        }
        b[i] = s / a[i][i];
    }
    Some(b)
}

/// Dense inverse via [`dense_solve`] on unit vectors (column by column).
pub fn dense_inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut inv = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = dense_solve(a.to_vec(), e)?;
        for i in 0..n {
            inv[i][j] = col[i];
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn coo_roundtrip_sums_duplicates() {
        // [TRIVIAL] duplicate triplets accumulate.
        let mut b = CooBuilder::new(2, 3);
        b.add(0, 1, 1.0);
        b.add(0, 1, 2.5);
        b.add(1, 0, -1.0);
        b.add(1, 2, 4.0);
        let m = b.into_csr();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 1), 3.5);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(1, 2), 4.0);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn matmul_matches_dense_reference() {
        // [DERIVED] sparse product vs. straightforward dense product on a
        // random sparse pair.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (m, k, n) = (17, 13, 19);
        let mut ab = CooBuilder::new(m, k);
        let mut bb = CooBuilder::new(k, n);
        for _ in 0..60 {
            ab.add(rng.gen_range(0..m), rng.gen_range(0..k), rng.gen_range(-1.0..1.0));
            bb.add(rng.gen_range(0..k), rng.gen_range(0..n), rng.gen_range(-1.0..1.0));
        }
        let a = ab.into_csr();
        let b = bb.into_csr();
        let c = a.matmul(&b);
        let (da, db, dc) = (a.to_dense(), b.to_dense(), c.to_dense());
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..k {
                    s += da[i][l] * db[l][j];
                }
                assert!((s - dc[i][j]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn transpose_and_matvec_agree() {
        // [TRIVIAL] Aᵀx via dedicated kernel equals transpose().mul_vec.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut bb = CooBuilder::new(11, 7);
        for _ in 0..30 {
            bb.add(rng.gen_range(0..11), rng.gen_range(0..7), rng.gen_range(-1.0..1.0));
        }
        let a = bb.into_csr();
        let x: Vec<f64> = (0..11).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y1 = a.mul_vec_transpose(&x);
        let y2 = a.transpose().mul_vec(&x);
        for (u, v) in y1.iter().zip(&y2) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn cg_matches_dense_solve() {
        // [DERIVED] CG on a random SPD matrix (diagonally dominant)
        // reproduces the dense Gaussian-elimination solution.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 25;
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..i {
                if rng.gen_bool(0.2) {
                    let v = rng.gen_range(-1.0..1.0);
                    d[i][j] = v;
                    d[j][i] = v;
                }
            }
        }
        for (i, row) in d.iter_mut().enumerate() {
            let s: f64 = row.iter().map(|v: &f64| v.abs()).sum();
            row[i] = s + 1.0;
        }
        let mut bb = CooBuilder::new(n, n);
        for i in 0..n {
            for j in 0..n {
                bb.add(i, j, d[i][j]);
            }
        }
        let a = bb.into_csr();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (x, _) = cg_solve(&a, &b, 1e-12, 1000).unwrap();
        let xd = dense_solve(d, b).unwrap();
        for (u, v) in x.iter().zip(&xd) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v}");
        }
    }

    #[test]
    fn dense_inverse_roundtrip() {
        // [TRIVIAL] A · A⁻¹ = I for a small well-conditioned matrix.
        let a = vec![vec![4.0, 1.0, 0.0], vec![1.0, 3.0, -1.0], vec![0.0, -1.0, 2.0]];
        let inv = dense_inverse(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[i][k] * inv[k][j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((s - want).abs() < 1e-12);
            }
        }
    }
}
