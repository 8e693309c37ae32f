//! Sparse matrices and the two solvers the optimizers need: an envelope
//! (skyline) LDLᵀ factorization under reverse Cuthill-McKee ordering, and
//! Jacobi-preconditioned conjugate gradients for systems too large to factor.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Compressed sparse row matrix with sorted, unique column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles from (row, col, value) triplets; duplicates are summed in
    /// input order, so the result is deterministic for a fixed input order.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut trip: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        // Stable sort keeps the summation order of duplicates.
        trip.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(trip.len());
        let mut values = Vec::with_capacity(trip.len());
        let mut i = 0;
        while i < trip.len() {
            let (r, c, mut v) = trip[i];
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            i += 1;
            while i < trip.len() && trip[i].0 == r && trip[i].1 == c {
                v += trip[i].2;
                i += 1;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Builds directly from CSR arrays; columns must be sorted and unique
    /// within each row.
    pub fn from_raw(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        assert_eq!(row_ptr.len(), nrows + 1);
        assert_eq!(col_idx.len(), values.len());
        assert_eq!(row_ptr[nrows], values.len());
        debug_assert!((0..nrows).all(|r| {
            let c = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            c.windows(2).all(|w| w[0] < w[1]) && c.iter().all(|&x| x < ncols)
        }));
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
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

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    /// Applies the matrix to each coordinate of a vector field.
    pub fn mul_vec3(&self, x: &[Vec3]) -> Vec<Vec3> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter()
                    .zip(vals)
                    .fold(Vec3::zeros(), |acc, (&c, &v)| acc + x[c] * v)
            })
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                trip.push((c, i, v));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, trip)
    }

    /// Product `self * other`.
    pub fn mul_mat(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut trip = Vec::new();
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut touched = Vec::new();
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            for (&k, &a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(k);
                for (&j, &b) in cb.iter().zip(vb) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                trip.push((i, j, acc[j]));
            }
            touched.clear();
        }
        CsrMatrix::from_triplets(self.nrows, other.ncols, trip)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(i, c)] = v;
            }
        }
        m
    }

    pub(crate) fn pattern(&self) -> (&[usize], &[usize]) {
        (&self.row_ptr, &self.col_idx)
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric sparsity pattern. Returns
/// `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(row_ptr: &[usize], col_idx: &[usize]) -> Vec<usize> {
    let n = row_ptr.len() - 1;
    let degree: Vec<usize> = (0..n).map(|i| row_ptr[i + 1] - row_ptr[i]).collect();
    let neighbors = |i: usize| &col_idx[row_ptr[i]..row_ptr[i + 1]];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut level = vec![usize::MAX; n];

    // BFS returning the last node of the deepest level (lowest degree there).
    let bfs_far = |start: usize, level: &mut [usize]| -> (usize, usize) {
        let mut seen = vec![start];
        level[start] = 0;
        let mut q = VecDeque::from([start]);
        let mut far = (start, 0usize);
        while let Some(u) = q.pop_front() {
            let lu = level[u];
            if lu > far.1 || (lu == far.1 && degree[u] < degree[far.0]) {
                far = (u, lu);
            }
            for &v in neighbors(u) {
                if level[v] == usize::MAX {
                    level[v] = lu + 1;
                    seen.push(v);
                    q.push_back(v);
                }
            }
        }
        for v in seen {
            level[v] = usize::MAX;
        }
        far
    };

    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    let mut cands = Vec::new();
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        // Pseudo-peripheral start node.
        let mut start = seed;
        let mut depth = 0;
        for _ in 0..4 {
            let (far, d) = bfs_far(start, &mut level);
            if d <= depth {
                break;
            }
            depth = d;
            start = far;
        }
        visited[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let u = order[head];
            head += 1;
            cands.clear();
            cands.extend(neighbors(u).iter().copied().filter(|&v| !visited[v]));
            cands.sort_by_key(|&v| (degree[v], v));
            for &v in &cands {
                visited[v] = true;
                order.push(v);
            }
        }
    }
    order.reverse();
    order
}

/// Envelope LDLᵀ factorization of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct SkylineLdl {
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl SkylineLdl {
    /// Envelope size (stored off-diagonal entries) the factorization of `a`
    /// would need under RCM ordering, with the ordering itself.
    pub fn envelope(a: &CsrMatrix) -> (usize, Vec<usize>) {
        let (rp, ci) = a.pattern();
        let perm = reverse_cuthill_mckee(rp, ci);
        let first = Self::first_columns(a, &perm);
        let size = first.iter().enumerate().map(|(i, &f)| i - f).sum();
        (size, perm)
    }

    fn first_columns(a: &CsrMatrix, perm: &[usize]) -> Vec<usize> {
        let n = a.nrows();
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = inv[old];
            for &c in a.row(old).0 {
                let j = inv[c];
                if j < i {
                    first[i] = first[i].min(j);
                } else if i < j {
                    first[j] = first[j].min(i);
                }
            }
        }
        first
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let (_, perm) = Self::envelope(a);
        Self::factor_with_ordering(a, perm)
    }

    pub fn factor_with_ordering(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Solver("matrix is not square".into()));
        }
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let first = Self::first_columns(a, &perm);
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i]);
        }
        let mut lower = vec![0.0; start[n]];
        let mut diag = vec![0.0; n];
        // Scatter the lower triangle of the permuted matrix.
        for old in 0..n {
            let i = inv[old];
            let (cols, vals) = a.row(old);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = inv[c];
                if j < i {
                    lower[start[i] + j - first[i]] = v;
                } else if j == i {
                    diag[i] = v;
                }
            }
        }
        let max_diag = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        for i in 0..n {
            let fi = first[i];
            // Row i holds t_j = L_ij D_j while it is being computed.
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = lower[start[i] + j - fi];
                if k0 < j {
                    let ri = &lower[start[i] + k0 - fi..start[i] + j - fi];
                    let rj = &lower[start[j] + k0 - fj..start[j] + j - fj];
                    s -= dot(ri, rj);
                }
                lower[start[i] + j - fi] = s;
            }
            // Convert t_j to L_ij and accumulate the pivot.
            let mut d = diag[i];
            for j in fi..i {
                let t = lower[start[i] + j - fi];
                let l = t / diag[j];
                d -= t * l;
                lower[start[i] + j - fi] = l;
            }
            if !(d > max_diag * 1e-300) || !d.is_finite() {
                return Err(Error::Solver(format!(
                    "matrix is not positive definite (pivot {i} = {d:e})"
                )));
            }
            diag[i] = d;
        }
        // Rows of L store L_ik; the dot products above used rows j with the
        // same convention because row j was converted before row i began.
        Ok(SkylineLdl {
            perm,
            first,
            start,
            lower,
            diag,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.lower[self.start[i]..self.start[i + 1]];
            y[i] -= dot(row, &y[fi..i]);
        }
        for i in 0..n {
            y[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let yi = y[i];
            let row = &self.lower[self.start[i]..self.start[i + 1]];
            for (k, l) in row.iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Smallest pivot over largest pivot, a cheap conditioning indicator.
    pub fn pivot_ratio(&self) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for &d in &self.diag {
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if hi > 0.0 {
            lo / hi
        } else {
            0.0
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators; fixed order keeps results reproducible.
    let mut s = [0.0; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        for l in 0..4 {
            s[l] += a[4 * k + l] * b[4 * k + l];
        }
    }
    let mut tail = 0.0;
    for k in chunks * 4..a.len() {
        tail += a[k] * b[k];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

#[derive(Clone, Copy, Debug)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned conjugate gradients on a symmetric positive
/// definite matrix, starting from `x`.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = b.len();
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = vec![0.0; n];
    a.mul_vec_into(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bnorm = dot(b, b).sqrt().max(1e-300);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    let mut it = 0;
    while it < max_iter && rel > tol {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        it += 1;
    }
    CgOutcome {
        iterations: it,
        relative_residual: rel,
        converged: rel <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};

    fn random_spd(n: usize, density: f64, seed: u64) -> CsrMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut trip = Vec::new();
        for i in 0..n {
            for j in 0..i {
                if rng.gen::<f64>() < density {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    trip.push((i, j, v));
                    trip.push((j, i, v));
                    trip.push((i, i, v.abs()));
                    trip.push((j, j, v.abs()));
                }
            }
            trip.push((i, i, 0.1 + rng.gen::<f64>()));
        }
        CsrMatrix::from_triplets(n, n, trip)
    }

    #[test]
    fn triplet_duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 2, [(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(1, 0), 2.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn product_and_transpose_match_dense() {
        let a = random_spd(30, 0.2, 1);
        let b = random_spd(30, 0.1, 2);
        let dense = a.to_dense() * b.to_dense();
        assert!((a.mul_mat(&b).to_dense() - dense).abs().max() < 1e-12);
        assert_eq!(a.transpose().to_dense(), a.to_dense().transpose());
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = random_spd(50, 0.05, 3);
        let (rp, ci) = a.pattern();
        let mut p = reverse_cuthill_mckee(rp, ci);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn skyline_solves_like_dense_cholesky() {
        for seed in 0..5 {
            let a = random_spd(60, 0.08, seed);
            let b: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
            let x = SkylineLdl::factor(&a).unwrap().solve(&b);
            let dense = a.to_dense().cholesky().unwrap();
            let xd = dense.solve(&DVector::from_vec(b.clone()));
            let err = (DVector::from_vec(x) - xd).abs().max();
            assert!(err < 1e-10, "seed {seed}: {err}");
        }
    }

    #[test]
    fn skyline_rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(SkylineLdl::factor(&a).is_err());
    }

    #[test]
    fn cg_converges_on_spd() {
        let a = random_spd(80, 0.05, 9);
        let b: Vec<f64> = (0..80).map(|i| i as f64 / 80.0).collect();
        let mut x = vec![0.0; 80];
        let out = conjugate_gradient(&a, &b, &mut x, 1e-12, 1000);
        assert!(out.converged);
        let r = DMatrix::from(a.to_dense()) * DVector::from_vec(x) - DVector::from_vec(b);
        assert!(r.norm() < 1e-9);
    }
}
