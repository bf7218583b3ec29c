//! Dense linear algebra on small row-major matrices.
//!
//! Every kernel that does arithmetic proportional to the problem size reports
//! its work to a thread-local flop counter (one multiply-add = 2 flops, products
//! known to be symmetric only compute and count their lower triangle). The
//! counter is what the complexity checks of the Riccati recursion and the
//! condensing kernels read; it costs one `Cell` update per kernel call.

use std::cell::Cell;
use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

thread_local! {
    static FLOPS: Cell<u64> = const { Cell::new(0) };
}

/// Thread-local floating point operation counter.
pub mod flops {
    use super::FLOPS;

    pub fn reset() {
        FLOPS.with(|f| f.set(0));
    }

    pub fn read() -> u64 {
        FLOPS.with(|f| f.get())
    }

    pub fn add(n: u64) {
        FLOPS.with(|f| f.set(f.get().wrapping_add(n)));
    }

    /// Runs `f` and returns its result together with the flops it spent.
    pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
        let start = read();
        let out = f();
        (out, read().wrapping_sub(start))
    }
}

#[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Mat::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    /// Builds a matrix from a row-major slice. Panics if the length is wrong.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major payload length");
        Mat {
            rows,
            cols,
            data: data.to_vec(),
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat {
            rows: r,
            cols: c,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.rows).all(|i| (0..self.cols).all(|j| i == j || self[(i, j)] == 0.0))
    }

    /// Largest absolute difference between the matrix and its transpose.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn symmetrize(&mut self) {
        debug_assert!(self.is_square());
        for i in 0..self.rows {
            for j in 0..i {
                let m = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = m;
                self[(j, i)] = m;
            }
        }
    }

    pub fn add_diag(&mut self, eps: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += eps;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        flops::add(2 * self.data.len() as u64);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Mat {
        let mut b = Mat::zeros(nr, nc);
        for i in 0..nr {
            b.row_mut(i)
                .copy_from_slice(&self.row(r0 + i)[c0..c0 + nc]);
        }
        b
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Mat) {
        for i in 0..b.rows {
            self.row_mut(r0 + i)[c0..c0 + b.cols].copy_from_slice(b.row(i));
        }
    }

    /// `self[r0.., c0..] += alpha * b`.
    pub fn add_block(&mut self, r0: usize, c0: usize, alpha: f64, b: &Mat) {
        flops::add(2 * (b.rows * b.cols) as u64);
        for i in 0..b.rows {
            let dst = &mut self.row_mut(r0 + i)[c0..c0 + b.cols];
            for (d, s) in dst.iter_mut().zip(b.row(i)) {
                *d += alpha * s;
            }
        }
    }

    /// `A * B`.
    pub fn mul(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.rows, "inner dimensions");
        let mut c = Mat::zeros(self.rows, b.cols);
        flops::add(2 * (self.rows * self.cols * b.cols) as u64);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let brow = b.row(k);
                let crow = c.row_mut(i);
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += a * bv;
                }
            }
        }
        c
    }

    /// `Aᵀ * B`.
    pub fn tr_mul(&self, b: &Mat) -> Mat {
        assert_eq!(self.rows, b.rows, "inner dimensions");
        let mut c = Mat::zeros(self.cols, b.cols);
        flops::add(2 * (self.rows * self.cols * b.cols) as u64);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = b.row(k);
            for (i, a) in arow.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let crow = c.row_mut(i);
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += a * bv;
                }
            }
        }
        c
    }

    /// `A * Bᵀ`.
    pub fn mul_tr(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.cols, "inner dimensions");
        let mut c = Mat::zeros(self.rows, b.rows);
        flops::add(2 * (self.rows * self.cols * b.rows) as u64);
        for i in 0..self.rows {
            for j in 0..b.rows {
                c[(i, j)] = dot_raw(self.row(i), b.row(j));
            }
        }
        c
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        flops::add(2 * (self.rows * self.cols) as u64);
        (0..self.rows).map(|i| dot_raw(self.row(i), x)).collect()
    }

    /// `y += alpha * A x`.
    pub fn gemv_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(self.cols, x.len());
        assert_eq!(self.rows, y.len());
        flops::add(2 * (self.rows * self.cols) as u64);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += alpha * dot_raw(self.row(i), x);
        }
    }

    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.cols];
        self.tr_gemv_acc(1.0, x, &mut y);
        y
    }

    /// `y += alpha * Aᵀ x`.
    pub fn tr_gemv_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(self.rows, x.len());
        assert_eq!(self.cols, y.len());
        flops::add(2 * (self.rows * self.cols) as u64);
        for (k, xk) in x.iter().enumerate() {
            let s = alpha * xk;
            if s == 0.0 {
                continue;
            }
            for (yi, a) in y.iter_mut().zip(self.row(k)) {
                *yi += s * a;
            }
        }
    }

    /// Quadratic form `½ xᵀ A x`.
    pub fn half_quad(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.mul_vec(x))
    }

    /// `self += alpha * v vᵀ` on a square matrix, both triangles.
    pub fn rank1(&mut self, alpha: f64, v: &[f64]) {
        let n = v.len();
        assert!(self.rows == n && self.cols == n);
        flops::add((n * (n + 1)) as u64);
        for i in 0..n {
            let s = alpha * v[i];
            if s == 0.0 {
                continue;
            }
            for j in 0..=i {
                self.data[i * n + j] += s * v[j];
            }
        }
        for i in 0..n {
            for j in 0..i {
                self.data[j * n + i] = self.data[i * n + j];
            }
        }
    }
}

/// `Xᵀ Y` for a product known to be symmetric (e.g. `Xᵀ (Q X)`); only the
/// lower triangle is computed and counted.
pub fn sym_tr_mul(x: &Mat, y: &Mat) -> Mat {
    assert_eq!(x.rows(), y.rows());
    assert_eq!(x.cols(), y.cols());
    let n = x.cols();
    let k = x.rows();
    flops::add((n * (n + 1) * k) as u64);
    let mut c = Mat::zeros(n, n);
    for r in 0..k {
        let xr = x.row(r);
        let yr = y.row(r);
        for i in 0..n {
            let xi = xr[i];
            if xi == 0.0 {
                continue;
            }
            for j in 0..=i {
                c.data[i * n + j] += xi * yr[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            c.data[j * n + i] = c.data[i * n + j];
        }
    }
    c
}

#[inline]
fn dot_raw(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    flops::add(2 * a.len() as u64);
    dot_raw(a, b)
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    flops::add(2 * x.len() as u64);
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Lower-triangular Cholesky factor `A + reg·I = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    /// Factorizes `a + reg·I`. On failure returns the index of the first
    /// non-positive pivot.
    pub fn factor(a: &Mat, reg: f64) -> Result<Self, usize> {
        assert!(a.is_square(), "cholesky of a non-square matrix");
        let n = a.rows();
        let mut l = Mat::zeros(n, n);
        let mut count = 0u64;
        for j in 0..n {
            let mut d = a[(j, j)] + reg;
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            count += 2 * j as u64;
            if !(d > 0.0) || !d.is_finite() {
                flops::add(count);
                return Err(j);
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            let inv = 1.0 / d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                {
                    let (li, lj) = (l.row(i), l.row(j));
                    for k in 0..j {
                        s -= li[k] * lj[k];
                    }
                }
                l[(i, j)] = s * inv;
            }
            count += (2 * j + 1) as u64 * (n - j - 1) as u64;
        }
        flops::add(count);
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn l(&self) -> &Mat {
        &self.l
    }

    /// Solves `L y = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        let n = self.dim();
        flops::add((n * n) as u64);
        for i in 0..n {
            let row = self.l.row(i);
            let mut s = b[i];
            for k in 0..i {
                s -= row[k] * b[k];
            }
            b[i] = s / row[i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward(&self, b: &mut [f64]) {
        let n = self.dim();
        flops::add((n * n) as u64);
        for i in (0..n).rev() {
            b[i] /= self.l[(i, i)];
            let bi = b[i];
            for k in 0..i {
                b[k] -= self.l[(i, k)] * bi;
            }
        }
    }

    /// Solves `(L Lᵀ) x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.forward(b);
        self.backward(b);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// `L⁻¹ B` for a matrix right-hand side.
    pub fn forward_mat(&self, b: &Mat) -> Mat {
        let n = self.dim();
        assert_eq!(b.rows(), n);
        let m = b.cols();
        let mut x = b.clone();
        flops::add((n * n * m) as u64);
        for i in 0..n {
            let lii = self.l[(i, i)];
            for k in 0..i {
                let lik = self.l[(i, k)];
                if lik == 0.0 {
                    continue;
                }
                for j in 0..m {
                    let v = x[(k, j)];
                    x[(i, j)] -= lik * v;
                }
            }
            for j in 0..m {
                x[(i, j)] /= lii;
            }
        }
        x
    }

    /// `(L Lᵀ)⁻¹ B`.
    pub fn solve_mat(&self, b: &Mat) -> Mat {
        let mut out = Mat::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let col = self.solve(&b.col(j));
            for (i, v) in col.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }
}

/// Positive semi-definiteness test by diagonally pivoted Cholesky without any
/// regularization. Pivots below `tol` (relative to the largest diagonal entry)
/// end the factorization; the matrix is accepted only if the remaining Schur
/// complement is numerically zero.
pub fn is_psd(a: &Mat, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let n = a.rows();
    let scale = a.diag().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let thr = tol * scale;
    let mut w = a.clone();
    let mut remaining: Vec<usize> = (0..n).collect();
    while !remaining.is_empty() {
        let (pos, &p) = remaining
            .iter()
            .enumerate()
            .max_by(|x, y| w[(*x.1, *x.1)].total_cmp(&w[(*y.1, *y.1)]))
            .expect("non-empty");
        let d = w[(p, p)];
        if d < -thr {
            return false;
        }
        if d <= thr {
            return remaining
                .iter()
                .all(|&i| remaining.iter().all(|&j| w[(i, j)].abs() <= thr.max(1e-300) * 1e3));
        }
        remaining.swap_remove(pos);
        for &i in &remaining {
            let f = w[(i, p)] / d;
            for &j in &remaining {
                let v = w[(p, j)];
                w[(i, j)] -= f * v;
            }
        }
    }
    true
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting. Returns
/// `None` for a numerically singular `A`.
pub fn lu_solve(a: &Mat, b: &Mat) -> Option<Mat> {
    assert!(a.is_square());
    assert_eq!(a.rows(), b.rows());
    let n = a.rows();
    let m = b.cols();
    let mut a = a.clone();
    let mut x = b.clone();
    flops::add((2 * n * n * n / 3 + 2 * n * n * m) as u64);
    for k in 0..n {
        let (p, pmax) = (k..n)
            .map(|i| (i, a[(i, k)].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if pmax == 0.0 || !pmax.is_finite() {
            return None;
        }
        if p != k {
            for j in 0..n {
                let t = a[(k, j)];
                a[(k, j)] = a[(p, j)];
                a[(p, j)] = t;
            }
            for j in 0..m {
                let t = x[(k, j)];
                x[(k, j)] = x[(p, j)];
                x[(p, j)] = t;
            }
        }
        let piv = a[(k, k)];
        for i in k + 1..n {
            let f = a[(i, k)] / piv;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                let v = a[(k, j)];
                a[(i, j)] -= f * v;
            }
            for j in 0..m {
                let v = x[(k, j)];
                x[(i, j)] -= f * v;
            }
        }
    }
    for k in (0..n).rev() {
        for j in 0..m {
            let mut s = x[(k, j)];
            for i in k + 1..n {
                s -= a[(k, i)] * x[(i, j)];
            }
            x[(k, j)] = s / a[(k, k)];
        }
    }
    Some(x)
}

/// Householder QR of a tall matrix `M` (n×m, n ≥ m), returning the full
/// orthogonal factor `Q` (n×n) and the leading upper-triangular block `R` (m×m).
pub fn householder_qr(mat: &Mat) -> (Mat, Mat) {
    let n = mat.rows();
    let m = mat.cols();
    assert!(n >= m, "householder_qr expects a tall matrix");
    let mut r = mat.clone();
    let mut q = Mat::identity(n);
    flops::add((4 * n * n * m) as u64);
    for k in 0..m {
        let norm: f64 = (k..n).map(|i| r[(i, k)] * r[(i, k)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[(k, k)] > 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        for i in k..n {
            v[i] = r[(i, k)];
        }
        v[k] -= alpha;
        let vnorm2: f64 = v[k..].iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in 0..m {
            let s: f64 = (k..n).map(|i| v[i] * r[(i, j)]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..n {
                r[(i, j)] -= s * v[i];
            }
        }
        // Q ← Q (I - 2 v vᵀ / vᵀv)
        for i in 0..n {
            let s: f64 = (k..n).map(|j| q[(i, j)] * v[j]).sum::<f64>() * 2.0 / vnorm2;
            for j in k..n {
                q[(i, j)] -= s * v[j];
            }
        }
    }
    (q, r.block(0, 0, m, m))
}
