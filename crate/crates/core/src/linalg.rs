//! Minimal dense linear algebra: a row-major matrix and a Cholesky solver.

use alloc::vec;
use alloc::vec::Vec;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from row-major data. Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has wrong length");
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from equally long rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    /// An `n x 1` matrix.
    pub fn column(values: &[f64]) -> Self {
        Matrix { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so handle zero-width matrices explicitly
        let cols = self.cols.max(1);
        let rows = self.rows;
        self.data.chunks_exact(cols).take(rows).chain(
            core::iter::repeat_n(&[][..], if self.cols == 0 { rows } else { 0 }),
        )
    }
}

/// Accumulates the upper triangle of `sum_i w_i f_i f_i'` into `gram` (p x p).
pub(crate) fn add_outer_upper(gram: &mut [f64], f: &[f64], w: f64) {
    let p = f.len();
    for a in 0..p {
        let fa = w * f[a];
        if fa == 0.0 {
            continue;
        }
        let row = &mut gram[a * p..(a + 1) * p];
        for b in a..p {
            row[b] += fa * f[b];
        }
    }
}

pub(crate) fn symmetrize_from_upper(gram: &mut [f64], p: usize) {
    for a in 0..p {
        for b in 0..a {
            gram[a * p + b] = gram[b * p + a];
        }
    }
}

/// In-place Cholesky factorization of a symmetric matrix (lower factor written
/// into the lower triangle). Fails when a pivot is not above
/// `1e-12 * max(diag)`.
fn cholesky_in_place(a: &mut [f64], p: usize) -> bool {
    let max_diag = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max);
    let floor = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > floor) || !d.is_finite() {
            return false;
        }
        let d = libm::sqrt(d);
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    true
}

fn cholesky_back_substitute(l: &[f64], p: usize, b: &mut [f64]) {
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in i + 1..p {
            s -= l[k * p + i] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
}

/// Outcome of [`solve_spd`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpdSolution {
    pub x: Vec<f64>,
    /// Whether the diagonal jitter had to be added.
    pub jittered: bool,
}

/// Solves `A x = b` for symmetric positive (semi)definite `A` by Cholesky.
///
/// On factorization failure the solve is retried once with `jitter * max(diag)`
/// added to the diagonal. Returns `None` when that fails too.
pub fn solve_spd(a: &[f64], b: &[f64], p: usize, jitter: f64) -> Option<SpdSolution> {
    debug_assert_eq!(a.len(), p * p);
    debug_assert_eq!(b.len(), p);
    if let Some(x) = factor_and_solve(a.to_vec(), b, p) {
        return Some(SpdSolution { x, jittered: false });
    }
    let max_diag = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max).max(1.0);
    let mut shifted = a.to_vec();
    for i in 0..p {
        shifted[i * p + i] += jitter * max_diag;
    }
    factor_and_solve(shifted, b, p).map(|x| SpdSolution { x, jittered: true })
}

/// Cholesky solve plus one step of iterative refinement against `a`.
fn factor_and_solve(a: Vec<f64>, b: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut l = a.clone();
    if !cholesky_in_place(&mut l, p) {
        return None;
    }
    let mut x = b.to_vec();
    cholesky_back_substitute(&l, p, &mut x);
    let mut r: Vec<f64> = (0..p).map(|i| b[i] - crate::math::dot(&a[i * p..(i + 1) * p], &x)).collect();
    cholesky_back_substitute(&l, p, &mut r);
    for (xi, ri) in x.iter_mut().zip(&r) {
        *xi += ri;
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
