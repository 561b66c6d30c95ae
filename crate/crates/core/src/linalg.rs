//! Small linear-algebra kernels: tridiagonal solves, Sturm bisection with
//! inverse iteration, and a cyclic Jacobi solver for the dense Rayleigh-Ritz
//! problems of the two-particle eigensolver.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Solves `(1 + i·a·T) x = rhs` in place, where `T` is real symmetric
/// tridiagonal with diagonal `diag` and constant off-diagonal `off`.
///
/// `scratch` must have the same length as `rhs`.
pub(crate) fn solve_cayley_system(
    diag: &[f64],
    off: f64,
    a: f64,
    rhs: &mut [Complex64],
    scratch: &mut [Complex64],
) -> Result<()> {
    let n = rhs.len();
    debug_assert_eq!(diag.len(), n);
    debug_assert_eq!(scratch.len(), n);
    let sub = Complex64::new(0.0, a * off);
    let mut denom = Complex64::new(1.0, a * diag[0]);
    if denom.norm_sqr() == 0.0 {
        return Err(Error::SingularSystem);
    }
    scratch[0] = sub / denom;
    rhs[0] /= denom;
    for k in 1..n {
        denom = Complex64::new(1.0, a * diag[k]) - sub * scratch[k - 1];
        if denom.norm_sqr() < 1e-300 {
            return Err(Error::SingularSystem);
        }
        scratch[k] = sub / denom;
        rhs[k] = (rhs[k] - sub * rhs[k - 1]) / denom;
    }
    for k in (0..n - 1).rev() {
        let next = rhs[k + 1];
        rhs[k] -= scratch[k] * next;
    }
    Ok(())
}

/// Factorization of `1 + i·a·T` (Thomas algorithm, no pivoting) reusable for
/// many right-hand sides.
#[derive(Debug, Clone, Default)]
pub(crate) struct CayleyFactor {
    sub: Complex64,
    inv_denom: Vec<Complex64>,
    upper: Vec<Complex64>,
}

impl CayleyFactor {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    pub(crate) fn factor(&mut self, diag: &[f64], off: f64, a: f64) -> Result<()> {
        let n = diag.len();
        self.sub = Complex64::new(0.0, a * off);
        self.inv_denom.resize(n, Complex64::new(0.0, 0.0));
        self.upper.resize(n, Complex64::new(0.0, 0.0));
        let mut prev = Complex64::new(0.0, 0.0);
        for k in 0..n {
            let denom = Complex64::new(1.0, a * diag[k]) - self.sub * prev;
            if denom.norm_sqr() < 1e-300 {
                return Err(Error::SingularSystem);
            }
            let inv = denom.inv();
            self.inv_denom[k] = inv;
            prev = self.sub * inv;
            self.upper[k] = prev;
        }
        Ok(())
    }

    pub(crate) fn len(&self) -> usize {
        self.inv_denom.len()
    }

    /// Solves one contiguous system in place.
    pub(crate) fn solve(&self, rhs: &mut [Complex64]) {
        let n = rhs.len();
        debug_assert_eq!(n, self.len());
        rhs[0] *= self.inv_denom[0];
        for k in 1..n {
            rhs[k] = (rhs[k] - self.sub * rhs[k - 1]) * self.inv_denom[k];
        }
        for k in (0..n - 1).rev() {
            let next = rhs[k + 1];
            rhs[k] -= self.upper[k] * next;
        }
    }

    /// Solves `width` interleaved systems stored row-major as `data[k·width + j]`,
    /// one system per column `j`.
    pub(crate) fn solve_columns(&self, data: &mut [Complex64], width: usize) {
        let n = self.len();
        debug_assert_eq!(data.len(), n * width);
        let d0 = self.inv_denom[0];
        data[..width].iter_mut().for_each(|x| *x *= d0);
        for k in 1..n {
            let (done, rest) = data.split_at_mut(k * width);
            let prev = &done[(k - 1) * width..];
            let cur = &mut rest[..width];
            let inv = self.inv_denom[k];
            for (c, p) in cur.iter_mut().zip(prev) {
                *c = (*c - self.sub * p) * inv;
            }
        }
        for k in (0..n - 1).rev() {
            let (head, tail) = data.split_at_mut((k + 1) * width);
            let cur = &mut head[k * width..];
            let next = &tail[..width];
            let u = self.upper[k];
            for (c, nx) in cur.iter_mut().zip(next) {
                *c -= u * nx;
            }
        }
    }
}

/// `out = (1 − i·a·T) x` for the same tridiagonal `T`.
pub(crate) fn apply_cayley_explicit(diag: &[f64], off: f64, a: f64, x: &[Complex64], out: &mut [Complex64]) {
    let n = x.len();
    let ia = Complex64::new(0.0, a);
    for k in 0..n {
        let mut hx = x[k] * diag[k];
        if k > 0 {
            hx += x[k - 1] * off;
        }
        if k + 1 < n {
            hx += x[k + 1] * off;
        }
        out[k] = x[k] - ia * hx;
    }
}

/// `out = T x` for a real symmetric tridiagonal `T`.
pub(crate) fn apply_tridiagonal<T>(diag: &[f64], off: f64, x: &[T], out: &mut [T])
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let n = x.len();
    for k in 0..n {
        let mut y = x[k] * diag[k];
        if k > 0 {
            y = y + x[k - 1] * off;
        }
        if k + 1 < n {
            y = y + x[k + 1] * off;
        }
        out[k] = y;
    }
}

/// Number of eigenvalues strictly below `sigma` (Sturm sequence count).
pub(crate) fn sturm_count(diag: &[f64], off: f64, sigma: f64) -> usize {
    let off2 = off * off;
    let tiny = f64::MIN_POSITIVE.sqrt();
    // A vanishing pivot is replaced by a tiny negative one and counted as
    // negative, as in LAPACK's dstebz.
    let pivot = |q: f64| if q.abs() < tiny { -tiny } else { q };
    let mut q = pivot(diag[0] - sigma);
    let mut count = usize::from(q < 0.0);
    for &d in &diag[1..] {
        q = pivot(d - sigma - off2 / q);
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Gershgorin interval containing the whole spectrum.
pub(crate) fn gershgorin(diag: &[f64], off: f64) -> (f64, f64) {
    let r = 2.0 * off.abs();
    let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min) - r;
    let hi = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + r;
    (lo, hi)
}

/// The `k`-th smallest eigenvalue (0-based) by bisection to full precision.
pub(crate) fn bisect_eigenvalue(diag: &[f64], off: f64, k: usize) -> f64 {
    let (mut lo, mut hi) = gershgorin(diag, off);
    let scale = lo.abs().max(hi.abs()).max(1.0);
    for _ in 0..256 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 2.0 * f64::EPSILON * scale {
            break;
        }
        if sturm_count(diag, off, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// LU factorization with partial pivoting of a tridiagonal matrix
/// `diag - shift` with constant off-diagonal, stored LAPACK `gttrf` style.
struct TridiagonalLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl TridiagonalLu {
    fn factor(diag: &[f64], off: f64, shift: f64, pivot_floor: f64) -> Self {
        let n = diag.len();
        let mut d: Vec<f64> = diag.iter().map(|v| v - shift).collect();
        let mut dl = vec![off; n.saturating_sub(1)];
        let mut du = vec![off; n.saturating_sub(1)];
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i].abs() < pivot_floor {
                    d[i] = pivot_floor.copysign(if d[i] == 0.0 { 1.0 } else { d[i] });
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        if let Some(last) = d.last_mut() {
            if last.abs() < pivot_floor {
                *last = pivot_floor.copysign(if *last == 0.0 { 1.0 } else { *last });
            }
        }
        Self { dl, d, du, du2, swapped }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                b.swap(i, i + 1);
                b[i + 1] -= self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Eigenvector for an accurate eigenvalue by inverse iteration, made
/// orthogonal to the vectors in `deflate` (previously found members of the
/// same eigenvalue cluster). Returns the unit vector and its relative residual
/// `‖Tv − λv‖ / ‖Tv‖`.
pub(crate) fn inverse_iteration(
    diag: &[f64],
    off: f64,
    eigenvalue: f64,
    deflate: &[&[f64]],
    tolerance: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, f64)> {
    let n = diag.len();
    let (lo, hi) = gershgorin(diag, off);
    let norm = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    let lu = TridiagonalLu::factor(diag, off, eigenvalue, f64::EPSILON * norm);
    // Deterministic, non-symmetric start vector.
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * ((i as f64 * 0.7548776662).fract() - 0.5))
        .collect();
    normalize(&mut v);
    let mut tv = vec![0.0; n];
    let mut best = f64::INFINITY;
    let mut best_v = v.clone();
    for _ in 0..max_iterations {
        lu.solve(&mut v);
        for q in deflate {
            let c = dot(q, &v);
            v.iter_mut().zip(q.iter()).for_each(|(x, y)| *x -= c * y);
        }
        if normalize(&mut v) == 0.0 {
            break;
        }
        apply_tridiagonal(diag, off, &v, &mut tv);
        let tv_norm = dot(&tv, &tv).sqrt();
        let res: f64 = tv
            .iter()
            .zip(&v)
            .map(|(t, x)| (t - eigenvalue * x).powi(2))
            .sum::<f64>()
            .sqrt();
        // Floor the denominator so eigenvalues that happen to sit near zero
        // are judged against the operator scale instead.
        let rel = res / tv_norm.max(1e-6 * norm);
        if rel < best {
            best = rel;
            best_v.copy_from_slice(&v);
        }
        if rel <= tolerance {
            return Ok((v, rel));
        }
    }
    if best <= tolerance {
        Ok((best_v, best))
    } else {
        Err(Error::NoConvergence { best_residual: best })
    }
}

/// All eigenpairs of a small dense symmetric matrix by cyclic Jacobi
/// rotations. `a` is row-major `n×n`; returns eigenvalues ascending and the
/// eigenvectors as columns of a row-major matrix.
pub(crate) fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j].powi(2))
            .sum();
        let total: f64 = m.iter().map(|x| x * x).sum();
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + col] = v[row * n + src];
        }
    }
    (values, vectors)
}
