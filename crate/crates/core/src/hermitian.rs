//! Dense complex Hermitian linear algebra for small operators.
//!
//! Everything here works on row-major `p x p` matrices with `p` in the tens at
//! most: spectral density operators restricted to a grid, their blocks, and
//! Kronecker rearrangements of them. Eigendecompositions use cyclic complex
//! Jacobi rotations and singular value decompositions use one-sided (Hestenes)
//! Jacobi, both of which are accurate to a few ulps of `||A||_F` at these sizes.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default relative tolerance for flagging (near-)tied eigenvalues.
pub const DEFAULT_TIE_TOL: f64 = 1e-8;

const MAX_SWEEPS: usize = 100;

/// General dense complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex::new(T::zero(), T::zero()); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex::new(T::one(), T::zero());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!("{} entries supplied for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_real(rows: usize, cols: usize, data: &[T]) -> Result<Self> {
        Self::from_row_major(rows, cols, data.iter().map(|&x| Complex::new(x, T::zero())).collect())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex<T>) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<Complex<T>> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn conj(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, c: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * c).collect() }
    }

    pub fn frobenius_norm_sqr(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sqr().sqrt()
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let (r2, c2) = (other.rows, other.cols);
        Self::from_fn(self.rows * r2, self.cols * c2, |i, j| self.get(i / r2, j / c2) * other.get(i % r2, j % c2))
    }

    /// Copy of the block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, nrows: usize, ncols: usize) -> Self {
        Self::from_fn(nrows, ncols, |i, j| self.get(r0 + i, c0 + j))
    }

    /// Inverse by Gaussian elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::Dimension(format!("cannot invert a {}x{} matrix", self.rows, self.cols)));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let scale = self.frobenius_norm().max(T::min_positive_value());
        for col in 0..n {
            let pivot =
                (col..n).max_by(|&x, &y| a.get(x, col).norm().partial_cmp(&a.get(y, col).norm()).unwrap()).unwrap();
            if a.get(pivot, col).norm() <= T::epsilon() * scale {
                return Err(Error::InvalidArgument("matrix is numerically singular".into()));
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                    inv.data.swap(pivot * n + j, col * n + j);
                }
            }
            let d = a.get(col, col).inv();
            for j in 0..n {
                a.data[col * n + j] = a.data[col * n + j] * d;
                inv.data[col * n + j] = inv.data[col * n + j] * d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a.get(r, col);
                if factor.norm_sqr() == T::zero() {
                    continue;
                }
                for j in 0..n {
                    let av = a.data[col * n + j];
                    let iv = inv.data[col * n + j];
                    a.data[r * n + j] -= factor * av;
                    inv.data[r * n + j] -= factor * iv;
                }
            }
        }
        Ok(inv)
    }

    fn check_same_shape(&self, other: &Self) {
        assert!(
            self.rows == other.rows && self.cols == other.cols,
            "shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
    }
}

impl<T: Real> Add for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn add(self, rhs: Self) -> CMatrix<T> {
        self.check_same_shape(rhs);
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<T: Real> Sub for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn sub(self, rhs: Self) -> CMatrix<T> {
        self.check_same_shape(rhs);
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl<T: Real> Mul for &CMatrix<T> {
    type Output = CMatrix<T>;
    fn mul(self, rhs: Self) -> CMatrix<T> {
        self.matmul(rhs).expect("inner dimensions agree")
    }
}

/// A `p x p` complex Hermitian matrix; values of a (restricted) spectral
/// density operator and its diagonal blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator<T> {
    inner: CMatrix<T>,
}

impl<T: Real> HermitianOperator<T> {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        Self { inner: CMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        Self { inner: CMatrix::identity(dim) }
    }

    pub fn from_real_diagonal(diag: &[T]) -> Self {
        assert!(!diag.is_empty(), "dimension must be positive");
        let mut m = CMatrix::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, Complex::new(d, T::zero()));
        }
        Self { inner: m }
    }

    /// Builds from an entry function, symmetrizing as `(f(i,j) + conj f(j,i)) / 2`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let m = CMatrix::from_fn(dim, dim, &mut f);
        Self::symmetrized(&m)
    }

    /// Hermitian part `(A + A†) / 2` of a square matrix.
    pub fn symmetrized(m: &CMatrix<T>) -> Self {
        assert_eq!(m.rows(), m.cols(), "Hermitian part needs a square matrix");
        assert!(m.rows() >= 1, "dimension must be positive");
        let half = T::of(0.5);
        let n = m.rows();
        let mut out = CMatrix::zeros(n, n);
        for i in 0..n {
            out.set(i, i, Complex::new(m.get(i, i).re, T::zero()));
            for j in (i + 1)..n {
                let v = (m.get(i, j) + m.get(j, i).conj()) * half;
                out.set(i, j, v);
                out.set(j, i, v.conj());
            }
        }
        Self { inner: out }
    }

    /// Accepts `m` if it is Hermitian to within `tol * max(1, ||m||_F)`.
    pub fn try_from_matrix(m: CMatrix<T>, tol: T) -> Result<Self> {
        if m.rows() != m.cols() || m.rows() == 0 {
            return Err(Error::Dimension(format!(
                "Hermitian operator needs a non-empty square matrix, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let dev = (&m - &m.adjoint()).frobenius_norm();
        let bound = tol * m.frobenius_norm().max(T::one());
        if dev > bound {
            return Err(Error::InvalidArgument(format!("matrix is not Hermitian: ||A - A^H||_F = {dev}")));
        }
        Ok(Self::symmetrized(&m))
    }

    /// Rank-one operator `v v†`.
    pub fn outer(v: &[Complex<T>]) -> Self {
        Self::from_fn(v.len(), |i, j| v[i] * v[j].conj())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.inner.get(i, j)
    }

    pub fn as_matrix(&self) -> &CMatrix<T> {
        &self.inner
    }

    pub fn into_matrix(self) -> CMatrix<T> {
        self.inner
    }

    pub fn trace(&self) -> T {
        (0..self.dim()).map(|i| self.get(i, i).re).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.inner.frobenius_norm()
    }

    /// Hilbert-Schmidt inner product `Tr(A B)`; real for Hermitian pairs.
    pub fn hs_inner(&self, other: &Self) -> T {
        self.inner.as_slice().iter().zip(other.inner.as_slice()).map(|(a, b)| (a.conj() * b).re).sum()
    }

    pub fn scale(&self, c: T) -> Self {
        Self { inner: self.inner.scale(c) }
    }

    /// Entrywise conjugate (equivalently the transpose).
    pub fn conj(&self) -> Self {
        Self { inner: self.inner.conj() }
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self { inner: self.inner.kron(&other.inner) }
    }

    /// Principal sub-block on indices `start..start + len`.
    pub fn principal_block(&self, start: usize, len: usize) -> Self {
        Self { inner: self.inner.block(start, start, len, len) }
    }

    /// Largest deviation from exact Hermitian symmetry.
    pub fn hermitian_defect(&self) -> T {
        (&self.inner - &self.inner.adjoint()).frobenius_norm()
    }
}

impl<T: Real> Add for &HermitianOperator<T> {
    type Output = HermitianOperator<T>;
    fn add(self, rhs: Self) -> HermitianOperator<T> {
        HermitianOperator { inner: &self.inner + &rhs.inner }
    }
}

impl<T: Real> Sub for &HermitianOperator<T> {
    type Output = HermitianOperator<T>;
    fn sub(self, rhs: Self) -> HermitianOperator<T> {
        HermitianOperator { inner: &self.inner - &rhs.inner }
    }
}

impl<T: Real> Mul for &HermitianOperator<T> {
    type Output = CMatrix<T>;
    fn mul(self, rhs: Self) -> CMatrix<T> {
        &self.inner * &rhs.inner
    }
}

/// Eigenvalues in descending order with orthonormal eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct EigenSystem<T> {
    pub values: Vec<T>,
    pub vectors: CMatrix<T>,
    /// `near_tie_flags[j]` is set when `values[j] - values[j+1] < tie_tol * max(1, values[0])`.
    pub near_tie_flags: Vec<bool>,
}

impl<T: Real> EigenSystem<T> {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V diag(f(λ)) V†`.
    pub fn map_values(&self, f: impl Fn(T) -> T) -> HermitianOperator<T> {
        self.map_indexed(|_, l| f(l))
    }

    /// `V diag(f(j, λ_j)) V†`, for functions that depend on the eigenvalue's rank.
    pub fn map_indexed(&self, f: impl Fn(usize, T) -> T) -> HermitianOperator<T> {
        let n = self.dim();
        let fv: Vec<T> = self.values.iter().enumerate().map(|(j, &l)| f(j, l)).collect();
        let mut out = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = Complex::new(T::zero(), T::zero());
                for k in 0..n {
                    if fv[k] == T::zero() {
                        continue;
                    }
                    acc += self.vectors.get(i, k) * self.vectors.get(j, k).conj() * fv[k];
                }
                out.set(i, j, acc);
                out.set(j, i, acc.conj());
            }
        }
        HermitianOperator::symmetrized(&out)
    }

    pub fn reconstruct(&self) -> HermitianOperator<T> {
        self.map_values(|l| l)
    }

    /// Whether the first `d` eigenvalues are separated from the rest.
    pub fn tie_at(&self, d: usize) -> bool {
        d >= 1 && d < self.dim() && self.near_tie_flags[d - 1]
    }
}

/// Singular values in descending order with left/right orthonormal factors.
#[derive(Clone, Debug)]
pub struct SingularSystem<T> {
    pub values: Vec<T>,
    /// `m x k` with orthonormal columns, `k = min(m, n)`.
    pub left: CMatrix<T>,
    /// `n x k` with orthonormal columns.
    pub right: CMatrix<T>,
}

impl<T: Real> SingularSystem<T> {
    pub fn reconstruct(&self) -> CMatrix<T> {
        let (m, n) = (self.left.rows(), self.right.rows());
        CMatrix::from_fn(m, n, |i, j| {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (k, &s) in self.values.iter().enumerate() {
                acc += self.left.get(i, k) * self.right.get(j, k).conj() * s;
            }
            acc
        })
    }
}

/// Split of the grid dimension into two factors: `p1 * p2` for tensor
/// products or `p1 + p2` for direct sums, depending on the measure using it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ProductStructure {
    pub p1: usize,
    pub p2: usize,
}

impl ProductStructure {
    pub fn new(p1: usize, p2: usize) -> Result<Self> {
        if p1 == 0 || p2 == 0 {
            return Err(Error::Dimension(format!("factor dimensions must be positive, got ({p1}, {p2})")));
        }
        Ok(Self { p1, p2 })
    }

    pub fn tensor_dim(&self) -> usize {
        self.p1 * self.p2
    }

    pub fn sum_dim(&self) -> usize {
        self.p1 + self.p2
    }
}

/// Full eigendecomposition of a Hermitian matrix, eigenvalues descending.
///
/// Each eigenvector is rotated so that its largest-modulus entry is real and
/// positive. `tie_tol` is relative: adjacent values closer than
/// `tie_tol * max(1, λ₁)` are flagged.
pub fn eigh_descending<T: Real>(a: &HermitianOperator<T>, tie_tol: T) -> Result<EigenSystem<T>> {
    let n = a.dim();
    let mut m = a.as_matrix().clone();
    let mut v = CMatrix::<T>::identity(n);
    let norm = m.frobenius_norm();
    let zero = Complex::new(T::zero(), T::zero());

    if n > 1 && norm > T::zero() {
        let target = T::of_usize(n) * T::epsilon() * norm;
        let target_sqr = target * target;
        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            let off: T = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m.get(i, j).norm_sqr())
                .sum();
            if off <= target_sqr {
                converged = true;
                break;
            }
            for p in 0..n - 1 {
                for q in (p + 1)..n {
                    let apq = m.get(p, q);
                    let mag = apq.norm();
                    if mag <= T::min_positive_value() || mag < target * T::of(1e-3) {
                        m.set(p, q, zero);
                        m.set(q, p, zero);
                        continue;
                    }
                    let phase = apq / mag;
                    let app = m.get(p, p).re;
                    let aqq = m.get(q, q).re;
                    let theta = (aqq - app) / (T::of(2.0) * mag);
                    let t = if theta.abs() > T::of(1e150).min(T::max_value().sqrt()) {
                        T::one() / (T::of(2.0) * theta)
                    } else {
                        theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt())
                    };
                    let t = if theta == T::zero() { T::one() } else { t };
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    let ph_conj = phase.conj();
                    // columns: A <- A G with G = [[c, s], [-s e^{-iφ}, c e^{-iφ}]]
                    for k in 0..n {
                        let x = m.get(k, p);
                        let y = m.get(k, q);
                        m.set(k, p, x * c - y * ph_conj * s);
                        m.set(k, q, x * s + y * ph_conj * c);
                        let vx = v.get(k, p);
                        let vy = v.get(k, q);
                        v.set(k, p, vx * c - vy * ph_conj * s);
                        v.set(k, q, vx * s + vy * ph_conj * c);
                    }
                    // rows: A <- G† A
                    for k in 0..n {
                        let x = m.get(p, k);
                        let y = m.get(q, k);
                        m.set(p, k, x * c - y * phase * s);
                        m.set(q, k, x * s + y * phase * c);
                    }
                    m.set(p, q, zero);
                    m.set(q, p, zero);
                    let dp = m.get(p, p).re;
                    let dq = m.get(q, q).re;
                    m.set(p, p, Complex::new(dp, T::zero()));
                    m.set(q, q, Complex::new(dq, T::zero()));
                }
            }
        }
        if !converged {
            return Err(Error::NonConvergence { rows: n, cols: n });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).re.partial_cmp(&m.get(i, i).re).unwrap_or(std::cmp::Ordering::Equal));
    let values: Vec<T> = order.iter().map(|&i| m.get(i, i).re).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = v.column(src);
        // first entry whose modulus matches the maximum up to rounding
        let max_mod = col.iter().map(|z| z.norm()).fold(T::zero(), T::max);
        let cut = max_mod * (T::one() - T::of(1e3) * T::epsilon());
        let best = col.iter().position(|z| z.norm() >= cut).unwrap_or(0);
        let best_mod = col[best].norm();
        let fix = if best_mod > T::zero() { col[best].conj() / best_mod } else { Complex::new(T::one(), T::zero()) };
        for (i, z) in col.iter().enumerate() {
            let mut w = z * fix;
            if i == best {
                w = Complex::new(w.norm(), T::zero());
            }
            vectors.set(i, dst, w);
        }
    }
    let scale = values.first().map(|&l| l.max(T::one())).unwrap_or(T::one());
    let near_tie_flags = values.windows(2).map(|w| w[0] - w[1] < tie_tol * scale).collect();
    Ok(EigenSystem { values, vectors, near_tie_flags })
}

/// Thin singular value decomposition by one-sided Jacobi.
pub fn svd<T: Real>(a: &CMatrix<T>) -> Result<SingularSystem<T>> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::Dimension("empty matrix has no singular values".into()));
    }
    if a.rows() < a.cols() {
        let s = svd(&a.adjoint())?;
        return Ok(SingularSystem { values: s.values, left: s.right, right: s.left });
    }
    let (m, n) = (a.rows(), a.cols());
    let mut w = a.clone();
    let mut v = CMatrix::<T>::identity(n);
    let eps = T::epsilon();
    // columns with this little mass are numerically zero and never rotated
    let negligible = (T::of_usize(m) * eps * a.frobenius_norm()).powi(2);
    // rounding leaves inner products of order m·eps that rotations cannot reduce
    let tol = T::of_usize(m) * eps;
    let mut converged = n == 1;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let mut alpha = T::zero();
                let mut beta = T::zero();
                let mut gamma = Complex::new(T::zero(), T::zero());
                for k in 0..m {
                    let x = w.get(k, p);
                    let y = w.get(k, q);
                    alpha += x.norm_sqr();
                    beta += y.norm_sqr();
                    gamma += x.conj() * y;
                }
                let g = gamma.norm();
                if g <= T::min_positive_value() || g <= tol * (alpha * beta).sqrt() || alpha.min(beta) <= negligible {
                    continue;
                }
                rotated = true;
                let ph_conj = (gamma / g).conj();
                let zeta = (beta - alpha) / (T::of(2.0) * g);
                let t = if zeta == T::zero() {
                    T::one()
                } else {
                    zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let x = w.get(k, p);
                    let y = w.get(k, q) * ph_conj;
                    w.set(k, p, x * c - y * s);
                    w.set(k, q, x * s + y * c);
                }
                for k in 0..n {
                    let x = v.get(k, p);
                    let y = v.get(k, q) * ph_conj;
                    v.set(k, p, x * c - y * s);
                    v.set(k, q, x * s + y * c);
                }
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { rows: m, cols: n });
    }

    let norms: Vec<T> = (0..n).map(|j| (0..m).map(|k| w.get(k, j).norm_sqr()).sum::<T>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));
    let values: Vec<T> = order.iter().map(|&j| norms[j]).collect();
    let smax = values[0];
    let cutoff = smax * eps * T::of_usize(m.max(n));

    let mut left = CMatrix::zeros(m, n);
    let mut right = CMatrix::zeros(n, n);
    let mut filled = vec![false; n];
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            right.set(k, dst, v.get(k, src));
        }
        if values[dst] > cutoff && values[dst] > T::zero() {
            for k in 0..m {
                left.set(k, dst, w.get(k, src) / values[dst]);
            }
            filled[dst] = true;
        }
    }
    // complete left factor for (numerically) zero singular values
    let mut basis_idx = 0;
    for dst in 0..n {
        if filled[dst] {
            continue;
        }
        while basis_idx < m {
            let mut cand: Vec<Complex<T>> = (0..m)
                .map(|k| {
                    if k == basis_idx {
                        Complex::new(T::one(), T::zero())
                    } else {
                        Complex::new(T::zero(), T::zero())
                    }
                })
                .collect();
            basis_idx += 1;
            for _ in 0..2 {
                for j in 0..n {
                    if !filled[j] {
                        continue;
                    }
                    let proj: Complex<T> = (0..m).map(|k| left.get(k, j).conj() * cand[k]).sum();
                    for (k, c) in cand.iter_mut().enumerate() {
                        *c -= left.get(k, j) * proj;
                    }
                }
            }
            let nrm = cand.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
            if nrm > T::of(1e-3) {
                for (k, c) in cand.iter().enumerate() {
                    left.set(k, dst, c / nrm);
                }
                filled[dst] = true;
                break;
            }
        }
    }
    Ok(SingularSystem { values, left, right })
}

/// Projection onto the PSD cone in Frobenius norm, together with the
/// Frobenius norm of the removed negative part.
pub fn psd_project_with_magnitude<T: Real>(a: &HermitianOperator<T>) -> Result<(HermitianOperator<T>, T)> {
    let es = eigh_descending(a, T::of(DEFAULT_TIE_TOL))?;
    let removed = es.values.iter().filter(|&&l| l < T::zero()).map(|&l| l * l).sum::<T>().sqrt();
    if removed == T::zero() {
        return Ok((a.clone(), removed));
    }
    Ok((es.map_values(|l| l.max(T::zero())), removed))
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clamped to 0).
pub fn psd_project<T: Real>(a: &HermitianOperator<T>) -> Result<HermitianOperator<T>> {
    psd_project_with_magnitude(a).map(|(p, _)| p)
}

/// Unique PSD square root. Eigenvalues down to `-1e-8 * ||A||_F` are treated
/// as numerical noise and clamped; anything more negative is an error.
pub fn matrix_sqrt_psd<T: Real>(a: &HermitianOperator<T>) -> Result<HermitianOperator<T>> {
    let es = eigh_descending(a, T::of(DEFAULT_TIE_TOL))?;
    sqrt_from_eigen(&es, a.frobenius_norm())
}

pub(crate) fn sqrt_from_eigen<T: Real>(es: &EigenSystem<T>, norm: T) -> Result<HermitianOperator<T>> {
    let threshold = -T::of(1e-8) * norm;
    let min = es.values.last().copied().unwrap_or(T::zero());
    if min < threshold {
        return Err(Error::NotPsd { min_eigenvalue: min.as_f64(), threshold: threshold.as_f64() });
    }
    Ok(es.map_values(|l| l.max(T::zero()).sqrt()))
}

/// Kronecker rearrangement: entry `A[i*p2 + j, k*p2 + l]` moves to
/// `R[i*p1 + k, j*p2 + l]` (0-based), so `X ⊗ Y` becomes `vec(X) vec(Y)ᵀ`.
pub fn kron_rearrange<T: Real>(a: &HermitianOperator<T>, ps: ProductStructure) -> Result<CMatrix<T>> {
    let (p1, p2) = (ps.p1, ps.p2);
    if p1 * p2 != a.dim() {
        return Err(Error::Dimension(format!(
            "product structure {p1}x{p2} does not match operator dimension {}",
            a.dim()
        )));
    }
    let mut r = CMatrix::zeros(p1 * p1, p2 * p2);
    for i in 0..p1 {
        for k in 0..p1 {
            for j in 0..p2 {
                for l in 0..p2 {
                    r.set(i * p1 + k, j * p2 + l, a.get(i * p2 + j, k * p2 + l));
                }
            }
        }
    }
    Ok(r)
}

/// Scalar functions whose matrix Fréchet derivatives are supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixFunction {
    Identity,
    Square,
    Sqrt,
}

impl MatrixFunction {
    pub fn value<T: Real>(self, x: T) -> T {
        match self {
            Self::Identity => x,
            Self::Square => x * x,
            Self::Sqrt => x.sqrt(),
        }
    }

    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Self::Identity => T::one(),
            Self::Square => T::of(2.0) * x,
            Self::Sqrt => T::of(0.5) / x.sqrt(),
        }
    }

    /// Divided difference `(φ(a) - φ(b)) / (a - b)`, or `φ'` at the midpoint
    /// when `|a - b| < tie_tol`.
    pub fn divided_difference<T: Real>(self, a: T, b: T, tie_tol: T) -> T {
        if (a - b).abs() < tie_tol {
            self.derivative((a + b) * T::of(0.5))
        } else {
            (self.value(a) - self.value(b)) / (a - b)
        }
    }

    /// Applies φ to a Hermitian matrix through its eigendecomposition.
    pub fn apply<T: Real>(self, a: &HermitianOperator<T>) -> Result<HermitianOperator<T>> {
        match self {
            Self::Identity => Ok(a.clone()),
            Self::Square => Ok(HermitianOperator::symmetrized(&(a * a))),
            Self::Sqrt => matrix_sqrt_psd(a),
        }
    }
}

/// First Fréchet derivative of φ at `a` in direction `delta` (Daleckii-Krein):
/// `Σ_j φ'(λ_j) P_j Δ P_j + Σ_{i≠j} (φ(λ_i) - φ(λ_j)) / (λ_i - λ_j) P_i Δ P_j`.
pub fn frechet_derivative<T: Real>(
    a: &HermitianOperator<T>,
    delta: &HermitianOperator<T>,
    phi: MatrixFunction,
) -> Result<HermitianOperator<T>> {
    frechet_derivative_with_tol(a, delta, phi, T::of(DEFAULT_TIE_TOL))
}

/// As [`frechet_derivative`] with an explicit relative tie tolerance.
pub fn frechet_derivative_with_tol<T: Real>(
    a: &HermitianOperator<T>,
    delta: &HermitianOperator<T>,
    phi: MatrixFunction,
    tie_tol: T,
) -> Result<HermitianOperator<T>> {
    if a.dim() != delta.dim() {
        return Err(Error::Dimension(format!("direction has dimension {} but operator has {}", delta.dim(), a.dim())));
    }
    let es = eigh_descending(a, tie_tol)?;
    let abs_tol = tie_tol * es.values[0].abs().max(T::one());
    if phi == MatrixFunction::Sqrt {
        let min = *es.values.last().unwrap();
        if min <= abs_tol {
            return Err(Error::SingularSqrtDerivative { min_eigenvalue: min.as_f64() });
        }
    }
    let vecs = &es.vectors;
    let rotated = vecs.adjoint().matmul(delta.as_matrix())?.matmul(vecs)?;
    let n = a.dim();
    let weighted =
        CMatrix::from_fn(n, n, |i, j| rotated.get(i, j) * phi.divided_difference(es.values[i], es.values[j], abs_tol));
    let back = vecs.matmul(&weighted)?.matmul(&vecs.adjoint())?;
    Ok(HermitianOperator::symmetrized(&back))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn close(a: &CMatrix<f64>, b: &CMatrix<f64>, tol: f64) -> bool {
        (a - b).frobenius_norm() <= tol
    }

    #[test]
    fn eigh_diagonal_is_permuted_identity() {
        let a = HermitianOperator::from_real_diagonal(&[1.0, 2.0, 3.0]);
        let es = eigh_descending(&a, 1e-8).unwrap();
        assert_eq!(es.values, vec![3.0, 2.0, 1.0]);
        let expected = CMatrix::from_real(3, 3, &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(close(&es.vectors, &expected, 1e-14));
        assert_eq!(es.near_tie_flags, vec![false, false]);
    }

    #[test]
    fn eigh_identity_flags_every_pair() {
        let es = eigh_descending(&HermitianOperator::<f64>::identity(3), 1e-8).unwrap();
        assert_eq!(es.values, vec![1.0, 1.0, 1.0]);
        assert!(es.near_tie_flags.iter().all(|&f| f));
    }

    #[test]
    fn eigh_textbook_two_by_two() {
        let a = HermitianOperator::from_fn(2, |i, j| if i == j { c(2.0, 0.0) } else { c(1.0, 0.0) });
        let es = eigh_descending(&a, 1e-8).unwrap();
        assert!((es.values[0] - 3.0).abs() < 1e-14 && (es.values[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expected = CMatrix::from_real(2, 2, &[h, h, h, -h]).unwrap();
        assert!(close(&es.vectors, &expected, 1e-14), "{:?}", es.vectors);
    }

    #[test]
    fn eigh_complex_phase_convention() {
        let a = HermitianOperator::from_fn(2, |i, j| match (i, j) {
            (0, 0) => c(1.0, 0.0),
            (1, 1) => c(1.0, 0.0),
            (0, 1) => c(0.0, 1.0),
            _ => c(0.0, -1.0),
        });
        let es = eigh_descending(&a, 1e-8).unwrap();
        for j in 0..2 {
            let col = es.vectors.column(j);
            let max_mod = col.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let k = col.iter().position(|z| z.norm() >= max_mod * (1.0 - 1e-12)).unwrap();
            assert!(col[k].im.abs() < 1e-15 && col[k].re > 0.0);
        }
        assert!((&es.reconstruct() - &a).frobenius_norm() < 1e-14);
    }

    #[test]
    fn psd_project_examples() {
        let p = psd_project(&HermitianOperator::from_real_diagonal(&[2.0, -0.1])).unwrap();
        assert!((&p - &HermitianOperator::from_real_diagonal(&[2.0, 0.0])).frobenius_norm() < 1e-15);
        let z = psd_project(&HermitianOperator::from_real_diagonal(&[-1.0, -2.0])).unwrap();
        assert!(z.frobenius_norm() < 1e-15);
        let (_, removed): (_, f64) =
            psd_project_with_magnitude(&HermitianOperator::from_real_diagonal(&[2.0, -0.1])).unwrap();
        assert!((removed - 0.1).abs() < 1e-15);
    }

    #[test]
    fn sqrt_examples() {
        let s = matrix_sqrt_psd(&HermitianOperator::<f64>::identity(2).scale(4.0)).unwrap();
        assert!((&s - &HermitianOperator::identity(2).scale(2.0)).frobenius_norm() < 1e-14);
        let s = matrix_sqrt_psd(&HermitianOperator::from_real_diagonal(&[9.0, 0.0, 1.0])).unwrap();
        assert!((&s - &HermitianOperator::from_real_diagonal(&[3.0, 0.0, 1.0])).frobenius_norm() < 1e-14);
        let v = [c(1.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)];
        let a = HermitianOperator::outer(&v);
        let s = matrix_sqrt_psd(&a).unwrap();
        assert!((&s - &a.scale(0.5)).frobenius_norm() < 1e-13);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let err = matrix_sqrt_psd(&HermitianOperator::from_real_diagonal(&[1.0, -0.5])).unwrap_err();
        assert!(matches!(err, Error::NotPsd { .. }));
        // noise-level negativity is tolerated
        assert!(matrix_sqrt_psd(&HermitianOperator::from_real_diagonal(&[1.0, -1e-12])).is_ok());
    }

    #[test]
    fn rearrange_identity_is_rank_one() {
        let r = kron_rearrange(&HermitianOperator::<f64>::identity(4), ProductStructure::new(2, 2).unwrap()).unwrap();
        let s = svd(&r).unwrap();
        assert!((s.values[0] - 2.0).abs() < 1e-14);
        assert!(s.values[1..].iter().all(|&x| x < 1e-14));
    }

    #[test]
    fn rearrange_rejects_bad_split() {
        let err = kron_rearrange(&HermitianOperator::<f64>::identity(4), ProductStructure::new(3, 2).unwrap());
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn frechet_simple_functions() {
        let a = HermitianOperator::from_fn(3, |i, j| {
            c(
                (i + 2 * j) as f64,
                if i < j {
                    0.5
                } else if i > j {
                    -0.5
                } else {
                    0.0
                },
            )
        });
        let d = HermitianOperator::from_fn(3, |i, j| c(1.0 / (1 + i + j) as f64, (i as f64 - j as f64) * 0.3));
        let id = frechet_derivative(&a, &d, MatrixFunction::Identity).unwrap();
        assert!((&id - &d).frobenius_norm() < 1e-13);
        let sq = frechet_derivative(&a, &d, MatrixFunction::Square).unwrap();
        let expected = &(&a * &d) + &(&d * &a);
        assert!((sq.as_matrix() - &expected).frobenius_norm() < 1e-12);
    }

    #[test]
    fn frechet_sqrt_divided_difference() {
        let a = HermitianOperator::from_real_diagonal(&[4.0, 1.0]);
        let d = HermitianOperator::from_fn(2, |i, j| if i == j { c(0.0, 0.0) } else { c(1.0, 0.0) });
        let r = frechet_derivative(&a, &d, MatrixFunction::Sqrt).unwrap();
        let expected = HermitianOperator::from_fn(2, |i, j| if i == j { c(0.0, 0.0) } else { c(1.0 / 3.0, 0.0) });
        assert!((&r - &expected).frobenius_norm() < 1e-14);
    }

    #[test]
    fn frechet_sqrt_singular_errors() {
        let a = HermitianOperator::from_real_diagonal(&[1.0, 0.0]);
        let d = HermitianOperator::<f64>::identity(2);
        assert!(matches!(frechet_derivative(&a, &d, MatrixFunction::Sqrt), Err(Error::SingularSqrtDerivative { .. })));
    }

    #[test]
    fn svd_wide_and_tall() {
        let a = CMatrix::from_fn(2, 3, |i, j| c((i * 3 + j) as f64, (j as f64) - (i as f64)));
        let s = svd(&a).unwrap();
        assert!((&s.reconstruct() - &a).frobenius_norm() < 1e-13);
        let s2 = svd(&a.adjoint()).unwrap();
        assert!((&s2.reconstruct() - &a.adjoint()).frobenius_norm() < 1e-13);
        for (x, y) in s.values.iter().zip(&s2.values) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let a = CMatrix::from_fn(3, 3, |i, j| c(if i == j { 3.0 } else { 0.5 }, (i as f64 - j as f64) * 0.2));
        let prod = a.matmul(&a.inverse().unwrap()).unwrap();
        assert!((&prod - &CMatrix::identity(3)).frobenius_norm() < 1e-14);
    }

    #[test]
    fn works_in_single_precision() {
        let a = HermitianOperator::<f32>::from_real_diagonal(&[4.0, 9.0]);
        let s = matrix_sqrt_psd(&a).unwrap();
        assert!((s.get(0, 0).re - 2.0).abs() < 1e-5 && (s.get(1, 1).re - 3.0).abs() < 1e-5);
    }
}
