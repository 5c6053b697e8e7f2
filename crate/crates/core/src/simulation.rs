//! Gaussian locally stationary processes with closed-form spectra.

use std::f64::consts::PI;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::TimeSeriesSample;
use crate::hermitian::{matrix_sqrt_psd, svd, CMatrix, HermitianOperator, ProductStructure};

pub const DEFAULT_BURN_IN: usize = 200;
pub const MIN_BURN_IN: usize = 100;
/// Largest admissible operator norm of an autoregressive coefficient.
pub const MAX_AR_NORM: f64 = 0.95;

/// Real `p x p` matrix interpolated linearly in rescaled time:
/// `M(u) = (1 − u) start + u end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixPath {
    pub dim: usize,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl MatrixPath {
    pub fn constant(dim: usize, m: Vec<f64>) -> Result<Self> {
        Self::linear(dim, m.clone(), m)
    }

    pub fn linear(dim: usize, start: Vec<f64>, end: Vec<f64>) -> Result<Self> {
        if start.len() != dim * dim || end.len() != dim * dim {
            return Err(Error::Dimension(format!("matrix path needs {} entries per end", dim * dim)));
        }
        Ok(Self { dim, start, end })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, start: vec![0.0; dim * dim], end: vec![0.0; dim * dim] }
    }

    pub fn at(&self, u: f64) -> Vec<f64> {
        let u = u.clamp(0.0, 1.0);
        self.start.iter().zip(&self.end).map(|(a, b)| (1.0 - u) * a + u * b).collect()
    }

    fn is_zero(&self) -> bool {
        self.start.iter().chain(&self.end).all(|&x| x == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessKind {
    /// `X_t ~ N(0, Σ)` independent.
    Iid { sigma: Vec<f64> },
    /// `X_t = A(t/T) X_{t−1} + ε_t`, `ε_t ~ N(0, Σ_ε)`.
    Tvfar1 { a: MatrixPath, sigma_eps: Vec<f64> },
    /// Independent draws with covariance `Σ_X ⊗ Σ_Y`.
    Separable { ps: ProductStructure, sigma_x: Vec<f64>, sigma_y: Vec<f64> },
    /// `(Z_t, C(t/T) Z_t + ξ_t)` with independent `Z_t ~ N(0, Σ_Z)`, `ξ_t ~ N(0, Σ_ξ)`.
    CoherentPair { ps: ProductStructure, sigma_z: Vec<f64>, coupling: MatrixPath, sigma_xi: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    /// Series length `T`.
    pub t: usize,
    pub burn_in: usize,
    pub seed: u64,
}

fn side(len: usize) -> Result<usize> {
    let p = (len as f64).sqrt().round() as usize;
    if p == 0 || p * p != len {
        return Err(Error::Dimension(format!("{len} entries do not form a square matrix")));
    }
    Ok(p)
}

fn real_matrix(p: usize, m: &[f64]) -> CMatrix<f64> {
    CMatrix::from_fn(p, p, |i, j| Complex::new(m[i * p + j], 0.0))
}

fn covariance(p: usize, m: &[f64], what: &str) -> Result<HermitianOperator<f64>> {
    if m.len() != p * p {
        return Err(Error::Dimension(format!("{what} needs {} entries, got {}", p * p, m.len())));
    }
    let h = HermitianOperator::try_from_matrix(real_matrix(p, m), 1e-12)
        .map_err(|_| Error::InvalidArgument(format!("{what} is not symmetric")))?;
    let es = crate::hermitian::eigh_descending(&h, crate::hermitian::DEFAULT_TIE_TOL)?;
    let min = *es.values.last().unwrap();
    if min < -1e-12 * h.frobenius_norm().max(1.0) {
        return Err(Error::InvalidArgument(format!("{what} is not positive semi-definite (eigenvalue {min:e})")));
    }
    Ok(h)
}

/// Real symmetric square root, row-major.
fn real_sqrt(h: &HermitianOperator<f64>) -> Result<Vec<f64>> {
    let r = matrix_sqrt_psd(h)?;
    let p = h.dim();
    Ok((0..p * p).map(|k| r.get(k / p, k % p).re).collect())
}

fn operator_norm(p: usize, m: &[f64]) -> Result<f64> {
    Ok(svd(&real_matrix(p, m))?.values[0])
}

impl ProcessSpec {
    pub fn new(kind: ProcessKind, t: usize, seed: u64) -> Self {
        Self { kind, t, burn_in: DEFAULT_BURN_IN, seed }
    }

    /// Grid dimension of the generated series.
    pub fn dim(&self) -> Result<usize> {
        match &self.kind {
            ProcessKind::Iid { sigma } => side(sigma.len()),
            ProcessKind::Tvfar1 { sigma_eps, .. } => side(sigma_eps.len()),
            ProcessKind::Separable { ps, .. } => Ok(ps.tensor_dim()),
            ProcessKind::CoherentPair { ps, .. } => Ok(ps.sum_dim()),
        }
    }

    /// Checks dimensions, covariances, burn-in and autoregressive stability.
    pub fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return Err(Error::InvalidArgument(format!("series length {} below 2", self.t)));
        }
        if self.burn_in < MIN_BURN_IN {
            return Err(Error::InvalidArgument(format!("burn-in {} below {MIN_BURN_IN}", self.burn_in)));
        }
        let p = self.dim()?;
        match &self.kind {
            ProcessKind::Iid { sigma } => {
                covariance(p, sigma, "sigma")?;
            }
            ProcessKind::Tvfar1 { a, sigma_eps } => {
                covariance(p, sigma_eps, "sigma_eps")?;
                if a.dim != p {
                    return Err(Error::Dimension(format!("coefficient is {0}x{0}, noise is {p}x{p}", a.dim)));
                }
                let mut worst: f64 = 0.0;
                for i in 0..=100 {
                    worst = worst.max(operator_norm(p, &a.at(i as f64 / 100.0))?);
                }
                if worst > MAX_AR_NORM {
                    return Err(Error::Unstable { norm: worst });
                }
            }
            ProcessKind::Separable { ps, sigma_x, sigma_y } => {
                covariance(ps.p1, sigma_x, "sigma_x")?;
                covariance(ps.p2, sigma_y, "sigma_y")?;
            }
            ProcessKind::CoherentPair { ps, sigma_z, coupling, sigma_xi } => {
                if ps.p1 != ps.p2 {
                    return Err(Error::Dimension(format!(
                        "coherent pair needs equal component dimensions, got {} and {}",
                        ps.p1, ps.p2
                    )));
                }
                covariance(ps.p1, sigma_z, "sigma_z")?;
                covariance(ps.p2, sigma_xi, "sigma_xi")?;
                if coupling.dim != ps.p1 {
                    return Err(Error::Dimension("coupling dimension does not match components".into()));
                }
            }
        }
        Ok(())
    }
}

fn apply(p: usize, m: &[f64], x: &[f64], out: &mut [f64]) {
    for i in 0..p {
        out[i] = (0..p).map(|j| m[i * p + j] * x[j]).sum();
    }
}

fn gaussian(rng: &mut ChaCha8Rng, root: &[f64], z: &mut [f64], out: &mut [f64]) {
    for v in z.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    apply(z.len(), root, z, out);
}

/// Draws a sample path. Deterministic in `spec.seed`; the first `burn_in`
/// innovations are drawn and discarded for every kind, so an autoregression
/// with zero coefficient reproduces the independent kind exactly.
pub fn simulate(spec: &ProcessSpec) -> Result<TimeSeriesSample<f64>> {
    spec.validate()?;
    let p = spec.dim()?;
    let (t, burn) = (spec.t, spec.burn_in);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(t * p);
    let mut z = vec![0.0; p];
    let mut eps = vec![0.0; p];
    match &spec.kind {
        ProcessKind::Iid { sigma } => {
            let root = real_sqrt(&covariance(p, sigma, "sigma")?)?;
            iid_path(&mut rng, &root, t, burn, &mut data);
        }
        ProcessKind::Separable { ps, sigma_x, sigma_y } => {
            let cov = covariance(ps.p1, sigma_x, "sigma_x")?.kron(&covariance(ps.p2, sigma_y, "sigma_y")?);
            let root = real_sqrt(&cov)?;
            iid_path(&mut rng, &root, t, burn, &mut data);
        }
        ProcessKind::Tvfar1 { a, sigma_eps } => {
            let root = real_sqrt(&covariance(p, sigma_eps, "sigma_eps")?)?;
            let zero_coefficient = a.is_zero();
            let mut x = vec![0.0; p];
            let mut ax = vec![0.0; p];
            for step in 0..burn + t {
                gaussian(&mut rng, &root, &mut z, &mut eps);
                if zero_coefficient {
                    x.copy_from_slice(&eps);
                } else {
                    let u = if step < burn { 0.0 } else { (step - burn + 1) as f64 / t as f64 };
                    apply(p, &a.at(u), &x, &mut ax);
                    for i in 0..p {
                        x[i] = ax[i] + eps[i];
                    }
                }
                if step >= burn {
                    data.extend_from_slice(&x);
                }
            }
        }
        ProcessKind::CoherentPair { ps, sigma_z, coupling, sigma_xi } => {
            let q = ps.p1;
            let rz = real_sqrt(&covariance(q, sigma_z, "sigma_z")?)?;
            let rxi = real_sqrt(&covariance(q, sigma_xi, "sigma_xi")?)?;
            let (mut zz, mut zv, mut xi, mut cz) = (vec![0.0; q], vec![0.0; q], vec![0.0; q], vec![0.0; q]);
            for step in 0..burn + t {
                gaussian(&mut rng, &rz, &mut zz, &mut zv);
                gaussian(&mut rng, &rxi, &mut zz, &mut xi);
                if step >= burn {
                    let u = (step - burn + 1) as f64 / t as f64;
                    apply(q, &coupling.at(u), &zv, &mut cz);
                    data.extend_from_slice(&zv);
                    data.extend(cz.iter().zip(&xi).map(|(a, b)| a + b));
                }
            }
        }
    }
    TimeSeriesSample::from_row_major(t, p, data)
}

fn iid_path(rng: &mut ChaCha8Rng, root: &[f64], t: usize, burn: usize, data: &mut Vec<f64>) {
    let p = (root.len() as f64).sqrt() as usize;
    let (mut z, mut x) = (vec![0.0; p], vec![0.0; p]);
    for step in 0..burn + t {
        gaussian(rng, root, &mut z, &mut x);
        if step >= burn {
            data.extend_from_slice(&x);
        }
    }
}

/// Frozen-time spectral density `(u, ω) ↦ F_{u,ω}` of a process.
pub type SpectralDensity = Box<dyn Fn(f64, f64) -> HermitianOperator<f64> + Send + Sync>;

/// Closed-form spectral density `(1/2π) Σ_h C_h^{(u)} e^{−iωh}` of the frozen
/// process at rescaled time `u`, with `C_h = E[X_{t+h} X_tᵀ]`.
///
/// For the autoregression this is `(1/2π) H Σ_ε H†` with `H = (I − A(u) e^{−iω})⁻¹`.
pub fn true_sdo(spec: &ProcessSpec) -> Result<SpectralDensity> {
    spec.validate()?;
    let p = spec.dim()?;
    let scale = 1.0 / (2.0 * PI);
    Ok(match &spec.kind {
        ProcessKind::Iid { sigma } => {
            let f = covariance(p, sigma, "sigma")?.scale(scale);
            Box::new(move |_, _| f.clone())
        }
        ProcessKind::Separable { ps, sigma_x, sigma_y } => {
            let f = covariance(ps.p1, sigma_x, "sigma_x")?.kron(&covariance(ps.p2, sigma_y, "sigma_y")?).scale(scale);
            Box::new(move |_, _| f.clone())
        }
        ProcessKind::Tvfar1 { a, sigma_eps } => {
            let sig = real_matrix(p, sigma_eps);
            let a = a.clone();
            Box::new(move |u, w| {
                let e = Complex::from_polar(1.0, -w);
                let am = real_matrix(p, &a.at(u));
                let lhs = CMatrix::from_fn(p, p, |i, j| {
                    let id = if i == j { 1.0 } else { 0.0 };
                    Complex::new(id, 0.0) - am.get(i, j) * e
                });
                let h = lhs.inverse().expect("stable coefficient keeps I - A e^{-iw} invertible");
                let f = &(&h * &sig) * &h.adjoint();
                HermitianOperator::symmetrized(&f.scale(scale))
            })
        }
        ProcessKind::CoherentPair { ps, sigma_z, coupling, sigma_xi } => {
            let q = ps.p1;
            let sz = real_matrix(q, sigma_z);
            let sxi = real_matrix(q, sigma_xi);
            let coupling = coupling.clone();
            Box::new(move |u, _| {
                let c = real_matrix(q, &coupling.at(u));
                let szc = &sz * &c.transpose();
                let csz = &c * &sz;
                let low = &(&csz * &c.transpose()) + &sxi;
                let joint = CMatrix::from_fn(2 * q, 2 * q, |i, j| match (i < q, j < q) {
                    (true, true) => sz.get(i, j),
                    (true, false) => szc.get(i, j - q),
                    (false, true) => csz.get(i - q, j),
                    (false, false) => low.get(i - q, j - q),
                });
                HermitianOperator::symmetrized(&joint.scale(scale))
            })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::eigh_descending;

    fn diag(v: &[f64]) -> Vec<f64> {
        let p = v.len();
        (0..p * p).map(|k| if k / p == k % p { v[k / p] } else { 0.0 }).collect()
    }

    #[test]
    fn iid_sample_covariance_converges() {
        let spec = ProcessSpec::new(ProcessKind::Iid { sigma: diag(&[1.0, 1.0]) }, 1_000_000, 4);
        let x = simulate(&spec).unwrap();
        let mut c = [0.0; 4];
        for t in 0..x.len() {
            let r = x.row(t);
            for i in 0..2 {
                for j in 0..2 {
                    c[i * 2 + j] += r[i] * r[j];
                }
            }
        }
        for (k, v) in c.iter().enumerate() {
            let target = if k == 0 || k == 3 { 1.0 } else { 0.0 };
            assert!((v / x.len() as f64 - target).abs() < 0.01);
        }
    }

    #[test]
    fn zero_coefficient_reduces_to_iid() {
        let sigma = vec![2.0, 0.5, 0.5, 1.0];
        let iid = simulate(&ProcessSpec::new(ProcessKind::Iid { sigma: sigma.clone() }, 300, 8)).unwrap();
        let ar = ProcessKind::Tvfar1 { a: MatrixPath::zero(2), sigma_eps: sigma };
        assert_eq!(simulate(&ProcessSpec::new(ar, 300, 8)).unwrap(), iid);
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let a = MatrixPath::linear(2, vec![0.2, 0.1, 0.0, 0.3], vec![0.6, 0.0, 0.1, -0.2]).unwrap();
        let spec = ProcessSpec::new(ProcessKind::Tvfar1 { a, sigma_eps: diag(&[1.0, 2.0]) }, 500, 3);
        assert_eq!(simulate(&spec).unwrap(), simulate(&spec).unwrap());
        let other = ProcessSpec { seed: 4, ..spec.clone() };
        assert_ne!(simulate(&spec).unwrap(), simulate(&other).unwrap());
    }

    #[test]
    fn unstable_coefficient_is_rejected() {
        let a = MatrixPath::constant(2, diag(&[0.97, 0.1])).unwrap();
        let spec = ProcessSpec::new(ProcessKind::Tvfar1 { a, sigma_eps: diag(&[1.0, 1.0]) }, 100, 1);
        assert!(matches!(simulate(&spec), Err(Error::Unstable { .. })));
        let short = ProcessSpec { burn_in: 50, ..ProcessSpec::new(ProcessKind::Iid { sigma: diag(&[1.0]) }, 100, 1) };
        assert!(simulate(&short).is_err());
    }

    #[test]
    fn independent_pair_has_no_cross_covariance() {
        let ps = ProductStructure::new(2, 2).unwrap();
        let kind = ProcessKind::CoherentPair {
            ps,
            sigma_z: diag(&[1.0, 0.5]),
            coupling: MatrixPath::zero(2),
            sigma_xi: diag(&[1.0, 2.0]),
        };
        let x = simulate(&ProcessSpec::new(kind.clone(), 200_000, 2)).unwrap();
        for i in 0..2 {
            for j in 2..4 {
                let c: f64 = (0..x.len()).map(|t| x.row(t)[i] * x.row(t)[j]).sum::<f64>() / x.len() as f64;
                assert!(c.abs() < 0.02, "{c}");
            }
        }
        let f = true_sdo(&ProcessSpec::new(kind, 100, 1)).unwrap();
        let m = f(0.3, 1.0);
        for i in 0..2 {
            for j in 2..4 {
                assert_eq!(m.get(i, j), Complex::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn scalar_autoregression_spectrum() {
        let (a, s2) = (0.6, 1.7);
        let spec = ProcessSpec::new(
            ProcessKind::Tvfar1 { a: MatrixPath::constant(1, vec![a]).unwrap(), sigma_eps: vec![s2] },
            100,
            1,
        );
        let f = true_sdo(&spec).unwrap();
        for w in [0.0, 0.4, 1.9, PI] {
            let expected = s2 / (2.0 * PI * (1.0 - Complex::from_polar(a, -w)).norm_sqr());
            assert!((f(0.5, w).get(0, 0).re - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn autoregression_spectrum_matches_autocovariance_series() {
        let a0 = vec![0.3, 0.2, -0.1, 0.25];
        let a1 = vec![0.1, -0.3, 0.2, 0.2];
        let sig = vec![1.0, 0.3, 0.3, 0.8];
        let path = MatrixPath::linear(2, a0, a1).unwrap();
        let spec = ProcessSpec::new(ProcessKind::Tvfar1 { a: path.clone(), sigma_eps: sig.clone() }, 100, 1);
        let f = true_sdo(&spec).unwrap();
        for u in [0.0, 0.35, 1.0] {
            let a = real_matrix(2, &path.at(u));
            let s = real_matrix(2, &sig);
            // Γ₀ = A Γ₀ Aᵀ + Σ by fixed-point iteration
            let mut g0 = s.clone();
            for _ in 0..500 {
                g0 = &(&(&a * &g0) * &a.transpose()) + &s;
            }
            for w in [0.2, 1.3, 3.0] {
                let mut sum = g0.clone();
                let mut ch = g0.clone();
                for h in 1..=200 {
                    ch = &a * &ch;
                    let e = Complex::from_polar(1.0, -w * h as f64);
                    let term = CMatrix::from_fn(2, 2, |i, j| ch.get(i, j) * e + ch.get(j, i) * e.conj());
                    sum = &sum + &term;
                }
                let series = sum.scale(1.0 / (2.0 * PI));
                let closed = f(u, w);
                let diff = (&series - closed.as_matrix()).frobenius_norm();
                assert!(diff < 1e-8, "u={u} w={w}: {diff}");
            }
        }
    }

    #[test]
    fn spectra_are_hermitian_psd() {
        let a =
            MatrixPath::linear(3, diag(&[0.5, -0.3, 0.2]), vec![0.1, 0.4, 0.0, 0.0, 0.2, 0.3, -0.2, 0.0, 0.5]).unwrap();
        let specs = [
            ProcessKind::Tvfar1 { a, sigma_eps: diag(&[1.0, 0.5, 2.0]) },
            ProcessKind::CoherentPair {
                ps: ProductStructure::new(2, 2).unwrap(),
                sigma_z: diag(&[1.0, 0.3]),
                coupling: MatrixPath::linear(2, vec![0.0, 1.0, -1.0, 0.0], diag(&[0.5, 0.5])).unwrap(),
                sigma_xi: diag(&[0.2, 0.2]),
            },
        ];
        for kind in specs {
            let f = true_sdo(&ProcessSpec::new(kind, 100, 0)).unwrap();
            for u in [0.0, 0.5, 1.0] {
                for w in [0.0, 1.0, 2.5, PI] {
                    let m = f(u, w);
                    assert!(m.hermitian_defect() < 1e-12);
                    let es = eigh_descending(&m, 1e-8).unwrap();
                    assert!(*es.values.last().unwrap() >= -1e-10);
                }
            }
        }
    }
}
