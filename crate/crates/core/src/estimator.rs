//! Sequential lag-window estimator of the time-varying spectral density operator.
//!
//! For each midpoint `u` of the time grid a window of `N` consecutive
//! observations is taken, and for each frequency `ω` and each `k = 1..=N` the
//! estimator built from the first `k` observations of the window is stored.
//! The slice at `k = N` is the ordinary (non-sequential) local estimator.

use std::f64::consts::PI;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermitian::{psd_project, CMatrix, HermitianOperator};
use crate::scalar::Real;

/// A discretized functional time series: `T` observations of a curve sampled
/// on `p` grid points.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesSample<T> {
    len: usize,
    dim: usize,
    data: Vec<T>,
    grid_weights: Vec<T>,
}

impl<T: Real> TimeSeriesSample<T> {
    /// Row-major `len x dim` data with uniform quadrature weights `1/p`.
    pub fn from_row_major(len: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        let w = vec![T::one() / T::of_usize(dim.max(1)); dim];
        Self::with_weights(len, dim, data, w)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Dimension(format!("row {i} has {} values, expected {dim}", r.len())));
        }
        Self::from_row_major(rows.len(), dim, rows.concat())
    }

    pub fn with_weights(len: usize, dim: usize, data: Vec<T>, grid_weights: Vec<T>) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 observations, got {len}")));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("grid dimension must be positive".into()));
        }
        if data.len() != len * dim {
            return Err(Error::Dimension(format!("{} values for a {len}x{dim} sample", data.len())));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at row {}, column {}", pos / dim, pos % dim)));
        }
        if grid_weights.len() != dim || grid_weights.iter().any(|&w| !(w > T::zero())) {
            return Err(Error::InvalidArgument("grid weights must be p positive reals".into()));
        }
        let total: T = grid_weights.iter().copied().sum();
        if (total - T::one()).abs() > T::of(1e-10).max(T::epsilon() * T::of(64.0)) {
            return Err(Error::InvalidArgument(format!("grid weights sum to {total}, not 1")));
        }
        Ok(Self { len, dim, data, grid_weights })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[T] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn grid_weights(&self) -> &[T] {
        &self.grid_weights
    }

    /// Copy with each grid coordinate centered by its full-sample mean.
    pub fn centered(&self) -> Self {
        let mut means = vec![T::zero(); self.dim];
        for t in 0..self.len {
            for (m, &x) in means.iter_mut().zip(self.row(t)) {
                *m += x;
            }
        }
        let n = T::of_usize(self.len);
        for m in &mut means {
            *m /= n;
        }
        let data = self.data.chunks(self.dim).flat_map(|r| r.iter().zip(&means).map(|(&x, &m)| x - m)).collect();
        Self { data, ..self.clone() }
    }

    pub fn scaled(&self, c: T) -> Self {
        Self { data: self.data.iter().map(|&x| x * c).collect(), ..self.clone() }
    }

    /// Rows multiplied by `sqrt(p * w_j)`, so outer products of weighted rows
    /// represent the grid operators symmetrically (uniform weights: identity).
    fn weighted_rows(&self) -> Vec<T> {
        let p = T::of_usize(self.dim);
        let factors: Vec<T> = self.grid_weights.iter().map(|&w| (p * w).sqrt()).collect();
        self.data.chunks(self.dim).flat_map(|r| r.iter().zip(&factors).map(|(&x, &f)| x * f)).collect()
    }
}

/// Lag-window kernel family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Parzen,
    TruncatedFlatTop,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Parzen => "parzen",
            Self::TruncatedFlatTop => "truncated_flat_top",
        }
    }
}

/// An even kernel supported on `[-1, 1]` with `w(0) = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { kind: KernelKind::Parzen }
    }
}

impl KernelSpec {
    pub fn new(kind: KernelKind) -> Self {
        Self { kind }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let a = x.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self.kind {
            KernelKind::Parzen => {
                if a <= 0.5 {
                    1.0 - 6.0 * a * a + 6.0 * a * a * a
                } else {
                    2.0 * (1.0 - a).powi(3)
                }
            }
            // flat on [-1/2, 1/2], linear taper to zero at |x| = 1
            KernelKind::TruncatedFlatTop => {
                if a <= 0.5 {
                    1.0
                } else {
                    2.0 * (1.0 - a)
                }
            }
        }
    }

    /// `κ_f = ∫ w(x)² dx`.
    pub fn l2_norm_sqr(&self) -> f64 {
        match self.kind {
            KernelKind::Parzen => 151.0 / 280.0,
            KernelKind::TruncatedFlatTop => 4.0 / 3.0,
        }
    }
}

/// Overridable bandwidth parameters; `None` fields take defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanOverrides {
    pub alpha: Option<f64>,
    pub kappa: Option<f64>,
    pub m: Option<usize>,
    pub iota: Option<f64>,
    pub kernel: Option<KernelKind>,
}

/// Window length, bandwidth and time-grid size for one series length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPlan {
    pub t: usize,
    pub alpha: f64,
    pub kappa: f64,
    /// Window length (number of observations per local estimate).
    pub n: usize,
    /// Lag-window bandwidth `N^-κ`.
    pub b_f: f64,
    /// Number of time midpoints.
    pub m: usize,
    pub iota: f64,
    pub kappa_f: f64,
    /// `sqrt(N b_f / κ_f)`.
    pub rho_t: f64,
    /// Finite-sample violations of the asymptotic rate conditions.
    pub warnings: Vec<String>,
}

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_KAPPA: f64 = 0.4;
pub const DEFAULT_IOTA: f64 = 2.0;
pub const MIN_SERIES_LEN: usize = 64;

/// Default plan for a series of length `t`: `N = round(T^α)` forced even,
/// `b_f = N^-κ`, `M = max(4, round(N^0.3))`.
pub fn default_bandwidth_plan(t: usize, overrides: &PlanOverrides) -> Result<BandwidthPlan> {
    if t < MIN_SERIES_LEN {
        return Err(Error::InvalidPlan(format!("series length {t} below minimum {MIN_SERIES_LEN}")));
    }
    let alpha = overrides.alpha.unwrap_or(DEFAULT_ALPHA);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidPlan(format!("alpha = {alpha} outside (0, 1)")));
    }
    let mut n = (t as f64).powf(alpha).round() as usize;
    if n % 2 == 1 {
        n -= 1;
    }
    let n = n.max(2);
    let m = overrides.m.unwrap_or_else(|| 4.max((n as f64).powf(0.3).round() as usize));
    let kappa = overrides.kappa.unwrap_or(DEFAULT_KAPPA);
    let iota = overrides.iota.unwrap_or(DEFAULT_IOTA);
    let kernel = KernelSpec::new(overrides.kernel.unwrap_or(KernelKind::Parzen));
    let mut plan = BandwidthPlan::custom(t, n, kappa, m, iota, kernel)?;
    plan.alpha = alpha;
    plan.warnings = rate_warnings(&plan);
    Ok(plan)
}

fn rate_warnings(plan: &BandwidthPlan) -> Vec<String> {
    let mut w = Vec::new();
    let (alpha, kappa, iota) = (plan.alpha, plan.kappa, plan.iota);
    if kappa >= 1.0 / (iota + 1.0) {
        let bound = 2.0 / (4.0 - kappa);
        if alpha >= bound {
            w.push(format!("alpha = {alpha} violates alpha < 2/(4 - kappa) = {bound:.6}"));
        }
    } else {
        let bound = 2.0 / ((2.0 * iota + 1.0) * kappa + 2.0);
        if alpha >= bound {
            w.push(format!("alpha = {alpha} violates alpha < 2/((2 iota + 1) kappa + 2) = {bound:.6}"));
        }
        let mcap = (plan.n as f64).powf((2.0 * iota + 1.0) * kappa - 1.0);
        if plan.m as f64 > mcap {
            w.push(format!("M = {} exceeds N^((2 iota + 1) kappa - 1) = {mcap:.4}", plan.m));
        }
    }
    let nk = (plan.n as f64).powf(1.0 - kappa);
    if plan.m as f64 > nk {
        w.push(format!("M = {} exceeds N^(1 - kappa) = {nk:.4}", plan.m));
    }
    if nk > (plan.m as f64).powi(3) {
        w.push(format!("N^(1 - kappa) = {nk:.4} exceeds M^3 = {}", plan.m.pow(3)));
    }
    w
}

impl BandwidthPlan {
    /// Plan with an explicit window length; `alpha` is recorded as `ln N / ln T`.
    pub fn custom(t: usize, n: usize, kappa: f64, m: usize, iota: f64, kernel: KernelSpec) -> Result<Self> {
        if iota < 2.0 {
            return Err(Error::InvalidPlan(format!("smoothness order iota = {iota} must be at least 2")));
        }
        let lo = 1.0 / (2.0 * iota + 1.0);
        if !(kappa > lo && kappa < 1.0) {
            return Err(Error::InvalidPlan(format!("kappa = {kappa} outside ({lo}, 1)")));
        }
        if n < 2 || n > t {
            return Err(Error::InvalidPlan(format!("window length N = {n} must lie in [2, T = {t}]")));
        }
        if m == 0 {
            return Err(Error::InvalidPlan("need at least one time midpoint".into()));
        }
        if m * n > t {
            return Err(Error::SeriesTooShort { needed: m * n, available: t });
        }
        let b_f = (n as f64).powf(-kappa);
        let kappa_f = kernel.l2_norm_sqr();
        Ok(Self {
            t,
            alpha: (n as f64).ln() / (t as f64).ln(),
            kappa,
            n,
            b_f,
            m,
            iota,
            kappa_f,
            rho_t: (n as f64 * b_f / kappa_f).sqrt(),
            warnings: Vec::new(),
        })
    }

    /// First (0-based) observation of each window, aligned with [`midpoint_grid`].
    pub fn window_starts(&self) -> Vec<usize> {
        let (t, n, m) = (self.t, self.n, self.m);
        if m == 1 {
            return vec![t / 2 - n / 2];
        }
        // floor(u_j T) = floor((N (M-1) + 2 j (T-N)) / (2 (M-1)))
        (0..m).map(|j| (n * (m - 1) + 2 * j * (t - n)) / (2 * (m - 1)) - n / 2).collect()
    }
}

/// Equidistant time midpoints from `N/(2T)` to `1 - N/(2T)`.
pub fn midpoint_grid(plan: &BandwidthPlan) -> Vec<f64> {
    let (t, n, m) = (plan.t as f64, plan.n as f64, plan.m);
    if m == 1 {
        return vec![0.5];
    }
    let first = n / (2.0 * t);
    let last = 1.0 - first;
    (0..m).map(|j| first + (last - first) * j as f64 / (m - 1) as f64).collect()
}

/// `(2π)^-1 w(b_f (s - t)) e^{iω(s - t)}`.
pub fn local_weight<T: Real>(kernel: &KernelSpec, b_f: f64, omega: f64, s: i64, t: i64) -> Complex<T> {
    let h = (s - t) as f64;
    let w = kernel.eval(b_f * h) / (2.0 * PI);
    if w == 0.0 {
        return Complex::new(T::zero(), T::zero());
    }
    let (sin, cos) = (omega * h).sin_cos();
    Complex::new(T::of(w * cos), T::of(w * sin))
}

/// Midpoint rule on `[a, b]` with `k` cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub a: f64,
    pub b: f64,
    pub cells: usize,
}

impl FrequencyGrid {
    pub fn new(a: f64, b: f64, cells: usize) -> Result<Self> {
        if !(0.0..=PI).contains(&a) || !(0.0..=PI).contains(&b) || a >= b {
            return Err(Error::InvalidArgument(format!("frequency band [{a}, {b}] must satisfy 0 <= a < b <= pi")));
        }
        if cells == 0 {
            return Err(Error::InvalidArgument("need at least one frequency cell".into()));
        }
        Ok(Self { a, b, cells })
    }

    /// `⌈(b - a)/π · N^κ⌉` cells.
    pub fn default_cells(a: f64, b: f64, plan: &BandwidthPlan) -> usize {
        (((b - a) / PI) * (plan.n as f64).powf(plan.kappa)).ceil().max(1.0) as usize
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn cell_width(&self) -> f64 {
        self.width() / self.cells as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.cell_width();
        (0..self.cells).map(|k| self.a + (k as f64 + 0.5) * h).collect()
    }
}

/// `F̂_{u,ω}(k/N)` for every time midpoint, frequency cell and `k = 1..=N`.
#[derive(Clone, Debug)]
pub struct SequentialSdo<T> {
    pub u_points: Vec<f64>,
    pub frequencies: FrequencyGrid,
    pub omega_points: Vec<f64>,
    /// Window length; the η grid is `{1/N, ..., 1}`.
    pub n: usize,
    pub dim: usize,
    tensor: Vec<HermitianOperator<T>>,
}

impl<T: Real> SequentialSdo<T> {
    pub fn m(&self) -> usize {
        self.u_points.len()
    }

    pub fn k_omega(&self) -> usize {
        self.omega_points.len()
    }

    pub fn eta_points(&self) -> Vec<f64> {
        (1..=self.n).map(|k| k as f64 / self.n as f64).collect()
    }

    /// Slice at time index `iu`, frequency index `iw` and `η = k/N` (`1 <= k <= N`).
    pub fn slice(&self, iu: usize, iw: usize, k: usize) -> &HermitianOperator<T> {
        assert!((1..=self.n).contains(&k), "eta index {k} outside 1..={}", self.n);
        &self.tensor[(iu * self.k_omega() + iw) * self.n + (k - 1)]
    }

    /// The non-sequential estimate `F̂_{u,ω} = F̂_{u,ω}(1)`.
    pub fn full(&self, iu: usize, iw: usize) -> &HermitianOperator<T> {
        self.slice(iu, iw, self.n)
    }

    /// Iterates over `(iu, iw)` cells in storage order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let kw = self.k_omega();
        (0..self.m()).flat_map(move |iu| (0..kw).map(move |iw| (iu, iw)))
    }
}

/// Sequential estimator on the grid `η = k/N`.
///
/// The sample is centered by its full-sample mean first; `F̂(k/N)` then equals
/// the local estimator computed from the first `k` observations of each window.
/// The `η = 1` slice is passed through [`psd_project`].
pub fn estimate_sequential_sdo<T: Real>(
    sample: &TimeSeriesSample<T>,
    plan: &BandwidthPlan,
    kernel: &KernelSpec,
    band: (f64, f64),
    k_omega: usize,
) -> Result<SequentialSdo<T>> {
    let frequencies = FrequencyGrid::new(band.0, band.1, k_omega)?;
    if plan.t != sample.len() {
        return Err(Error::Dimension(format!(
            "plan built for T = {} but sample has {} observations",
            plan.t,
            sample.len()
        )));
    }
    let centered = sample.centered();
    let rows = centered.weighted_rows();
    let p = sample.dim();
    let n = plan.n;
    let starts = plan.window_starts();
    let omegas = frequencies.points();
    let cells: Vec<(usize, usize)> =
        (0..starts.len()).flat_map(|iu| (0..omegas.len()).map(move |iw| (iu, iw))).collect();

    let per_cell: Vec<Vec<HermitianOperator<T>>> = cells
        .par_iter()
        .map(|&(iu, iw)| {
            let window = &rows[starts[iu] * p..(starts[iu] + n) * p];
            let mut path = sequential_path(window, p, kernel, plan.b_f, omegas[iw]);
            let last = path.last_mut().expect("window length is at least 2");
            *last = psd_project(last)?;
            Ok(path)
        })
        .collect::<Result<_>>()?;

    Ok(SequentialSdo {
        u_points: midpoint_grid(plan),
        frequencies,
        omega_points: omegas,
        n,
        dim: p,
        tensor: per_cell.into_iter().flatten().collect(),
    })
}

fn lag_weights<T: Real>(kernel: &KernelSpec, b_f: f64, omega: f64, n: usize) -> Vec<Complex<T>> {
    let max_lag = n.min(if b_f > 0.0 { (1.0 / b_f).floor() as usize + 1 } else { n });
    (0..=max_lag).map(|h| local_weight(kernel, b_f, omega, h as i64, 0)).collect()
}

/// `S_k / k` for `k = 1..=N`, with `S_k = Σ_{s,t ≤ k} w̃_{s,t} x_s x_tᵀ` updated
/// by the new row and column of the weight matrix at each step.
fn sequential_path<T: Real>(
    window: &[T],
    p: usize,
    kernel: &KernelSpec,
    b_f: f64,
    omega: f64,
) -> Vec<HermitianOperator<T>> {
    let n = window.len() / p;
    let weights = lag_weights::<T>(kernel, b_f, omega, n);
    let w0 = weights[0].re;
    let mut acc = CMatrix::<T>::zeros(p, p);
    let mut y = vec![Complex::new(T::zero(), T::zero()); p];
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let xk = &window[k * p..(k + 1) * p];
        // y = Σ_{t<k} w̃_{k,t} x_t
        y.iter_mut().for_each(|v| *v = Complex::new(T::zero(), T::zero()));
        for (h, w) in weights.iter().enumerate().skip(1) {
            if h > k {
                break;
            }
            if w.re == T::zero() && w.im == T::zero() {
                continue;
            }
            let xt = &window[(k - h) * p..(k - h + 1) * p];
            for (yi, &x) in y.iter_mut().zip(xt) {
                *yi += w * x;
            }
        }
        for i in 0..p {
            for j in i..p {
                let inc = y[j] * xk[i] + y[i].conj() * xk[j] + Complex::new(w0 * xk[i] * xk[j], T::zero());
                let v = acc.get(i, j) + inc;
                acc.set(i, j, v);
            }
        }
        let inv_k = T::one() / T::of_usize(k + 1);
        let slice = CMatrix::from_fn(p, p, |i, j| {
            if i < j {
                acc.get(i, j) * inv_k
            } else if i == j {
                Complex::new(acc.get(i, i).re * inv_k, T::zero())
            } else {
                acc.get(j, i).conj() * inv_k
            }
        });
        out.push(HermitianOperator::symmetrized(&slice));
    }
    out
}

/// Direct evaluation of the sequential estimator at any `η ∈ [0, 1]` from a
/// window of `N` rows (row-major, `p` columns), including the interpolation
/// terms weighted by `f(η, N) = ηN - ⌊ηN⌋`. Rows are used as given.
pub fn sequential_estimate_at<T: Real>(
    window: &[T],
    p: usize,
    kernel: &KernelSpec,
    b_f: f64,
    omega: f64,
    eta: f64,
) -> Result<HermitianOperator<T>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta = {eta} outside [0, 1]")));
    }
    if p == 0 || !window.len().is_multiple_of(p) {
        return Err(Error::Dimension("window is not a whole number of rows".into()));
    }
    let n = window.len() / p;
    let mut en = eta * n as f64;
    // η = k/N must land on k, not on the row before it
    if (en - en.round()).abs() <= 4.0 * f64::EPSILON * n as f64 {
        en = en.round();
    }
    let k = en.floor() as usize;
    if k == 0 {
        return Ok(HermitianOperator::zeros(p));
    }
    let frac = en - k as f64;
    let row = |s: usize| &window[s * p..(s + 1) * p];
    let w = |s: usize, t: usize| local_weight::<T>(kernel, b_f, omega, s as i64, t as i64);
    let mut acc = CMatrix::<T>::zeros(p, p);
    let add_outer = |acc: &mut CMatrix<T>, c: Complex<T>, a: &[T], b: &[T]| {
        for i in 0..p {
            for j in 0..p {
                let v = acc.get(i, j) + c * (a[i] * b[j]);
                acc.set(i, j, v);
            }
        }
    };
    for s in 0..k {
        for t in 0..k {
            add_outer(&mut acc, w(s, t), row(s), row(t));
        }
    }
    if frac > 0.0 && k < n {
        let f = T::of(frac);
        for s in 0..k {
            add_outer(&mut acc, w(s, k) * f, row(s), row(k));
            add_outer(&mut acc, w(k, s) * f, row(k), row(s));
        }
        add_outer(&mut acc, w(k, k) * f, row(k), row(k));
    }
    Ok(HermitianOperator::symmetrized(&acc.scale(T::one() / T::of_usize(k))))
}
