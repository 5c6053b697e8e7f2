//! Deviation-from-structure measures evaluated along the sequential estimator.
//!
//! Every measure produces an η-indexed path of unscaled values `m(η)`. The
//! statistic used for inference is `η^f · m(η)` with the measure's exponent
//! pair `(f, g)`; the scaling is applied analytically in [`SequentialFunctional::scaled`].

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::SequentialSdo;
use crate::hermitian::{eigh_descending, svd, HermitianOperator, ProductStructure, DEFAULT_TIE_TOL};
use crate::scalar::Real;

/// Which structural deviation to measure, with its model order `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "measure", rename_all = "snake_case")]
pub enum MeasureKind {
    /// Share of spectral mass in the `d` leading dynamic principal components.
    Tvdfpca { d: usize },
    /// Share of squared Hilbert-Schmidt mass in the `d` leading separable components
    /// of `H₁ ⊗ H₂`.
    Tvdpsca { d: usize, ps: ProductStructure },
    /// Band-averaged `d`-th canonical coherence between the summands of `H₁ ⊕ H₂`.
    Coherence { d: usize, ps: ProductStructure },
    /// Square-root distance from the best time-constant spectrum, after
    /// restricting to `d` principal components.
    Stationarity { d: usize },
}

impl MeasureKind {
    pub fn d(&self) -> usize {
        match *self {
            Self::Tvdfpca { d } | Self::Stationarity { d } => d,
            Self::Tvdpsca { d, .. } | Self::Coherence { d, .. } => d,
        }
    }

    /// Same measure at another order.
    pub fn with_d(&self, d: usize) -> Self {
        match *self {
            Self::Tvdfpca { .. } => Self::Tvdfpca { d },
            Self::Stationarity { .. } => Self::Stationarity { d },
            Self::Tvdpsca { ps, .. } => Self::Tvdpsca { d, ps },
            Self::Coherence { ps, .. } => Self::Coherence { d, ps },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Tvdfpca { .. } => "tvdfpca",
            Self::Tvdpsca { .. } => "tvdpsca",
            Self::Coherence { .. } => "coherence",
            Self::Stationarity { .. } => "stationarity",
        }
    }

    /// `(f, g)` exponents of the pivot law.
    pub fn exponents(&self) -> (i32, i32) {
        match self {
            Self::Tvdfpca { .. } | Self::Tvdpsca { .. } => (3, 2),
            Self::Coherence { .. } => (4, 3),
            Self::Stationarity { .. } => (2, 1),
        }
    }

    /// Largest admissible order for grid dimension `p`.
    pub fn max_order(&self, p: usize) -> usize {
        match self {
            Self::Tvdfpca { .. } | Self::Stationarity { .. } => p,
            Self::Tvdpsca { ps, .. } => (ps.p1 * ps.p1).min(ps.p2 * ps.p2),
            Self::Coherence { ps, .. } => ps.p1.min(ps.p2),
        }
    }

    /// Checks `d` and the product structure against the grid dimension.
    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            Self::Tvdpsca { ps, .. } if ps.tensor_dim() != p => {
                return Err(Error::Dimension(format!(
                    "tensor split {}x{} does not match grid dimension {p}",
                    ps.p1, ps.p2
                )))
            }
            Self::Coherence { ps, .. } if ps.sum_dim() != p => {
                return Err(Error::Dimension(format!(
                    "direct-sum split {}+{} does not match grid dimension {p}",
                    ps.p1, ps.p2
                )))
            }
            _ => {}
        }
        let (d, max) = (self.d(), self.max_order(p));
        if d == 0 || d > max {
            return Err(Error::InvalidArgument(format!("order d = {d} outside 1..={max} for {}", self.name())));
        }
        Ok(())
    }
}

/// An η-indexed path of one measure on the grid `{1/N, ..., 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequentialFunctional {
    pub kind: MeasureKind,
    pub eta_points: Vec<f64>,
    /// Unscaled values; `None` where fewer than `p` observations enter the estimate.
    pub values: Vec<Option<f64>>,
    pub f_exponent: i32,
    pub g_exponent: i32,
}

impl SequentialFunctional {
    pub fn new(kind: MeasureKind, eta_points: Vec<f64>, values: Vec<Option<f64>>) -> Result<Self> {
        if eta_points.len() != values.len() || eta_points.is_empty() {
            return Err(Error::Dimension(format!("{} eta points for {} values", eta_points.len(), values.len())));
        }
        let (f_exponent, g_exponent) = kind.exponents();
        Ok(Self { kind, eta_points, values, f_exponent, g_exponent })
    }

    /// Value at `η = 1`.
    pub fn point_estimate(&self) -> f64 {
        self.values.last().copied().flatten().unwrap_or(f64::NAN)
    }

    /// `η^f · m(η)`, the path entering the self-normalizer.
    pub fn scaled(&self) -> Vec<Option<f64>> {
        self.eta_points.iter().zip(&self.values).map(|(&eta, v)| v.map(|v| eta.powi(self.f_exponent) * v)).collect()
    }

    pub fn available(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

/// Numerical side information gathered while evaluating a measure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Number of `η = 1` slices with a near-tie at the order boundary.
    pub near_ties: usize,
    /// Largest Frobenius norm removed by PSD projection over all slices.
    pub max_psd_projection: f64,
    /// `(u, ω)` cells left out at `η = 1`.
    pub skipped_cells: usize,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    fn absorb(&mut self, other: &Diagnostics) {
        self.near_ties += other.near_ties;
        self.max_psd_projection = self.max_psd_projection.max(other.max_psd_projection);
        self.skipped_cells += other.skipped_cells;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationResult {
    pub point_estimate: f64,
    pub sequential: SequentialFunctional,
    pub diagnostics: Diagnostics,
}

/// Evaluates `kind` on every slice of `sdo`.
pub fn evaluate<T: Real>(sdo: &SequentialSdo<T>, kind: MeasureKind) -> Result<DeviationResult> {
    match kind {
        MeasureKind::Tvdfpca { d } => tvdfpca_sequential(sdo, d),
        MeasureKind::Tvdpsca { d, ps } => tvdpsca_sequential(sdo, d, ps),
        MeasureKind::Coherence { d, ps } => coherence_sequential(sdo, d, ps),
        MeasureKind::Stationarity { d } => stationarity_sequential(sdo, d),
    }
}

/// Per-cell contributions along η, reduced in storage order so results do
/// not depend on scheduling.
struct CellPath {
    num: Vec<f64>,
    den: Vec<f64>,
    used: Vec<bool>,
    diag: Diagnostics,
}

fn per_cell<T: Real>(
    sdo: &SequentialSdo<T>,
    f: impl Fn(usize, usize) -> Result<CellPath> + Sync,
) -> Result<Vec<CellPath>> {
    let cells: Vec<(usize, usize)> = sdo.cells().collect();
    cells.par_iter().map(|&(iu, iw)| f(iu, iw)).collect()
}

fn first_available<T: Real>(sdo: &SequentialSdo<T>) -> usize {
    sdo.dim.max(1)
}

fn ratio_path<T: Real>(sdo: &SequentialSdo<T>, kind: MeasureKind, paths: Vec<CellPath>) -> Result<DeviationResult> {
    let n = sdo.n;
    let k0 = first_available(sdo);
    let mut diagnostics = Diagnostics::default();
    let mut values = vec![None; n];
    for (idx, v) in values.iter_mut().enumerate() {
        let k = idx + 1;
        if k < k0 {
            continue;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for c in &paths {
            num += c.num[idx];
            den += c.den[idx];
        }
        if den > 0.0 {
            *v = Some(num / den);
        } else if k == n {
            return Err(Error::DegenerateSpectralMass);
        }
    }
    for c in &paths {
        diagnostics.absorb(&c.diag);
    }
    if diagnostics.near_ties > 0 {
        diagnostics.warnings.push(format!(
            "{} of {} cells have near-tied eigenvalues at order {}",
            diagnostics.near_ties,
            paths.len(),
            kind.d()
        ));
    }
    let sequential = SequentialFunctional::new(kind, sdo.eta_points(), values)?;
    Ok(DeviationResult { point_estimate: sequential.point_estimate(), sequential, diagnostics })
}

/// Sequential share of spectral mass carried by the `d` leading eigenvalues.
///
/// Each slice is PSD-projected (negative eigenvalues clamped) before the
/// eigenvalues enter the ratio.
pub fn tvdfpca_sequential<T: Real>(sdo: &SequentialSdo<T>, d: usize) -> Result<DeviationResult> {
    let kind = MeasureKind::Tvdfpca { d };
    kind.validate(sdo.dim)?;
    let n = sdo.n;
    let k0 = first_available(sdo);
    let paths = per_cell(sdo, |iu, iw| {
        let mut c =
            CellPath { num: vec![0.0; n], den: vec![0.0; n], used: vec![true; n], diag: Diagnostics::default() };
        for k in k0..=n {
            let es = eigh_descending(sdo.slice(iu, iw, k), T::of(DEFAULT_TIE_TOL))?;
            let clamped: Vec<f64> = es.values.iter().map(|l| l.as_f64().max(0.0)).collect();
            let removed = es.values.iter().map(|l| l.as_f64().min(0.0).powi(2)).sum::<f64>().sqrt();
            c.diag.max_psd_projection = c.diag.max_psd_projection.max(removed);
            c.num[k - 1] = clamped[..d].iter().sum();
            c.den[k - 1] = clamped.iter().sum();
            if k == n && es.tie_at(d) {
                c.diag.near_ties += 1;
            }
        }
        Ok(c)
    })?;
    ratio_path(sdo, kind, paths)
}

/// Sequential share of `Σ_u ∫ ‖F̂‖²_F` carried by the `d` leading singular
/// values of the Kronecker rearrangement.
pub fn tvdpsca_sequential<T: Real>(sdo: &SequentialSdo<T>, d: usize, ps: ProductStructure) -> Result<DeviationResult> {
    let kind = MeasureKind::Tvdpsca { d, ps };
    kind.validate(sdo.dim)?;
    let n = sdo.n;
    let k0 = first_available(sdo);
    let paths = per_cell(sdo, |iu, iw| {
        let mut c =
            CellPath { num: vec![0.0; n], den: vec![0.0; n], used: vec![true; n], diag: Diagnostics::default() };
        for k in k0..=n {
            let slice = sdo.slice(iu, iw, k);
            let r = crate::hermitian::kron_rearrange(slice, ps)?;
            let sv = svd(&r)?;
            c.num[k - 1] = sv.values[..d].iter().map(|s| s.as_f64().powi(2)).sum();
            // isometry: ‖R‖_F = ‖F̂‖_F
            c.den[k - 1] = slice.frobenius_norm().as_f64().powi(2);
            if k == n && d < sv.values.len() {
                let s1 = sv.values[0].as_f64().max(1.0);
                if (sv.values[d - 1] - sv.values[d]).as_f64() < DEFAULT_TIE_TOL * s1 {
                    c.diag.near_ties += 1;
                }
            }
        }
        Ok(c)
    })?;
    ratio_path(sdo, kind, paths)
}

/// `d`-th canonical coherence `σ_d(F¹²) / sqrt(λ_d(F¹¹) λ_d(F²²))` of one operator
/// split as `H₁ ⊕ H₂`; `None` when a marginal eigenvalue is numerically zero.
pub fn canonical_coherence<T: Real>(f: &HermitianOperator<T>, d: usize, ps: ProductStructure) -> Result<Option<f64>> {
    let (p1, p2) = (ps.p1, ps.p2);
    if p1 + p2 != f.dim() {
        return Err(Error::Dimension(format!("direct-sum split {p1}+{p2} does not match dimension {}", f.dim())));
    }
    let tol = T::of(DEFAULT_TIE_TOL);
    let e11 = eigh_descending(&f.principal_block(0, p1), tol)?;
    let e22 = eigh_descending(&f.principal_block(p1, p2), tol)?;
    let marginal_ok = |es: &crate::hermitian::EigenSystem<T>| {
        let tr: f64 = es.values.iter().map(|l| l.as_f64().max(0.0)).sum();
        es.values[d - 1].as_f64() >= 1e-12 * tr && tr > 0.0
    };
    if !marginal_ok(&e11) || !marginal_ok(&e22) {
        return Ok(None);
    }
    let cross = f.as_matrix().block(0, p1, p1, p2);
    let sv = svd(&cross)?;
    let denom = (e11.values[d - 1].as_f64() * e22.values[d - 1].as_f64()).sqrt();
    Ok(Some(sv.values[d - 1].as_f64() / denom))
}

/// Sequential band-averaged canonical coherence.
///
/// Cells whose marginal spectrum is rank-deficient at order `d` are left out
/// of the average with a warning; if every cell is deficient at `η = 1` the
/// measure is undefined and an error is returned.
pub fn coherence_sequential<T: Real>(
    sdo: &SequentialSdo<T>,
    d: usize,
    ps: ProductStructure,
) -> Result<DeviationResult> {
    let kind = MeasureKind::Coherence { d, ps };
    kind.validate(sdo.dim)?;
    let n = sdo.n;
    let k0 = first_available(sdo);
    let paths = per_cell(sdo, |iu, iw| {
        let mut c =
            CellPath { num: vec![0.0; n], den: vec![0.0; n], used: vec![false; n], diag: Diagnostics::default() };
        for k in k0..=n {
            let (proj, removed) = crate::hermitian::psd_project_with_magnitude(sdo.slice(iu, iw, k))?;
            c.diag.max_psd_projection = c.diag.max_psd_projection.max(removed.as_f64());
            if let Some(r) = canonical_coherence(&proj, d, ps)? {
                c.num[k - 1] = r;
                c.den[k - 1] = 1.0;
                c.used[k - 1] = true;
            }
        }
        if !c.used[n - 1] {
            c.diag.skipped_cells = 1;
        }
        Ok(c)
    })?;
    let skipped = paths.iter().filter(|c| !c.used[n - 1]).count();
    if skipped == paths.len() {
        return Err(Error::RankDeficientMarginal { d });
    }
    let mut res = ratio_path(sdo, kind, paths)?;
    if skipped > 0 {
        res.diagnostics
            .warnings
            .push(format!("{skipped} cells skipped: rank-deficient marginal spectrum at order {d}"));
    }
    Ok(res)
}

/// Projection onto the span of the `d` leading eigenvectors; also reports
/// whether the `d`-th and `(d+1)`-th eigenvalues are nearly tied.
pub fn rank_restrict_flagged<T: Real>(a: &HermitianOperator<T>, d: usize) -> Result<(HermitianOperator<T>, bool)> {
    if d == 0 || d > a.dim() {
        return Err(Error::InvalidArgument(format!("rank {d} outside 1..={}", a.dim())));
    }
    if d == a.dim() {
        return Ok((a.clone(), false));
    }
    let es = eigh_descending(a, T::of(DEFAULT_TIE_TOL))?;
    Ok((es.map_indexed(|j, l| if j < d { l } else { T::zero() }), es.tie_at(d)))
}

/// `Σ_{j≤d} λ_j v_j v_j†`.
pub fn rank_restrict<T: Real>(a: &HermitianOperator<T>, d: usize) -> Result<HermitianOperator<T>> {
    rank_restrict_flagged(a, d).map(|(r, _)| r)
}

/// Square root of the PSD projection of `a` restricted to its `d` leading
/// components, from one eigendecomposition. Returns the root, the removed
/// negative mass and the boundary tie flag.
fn restricted_sqrt<T: Real>(a: &HermitianOperator<T>, d: usize) -> Result<(HermitianOperator<T>, f64, bool)> {
    let es = eigh_descending(a, T::of(DEFAULT_TIE_TOL))?;
    let removed = es.values.iter().map(|l| l.as_f64().min(0.0).powi(2)).sum::<f64>().sqrt();
    let root = es.map_indexed(|j, l| if j < d { l.max(T::zero()).sqrt() } else { T::zero() });
    Ok((root, removed, es.tie_at(d)))
}

/// `Σ_u w_u ‖S̄ − S_u‖²_F` with `S̄ = Σ_u w_u S_u` (weights summing to one).
fn root_dispersion<T: Real>(roots: &[HermitianOperator<T>], weights: &[f64]) -> Result<f64> {
    let dim = roots[0].dim();
    let mut mean = HermitianOperator::<T>::zeros(dim);
    for (s, &w) in roots.iter().zip(weights) {
        mean = &mean + &s.scale(T::of(w));
    }
    let mut total = 0.0;
    for (s, &w) in roots.iter().zip(weights) {
        total += w * (&mean - s).frobenius_norm().as_f64().powi(2);
    }
    Ok(total)
}

/// Sequential square-root distance from stationarity over `[0, π]`.
///
/// At each frequency the `M` rank-restricted window estimates are compared
/// with the time-constant operator whose square root is their average root.
pub fn stationarity_sequential<T: Real>(sdo: &SequentialSdo<T>, d: usize) -> Result<DeviationResult> {
    let kind = MeasureKind::Stationarity { d };
    kind.validate(sdo.dim)?;
    let band = &sdo.frequencies;
    if band.a != 0.0 || (band.b - PI).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "stationarity needs the full band [0, pi], estimator was run on [{}, {}]",
            band.a, band.b
        )));
    }
    let (n, m) = (sdo.n, sdo.m());
    let k0 = first_available(sdo);
    let dw = band.cell_width();
    let weights = vec![1.0 / m as f64; m];
    let freqs: Vec<usize> = (0..sdo.k_omega()).collect();
    let paths: Vec<CellPath> = freqs
        .par_iter()
        .map(|&iw| {
            let mut c =
                CellPath { num: vec![0.0; n], den: vec![1.0; n], used: vec![true; n], diag: Diagnostics::default() };
            for k in k0..=n {
                let mut roots = Vec::with_capacity(m);
                for iu in 0..m {
                    let (root, removed, tie) = restricted_sqrt(sdo.slice(iu, iw, k), d)?;
                    c.diag.max_psd_projection = c.diag.max_psd_projection.max(removed);
                    if k == n && tie {
                        c.diag.near_ties += 1;
                    }
                    roots.push(root);
                }
                c.num[k - 1] = dw * root_dispersion(&roots, &weights)?;
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;

    let mut values = vec![None; n];
    for (idx, v) in values.iter_mut().enumerate().skip(k0 - 1) {
        *v = Some(paths.iter().map(|c| c.num[idx]).sum());
    }
    let mut diagnostics = Diagnostics::default();
    for c in &paths {
        diagnostics.absorb(&c.diag);
    }
    if diagnostics.near_ties > 0 {
        diagnostics
            .warnings
            .push(format!("{} window estimates have near-tied eigenvalues at order {d}", diagnostics.near_ties));
    }
    let sequential = SequentialFunctional::new(kind, sdo.eta_points(), values)?;
    Ok(DeviationResult { point_estimate: sequential.point_estimate(), sequential, diagnostics })
}

/// Population value of a measure on an analytic spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationValue {
    pub value: f64,
    /// For stationarity, `∫∫ Tr F_d − ∫ Tr F̈_d` evaluated with the same quadrature.
    pub trace_identity: Option<f64>,
}

const GL3_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Composite three-point Gauss-Legendre rule with `cells` panels on `[a, b]`.
pub fn gauss_legendre_rule(a: f64, b: f64, cells: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (b - a) / cells as f64;
    let mut nodes = Vec::with_capacity(3 * cells);
    let mut weights = Vec::with_capacity(3 * cells);
    for c in 0..cells {
        let mid = a + (c as f64 + 0.5) * h;
        for (x, w) in GL3_NODES.iter().zip(GL3_WEIGHTS) {
            nodes.push(mid + 0.5 * h * x);
            weights.push(0.5 * h * w);
        }
    }
    (nodes, weights)
}

/// Population measure by composite Gauss-Legendre quadrature with `m_u` time
/// panels on `[0, 1]` and `k_omega` frequency panels on `band`.
///
/// Stationarity always integrates over `[0, π]`.
pub fn measure_population<T: Real>(
    truth: &(dyn Fn(f64, f64) -> HermitianOperator<T> + Sync),
    kind: MeasureKind,
    band: (f64, f64),
    quadrature: (usize, usize),
) -> Result<PopulationValue> {
    let (m_u, k_omega) = quadrature;
    if m_u == 0 || k_omega == 0 {
        return Err(Error::InvalidArgument("quadrature needs at least one panel in each direction".into()));
    }
    let band = if matches!(kind, MeasureKind::Stationarity { .. }) { (0.0, PI) } else { band };
    if !(0.0..=PI).contains(&band.0) || !(0.0..=PI).contains(&band.1) || band.0 >= band.1 {
        return Err(Error::InvalidArgument(format!("band [{}, {}] must lie in [0, pi]", band.0, band.1)));
    }
    let (us, wu) = gauss_legendre_rule(0.0, 1.0, m_u);
    let (omegas, wo) = gauss_legendre_rule(band.0, band.1, k_omega);
    let p = truth(us[0], omegas[0]).dim();
    kind.validate(p)?;

    if let MeasureKind::Stationarity { d } = kind {
        // one frequency at a time: roots over u, their weighted mean, dispersion
        let per_freq: Vec<(f64, f64, f64)> = omegas
            .par_iter()
            .map(|&w| {
                let mut roots = Vec::with_capacity(us.len());
                let mut trace = 0.0;
                for (&u, &wt) in us.iter().zip(&wu) {
                    let f = truth(u, w);
                    let (root, _, _) = restricted_sqrt(&f, d)?;
                    // Tr F_d = ‖F_d^{1/2}‖²_F
                    trace += wt * root.frobenius_norm().as_f64().powi(2);
                    roots.push(root);
                }
                let disp = root_dispersion(&roots, &wu)?;
                let mut mean = HermitianOperator::<T>::zeros(p);
                for (s, &wt) in roots.iter().zip(&wu) {
                    mean = &mean + &s.scale(T::of(wt));
                }
                let tr_mean_sq = mean.frobenius_norm().as_f64().powi(2);
                Ok((disp, trace, tr_mean_sq))
            })
            .collect::<Result<_>>()?;
        let (mut value, mut identity) = (0.0, 0.0);
        for ((disp, trace, tr_bar), &w) in per_freq.iter().zip(&wo) {
            value += w * disp;
            identity += w * (trace - tr_bar);
        }
        return Ok(PopulationValue { value, trace_identity: Some(identity) });
    }

    let nodes: Vec<(f64, f64, f64)> =
        us.iter().zip(&wu).flat_map(|(&u, &a)| omegas.iter().zip(&wo).map(move |(&w, &b)| (u, w, a * b))).collect();
    let parts: Vec<(f64, f64)> = nodes
        .par_iter()
        .map(|&(u, w, wt)| {
            let f = truth(u, w);
            let (num, den) = match kind {
                MeasureKind::Tvdfpca { d } => {
                    let es = eigh_descending(&f, T::of(DEFAULT_TIE_TOL))?;
                    let v: Vec<f64> = es.values.iter().map(|l| l.as_f64().max(0.0)).collect();
                    (v[..d].iter().sum(), v.iter().sum())
                }
                MeasureKind::Tvdpsca { d, ps } => {
                    let sv = svd(&crate::hermitian::kron_rearrange(&f, ps)?)?;
                    let num = sv.values[..d].iter().map(|s| s.as_f64().powi(2)).sum();
                    (num, f.frobenius_norm().as_f64().powi(2))
                }
                MeasureKind::Coherence { d, ps } => (canonical_coherence(&f, d, ps)?.unwrap_or(0.0), 1.0),
                MeasureKind::Stationarity { .. } => unreachable!("handled above"),
            };
            Ok((wt * num, wt * den))
        })
        .collect::<Result<_>>()?;
    let (num, den) = parts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let value = match kind {
        MeasureKind::Coherence { .. } => num / (band.1 - band.0),
        _ => {
            if den <= 0.0 {
                return Err(Error::DegenerateSpectralMass);
            }
            num / den
        }
    };
    Ok(PopulationValue { value, trace_identity: None })
}
