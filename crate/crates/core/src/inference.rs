//! Self-normalized inference from sequential measure paths.
//!
//! A measure path `T(η) = η^f m(η)` is normalized by
//! `V² = ∫ (T(η) − η^f T(1))² dη`, a left Riemann sum over `η = k/N`. The
//! ratio `(T(1) − target) / V` is asymptotically distributed as
//! `B(1) / (∫ (η^g B(η) − η^f B(1))² dη)^{1/2}` for a standard Brownian motion
//! `B`, whose quantiles are tabulated by Monte Carlo.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermitian::{eigh_descending, CMatrix, HermitianOperator};
use crate::measures::SequentialFunctional;

pub const DEFAULT_REPLICATIONS: usize = 100_000;
pub const DEFAULT_BM_STEPS: usize = 2000;
pub const MIN_REPLICATIONS: usize = 10_000;
pub const MIN_BM_STEPS: usize = 500;
/// Largest condition number accepted for the joint self-normalizer.
pub const MAX_CONDITION: f64 = 1e12;

/// Quantile levels always tabulated, dense enough around the median and the
/// usual test levels to estimate the density for Monte-Carlo standard errors.
pub const DEFAULT_LEVELS: [f64; 19] =
    [0.005, 0.01, 0.025, 0.04, 0.05, 0.06, 0.1, 0.25, 0.45, 0.5, 0.55, 0.75, 0.9, 0.94, 0.95, 0.96, 0.975, 0.99, 0.995];

const LEVEL_TOL: f64 = 1e-12;

/// Monte-Carlo quantile table of the scalar pivot for exponents `(f, g)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PivotLaw {
    pub f_exponent: i32,
    pub g_exponent: i32,
    pub replications: usize,
    pub bm_steps: usize,
    pub seed: u64,
    /// `(α, q_α)` sorted by `α`.
    pub table: Vec<(f64, f64)>,
}

fn lookup(table: &[(f64, f64)], alpha: f64) -> Result<f64> {
    table.iter().find(|(a, _)| (a - alpha).abs() < LEVEL_TOL).map(|&(_, q)| q).ok_or(Error::MissingQuantile(alpha))
}

fn merged_levels(extra: &[f64]) -> Result<Vec<f64>> {
    let mut levels: Vec<f64> = DEFAULT_LEVELS.to_vec();
    for &a in extra {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile level {a} outside (0, 1)")));
        }
        if !levels.iter().any(|l| (l - a).abs() < LEVEL_TOL) {
            levels.push(a);
        }
    }
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(levels)
}

/// Type-7 empirical quantile of sorted data.
pub fn empirical_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * alpha;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl PivotLaw {
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        lookup(&self.table, alpha)
    }

    /// `(f, g)` as a pair.
    pub fn exponents(&self) -> (i32, i32) {
        (self.f_exponent, self.g_exponent)
    }

    /// Monte-Carlo standard error of `q_α`: `sqrt(α(1−α)/R) / density`, with
    /// the density estimated from the neighbouring tabulated quantiles.
    pub fn standard_error(&self, alpha: f64) -> Result<f64> {
        let i =
            self.table.iter().position(|(a, _)| (a - alpha).abs() < LEVEL_TOL).ok_or(Error::MissingQuantile(alpha))?;
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(self.table.len() - 1);
        let (da, dq) = (self.table[hi].0 - self.table[lo].0, self.table[hi].1 - self.table[lo].1);
        if dq <= 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok((alpha * (1.0 - alpha) / self.replications as f64).sqrt() * dq / da)
    }

    fn key(&self) -> String {
        format!("{} {} {} {} {}", self.f_exponent, self.g_exponent, self.replications, self.bm_steps, self.seed)
    }

    /// Cache file contents: header `f_exp g_exp R n seed`, then `alpha quantile` lines.
    pub fn to_cache_string(&self) -> String {
        let mut s = self.key();
        s.push('\n');
        for (a, q) in &self.table {
            s.push_str(&format!("{a:.16e} {q:.16e}\n"));
        }
        s
    }

    pub fn from_cache_string(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Cache("empty file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Cache(format!("header has {} fields, expected 5", fields.len())));
        }
        let bad = |what: &str| Error::Cache(format!("unreadable {what} in header"));
        let f_exponent = fields[0].parse().map_err(|_| bad("f_exp"))?;
        let g_exponent = fields[1].parse().map_err(|_| bad("g_exp"))?;
        let replications = fields[2].parse().map_err(|_| bad("R"))?;
        let bm_steps = fields[3].parse().map_err(|_| bad("n"))?;
        let seed = fields[4].parse().map_err(|_| bad("seed"))?;
        let mut table = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut it = line.split_whitespace();
            let parse = |s: Option<&str>| s.and_then(|s| s.parse::<f64>().ok());
            match (parse(it.next()), parse(it.next()), it.next()) {
                (Some(a), Some(q), None) => table.push((a, q)),
                _ => return Err(Error::Cache(format!("malformed quantile line {}", i + 2))),
            }
        }
        if table.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Cache("quantile levels are not increasing".into()));
        }
        Ok(Self { f_exponent, g_exponent, replications, bm_steps, seed, table })
    }
}

/// Exponent powers `η_k^e` on the grid `k/n`, `k = 1..=n`.
fn grid_powers(n: usize, e: i32) -> Vec<f64> {
    (1..=n).map(|k| (k as f64 / n as f64).powi(e)).collect()
}

/// Generator for replication `rep`: one ChaCha stream per replication, so
/// draws do not depend on how replications are spread over threads.
fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

fn brownian_path(rng: &mut ChaCha8Rng, path: &mut [f64]) {
    let sd = 1.0 / (path.len() as f64).sqrt();
    let mut b = 0.0;
    for x in path.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        b += sd * z;
        *x = b;
    }
}

/// Raw Monte-Carlo draws of the scalar pivot, in replication order.
///
/// Each replication simulates a Brownian motion on `n` steps and returns
/// `B(1) / sqrt(Σ_k (1/n) (η_k^g B(η_k) − η_k^f B(1))²)`. A zero denominator
/// (probability zero) redraws that replication.
pub fn pivot_samples(f_exp: i32, g_exp: i32, replications: usize, n: usize, seed: u64) -> Vec<f64> {
    let (pf, pg) = (grid_powers(n, f_exp), grid_powers(n, g_exp));
    (0..replications)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |path, rep| {
                let mut rng = replication_rng(seed, rep);
                loop {
                    brownian_path(&mut rng, path);
                    let b1 = path[n - 1];
                    let den: f64 = path
                        .iter()
                        .zip(pf.iter().zip(&pg))
                        .map(|(&b, (&ef, &eg))| (eg * b - ef * b1).powi(2))
                        .sum::<f64>()
                        / n as f64;
                    if den > 0.0 {
                        return b1 / den.sqrt();
                    }
                }
            },
        )
        .collect()
}

fn check_mc_size(replications: usize, n: usize) -> Result<()> {
    if replications < MIN_REPLICATIONS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_REPLICATIONS} replications, got {replications}"
        )));
    }
    if n < MIN_BM_STEPS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_BM_STEPS} Brownian steps, got {n}")));
    }
    Ok(())
}

/// Quantile table of the pivot at the default levels.
pub fn mc_quantiles(f_exp: i32, g_exp: i32, replications: usize, n: usize, seed: u64) -> Result<PivotLaw> {
    mc_quantiles_at(f_exp, g_exp, replications, n, seed, &[])
}

/// Quantile table at the default levels plus `extra_levels`.
pub fn mc_quantiles_at(
    f_exp: i32,
    g_exp: i32,
    replications: usize,
    n: usize,
    seed: u64,
    extra_levels: &[f64],
) -> Result<PivotLaw> {
    check_mc_size(replications, n)?;
    let levels = merged_levels(extra_levels)?;
    let mut draws = pivot_samples(f_exp, g_exp, replications, n, seed);
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let table = levels.iter().map(|&a| (a, empirical_quantile(&draws, a))).collect();
    Ok(PivotLaw { f_exponent: f_exp, g_exponent: g_exp, replications, bm_steps: n, seed, table })
}

/// Path of the cached table for this key inside `dir`.
pub fn cache_path(dir: &Path, f_exp: i32, g_exp: i32, replications: usize, n: usize, seed: u64) -> PathBuf {
    dir.join(format!("pivot_f{f_exp}_g{g_exp}_r{replications}_n{n}_s{seed}.txt"))
}

/// As [`mc_quantiles_at`], reading and refreshing a table cached in `dir`.
///
/// A cached file is reused when its header matches the key and it holds every
/// requested level; otherwise the table is simulated and the file rewritten.
pub fn cached_mc_quantiles(
    dir: &Path,
    f_exp: i32,
    g_exp: i32,
    replications: usize,
    n: usize,
    seed: u64,
    extra_levels: &[f64],
) -> Result<PivotLaw> {
    let path = cache_path(dir, f_exp, g_exp, replications, n, seed);
    let levels = merged_levels(extra_levels)?;
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(law) = PivotLaw::from_cache_string(&text) {
            let matches = (law.f_exponent, law.g_exponent, law.replications, law.bm_steps, law.seed)
                == (f_exp, g_exp, replications, n, seed);
            if matches && levels.iter().all(|&a| law.quantile(a).is_ok()) {
                return Ok(law);
            }
        }
    }
    let law = mc_quantiles_at(f_exp, g_exp, replications, n, seed, extra_levels)?;
    fs::create_dir_all(dir).map_err(|e| Error::Cache(format!("{}: {e}", dir.display())))?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(law.to_cache_string().as_bytes())?;
        file.sync_all()?;
        fs::rename(&tmp, &path)
    };
    write().map_err(|e| Error::Cache(format!("{}: {e}", path.display())))?;
    Ok(law)
}

/// Self-normalizer matrix `V²_{ij}` of a batch of paths.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfNormV {
    /// `k x k` Hermitian matrix of `V²_{ij}`.
    pub squared: CMatrix<f64>,
}

impl SelfNormV {
    pub fn k(&self) -> usize {
        self.squared.rows()
    }

    /// `V_jj = sqrt(V²_jj)`.
    pub fn v(&self, j: usize) -> f64 {
        self.squared.get(j, j).re.max(0.0).sqrt()
    }
}

/// `V²_{ij} = (1/N) Σ_k (T_i(η_k) − η_k^{f_i} T_i(1)) conj(T_j(η_k) − η_k^{f_j} T_j(1))`.
///
/// The paths enter through their scaled values `η^f m(η)`; grid points where
/// any path is unavailable contribute zero to the sums involving it.
pub fn self_norm_v(paths: &[&SequentialFunctional]) -> Result<SelfNormV> {
    let first = paths.first().ok_or_else(|| Error::InvalidArgument("no paths given".into()))?;
    let eta = &first.eta_points;
    if paths.iter().any(|p| p.eta_points != *eta) {
        return Err(Error::GridMismatch);
    }
    let n = eta.len();
    let diffs: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| {
            let end = p.point_estimate();
            if !end.is_finite() {
                return Err(Error::InvalidArgument(format!("{} path has no value at eta = 1", p.kind.name())));
            }
            Ok(p.scaled().iter().zip(eta).map(|(v, &e)| v.map_or(0.0, |v| v - e.powi(p.f_exponent) * end)).collect())
        })
        .collect::<Result<_>>()?;
    let k = paths.len();
    let mut squared = CMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let s: f64 = diffs[i].iter().zip(&diffs[j]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            squared.set(i, j, Complex::new(s, 0.0));
            squared.set(j, i, Complex::new(s, 0.0));
        }
    }
    Ok(SelfNormV { squared })
}

/// Scalar `V` of one path.
pub fn self_norm_scalar(path: &SequentialFunctional) -> Result<f64> {
    self_norm_v(&[path]).map(|v| v.v(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
}

/// `[r̂ + q_{α/2} V, r̂ + q_{1−α/2} V]`, an asymptotic `(1 − α)` interval.
pub fn confidence_interval(estimate: f64, v: f64, law: &PivotLaw, alpha: f64) -> Result<ConfidenceInterval> {
    check_level(alpha)?;
    let (ql, qh) = (law.quantile(alpha / 2.0)?, law.quantile(1.0 - alpha / 2.0)?);
    Ok(ConfidenceInterval { level: 1.0 - alpha, lo: estimate + ql * v, hi: estimate + qh * v })
}

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("level alpha = {alpha} outside (0, 1)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevantDecision {
    pub delta: f64,
    /// `q_{1−α}`.
    pub quantile: f64,
    /// `Δ + q_{1−α} V`.
    pub threshold: f64,
    pub reject: bool,
}

/// Test of `H₀: r ≤ Δ` against `r > Δ`: reject iff `r̂ > Δ + q_{1−α} V`.
///
/// Asymptotically of level `α` and consistent. Equivalently, reject iff `Δ`
/// lies below the one-sided bound of [`lower_confidence_bound`].
pub fn relevant_test(estimate: f64, v: f64, law: &PivotLaw, delta: f64, alpha: f64) -> Result<RelevantDecision> {
    check_level(alpha)?;
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold delta = {delta} must be nonnegative")));
    }
    let quantile = law.quantile(1.0 - alpha)?;
    let threshold = delta + quantile * v;
    Ok(RelevantDecision { delta, quantile, threshold, reject: estimate > threshold })
}

/// Lower end `r̂ − q_{1−α} V` of the one-sided `(1 − α)` interval `[·, ∞)`;
/// equals `r̂ + q_α V` for an exactly symmetric table.
pub fn lower_confidence_bound(estimate: f64, v: f64, law: &PivotLaw, alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    Ok(estimate - law.quantile(1.0 - alpha)? * v)
}

/// Outcome of order selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectedOrder {
    Found(usize),
    /// No order up to `d_max` passes.
    NotFound {
        d_max: usize,
    },
}

impl SelectedOrder {
    pub fn order(&self) -> Option<usize> {
        match *self {
            Self::Found(d) => Some(d),
            Self::NotFound { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderStatistic {
    pub d: usize,
    pub estimate: f64,
    pub v: f64,
    /// `(ŝ_d − ν) / V_dd`, infinite when `V_dd = 0`.
    pub statistic: f64,
}

/// `d̂ = min{d : (ŝ_d − ν)/V_dd > q_α}` over paths for `d = 1, 2, ...`.
pub fn estimate_dstar(
    s_paths: &[SequentialFunctional],
    law: &PivotLaw,
    nu: f64,
    alpha: f64,
) -> Result<(SelectedOrder, Vec<OrderStatistic>)> {
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold nu = {nu} outside (0, 1)")));
    }
    check_level(alpha)?;
    if s_paths.is_empty() {
        return Err(Error::InvalidArgument("no order paths given".into()));
    }
    let q = law.quantile(alpha)?;
    let mut stats = Vec::with_capacity(s_paths.len());
    let mut selected = None;
    for (i, path) in s_paths.iter().enumerate() {
        let d = i + 1;
        let estimate = path.point_estimate();
        let v = self_norm_scalar(path)?;
        let statistic = if v > 0.0 {
            (estimate - nu) / v
        } else if estimate > nu {
            f64::INFINITY
        } else if estimate < nu {
            f64::NEG_INFINITY
        } else {
            return Err(Error::DegenerateOrderStatistic { d });
        };
        if selected.is_none() && statistic > q {
            selected = Some(d);
        }
        stats.push(OrderStatistic { d, estimate, v, statistic });
    }
    let order = selected.map_or(SelectedOrder::NotFound { d_max: s_paths.len() }, SelectedOrder::Found);
    Ok((order, stats))
}

/// Test of `H₀: d* ≤ d₀`: reject iff `d̂ > d₀` (asymptotic level `α`).
pub fn test_order_upper(d_hat: SelectedOrder, d0: usize) -> bool {
    d_hat.order().is_some_and(|d| d > d0)
}

/// Test of `H₀: d* > d₀` (equivalently `s_{d₀} ≤ ν`): reject iff
/// `ŝ_{d₀} > ν + q_{1−α} V_{d₀d₀}`.
///
/// Concluding `d* ≤ d₀` from `d̂ ≤ d₀` would not control the level; this
/// rule does.
pub fn test_order_lower(s_d0: f64, v_d0: f64, law: &PivotLaw, nu: f64, alpha: f64) -> Result<bool> {
    check_level(alpha)?;
    Ok(s_d0 > nu + law.quantile(1.0 - alpha)? * v_d0)
}

/// Monte-Carlo table of `B(1)ᵀ U⁻¹ B(1)` for `k` independent Brownian motions
/// with per-component exponents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointPivotLaw {
    pub exponents: Vec<(i32, i32)>,
    pub replications: usize,
    pub bm_steps: usize,
    pub seed: u64,
    pub table: Vec<(f64, f64)>,
}

impl JointPivotLaw {
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        lookup(&self.table, alpha)
    }
}

/// Solves `A x = b` for a small symmetric positive definite `A` by Cholesky;
/// `None` when `A` is not numerically positive definite.
fn cholesky_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let k = b.len();
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for m in 0..j {
                s -= l[i * k + m] * l[j * k + m];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    let mut y = vec![0.0; k];
    for i in 0..k {
        let s: f64 = (0..i).map(|m| l[i * k + m] * y[m]).sum();
        y[i] = (b[i] - s) / l[i * k + i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|m| l[m * k + i] * x[m]).sum();
        x[i] = (y[i] - s) / l[i * k + i];
    }
    Some(x)
}

/// Raw draws of the joint pivot `B(1)ᵀ U⁻¹ B(1)`.
pub fn joint_pivot_samples(exponents: &[(i32, i32)], replications: usize, n: usize, seed: u64) -> Vec<f64> {
    let k = exponents.len();
    let powers: Vec<(Vec<f64>, Vec<f64>)> =
        exponents.iter().map(|&(f, g)| (grid_powers(n, f), grid_powers(n, g))).collect();
    (0..replications)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![vec![0.0; n]; k]),
            |(path, resid), rep| {
                let mut rng = replication_rng(seed, rep);
                loop {
                    let mut b1 = vec![0.0; k];
                    for (i, (pf, pg)) in powers.iter().enumerate() {
                        brownian_path(&mut rng, path);
                        b1[i] = path[n - 1];
                        for (r, (&b, (&ef, &eg))) in resid[i].iter_mut().zip(path.iter().zip(pf.iter().zip(pg))) {
                            *r = eg * b - ef * b1[i];
                        }
                    }
                    let mut u = vec![0.0; k * k];
                    for i in 0..k {
                        for j in i..k {
                            let s = resid[i].iter().zip(&resid[j]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                            u[i * k + j] = s;
                            u[j * k + i] = s;
                        }
                    }
                    if let Some(x) = cholesky_solve(&u, &b1) {
                        return b1.iter().zip(&x).map(|(a, b)| a * b).sum();
                    }
                }
            },
        )
        .collect()
}

/// Quantile table of the joint pivot at the default levels plus `extra_levels`.
pub fn mc_joint_quantiles(
    exponents: &[(i32, i32)],
    replications: usize,
    n: usize,
    seed: u64,
    extra_levels: &[f64],
) -> Result<JointPivotLaw> {
    if exponents.is_empty() {
        return Err(Error::InvalidArgument("joint law needs at least one component".into()));
    }
    check_mc_size(replications, n)?;
    let levels = merged_levels(extra_levels)?;
    let mut draws = joint_pivot_samples(exponents, replications, n, seed);
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let table = levels.iter().map(|&a| (a, empirical_quantile(&draws, a))).collect();
    Ok(JointPivotLaw { exponents: exponents.to_vec(), replications, bm_steps: n, seed, table })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointDecision {
    pub statistic: f64,
    pub quantile: f64,
    pub reject: bool,
}

/// `D̂ᵀ V⁻¹ D̂` compared with the `(1 − α)` quantile of the joint law.
///
/// The limit matrix is positive definite with probability one; a self-normalizer
/// whose condition number exceeds [`MAX_CONDITION`] is rejected as singular.
pub fn joint_statistic(d_hat: &[f64], v: &SelfNormV, law: &JointPivotLaw, alpha: f64) -> Result<JointDecision> {
    check_level(alpha)?;
    let k = v.k();
    if d_hat.len() != k || law.exponents.len() != k {
        return Err(Error::Dimension(format!(
            "{} deviations, {k}x{k} self-normalizer, {}-component law",
            d_hat.len(),
            law.exponents.len()
        )));
    }
    let herm = HermitianOperator::symmetrized(&v.squared);
    let es = eigh_descending(&herm, crate::hermitian::DEFAULT_TIE_TOL)?;
    let (max, min) = (es.values[0], *es.values.last().unwrap());
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularSelfNormalizer { condition });
    }
    let inv = v.squared.inverse()?;
    let mut statistic = Complex::new(0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            statistic += inv.get(i, j) * (d_hat[i] * d_hat[j]);
        }
    }
    let quantile = law.quantile(1.0 - alpha)?;
    Ok(JointDecision { statistic: statistic.re, quantile, reject: statistic.re > quantile })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::MeasureKind;

    fn path(f_kind: MeasureKind, n: usize, m: impl Fn(f64) -> f64) -> SequentialFunctional {
        let eta: Vec<f64> = (1..=n).map(|k| k as f64 / n as f64).collect();
        let values = eta.iter().map(|&e| Some(m(e))).collect();
        SequentialFunctional::new(f_kind, eta, values).unwrap()
    }

    fn toy_law() -> PivotLaw {
        PivotLaw {
            f_exponent: 3,
            g_exponent: 2,
            replications: 100_000,
            bm_steps: 2000,
            seed: 0,
            table: vec![(0.025, -2.0), (0.05, -1.6), (0.5, 0.0), (0.95, 1.6), (0.975, 2.0)],
        }
    }

    #[test]
    fn type7_quantiles() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(empirical_quantile(&xs, 0.5), 3.0);
        assert_eq!(empirical_quantile(&xs, 0.0), 1.0);
        assert_eq!(empirical_quantile(&xs, 1.0), 5.0);
        assert!((empirical_quantile(&xs, 0.1) - 1.4).abs() < 1e-15);
    }

    #[test]
    fn constant_shape_path_has_zero_v() {
        let p = path(MeasureKind::Tvdfpca { d: 1 }, 100, |_| 0.7);
        assert_eq!(self_norm_scalar(&p).unwrap(), 0.0);
    }

    #[test]
    fn polynomial_path_v() {
        // m(η) = η: V² = ∫ η⁶ (η − 1)² dη = 1/7 − 2/8 + 1/9
        let p = path(MeasureKind::Tvdfpca { d: 1 }, 1000, |e| e);
        let v2 = self_norm_scalar(&p).unwrap().powi(2);
        let exact: f64 = 1.0 / 7.0 - 2.0 / 8.0 + 1.0 / 9.0;
        assert!((exact - 0.003968).abs() < 1e-6);
        assert!((v2 - exact).abs() < 1e-3);
    }

    #[test]
    fn v_matches_expanded_power_sums() {
        // m(η) = Σ c_j η^j; V² = Σ_{a,b} c'_a c'_b S(2f + a + b) with c' the
        // coefficients of m(η) − m(1) and S(e) = (1/N) Σ_k (k/N)^e
        let n = 257;
        let coeffs = [0.3, -1.2, 0.5, 2.0];
        let m1: f64 = coeffs.iter().sum();
        for kind in [MeasureKind::Tvdfpca { d: 1 }, MeasureKind::Stationarity { d: 1 }] {
            let f = kind.exponents().0;
            let p = path(kind, n, |e| coeffs.iter().enumerate().map(|(j, c)| c * e.powi(j as i32)).sum());
            let direct = self_norm_scalar(&p).unwrap().powi(2);
            let mut c = coeffs.to_vec();
            c[0] -= m1;
            let s = |e: i32| (1..=n).map(|k| (k as f64 / n as f64).powi(e)).sum::<f64>() / n as f64;
            let mut expanded = 0.0;
            for (a, ca) in c.iter().enumerate() {
                for (b, cb) in c.iter().enumerate() {
                    expanded += ca * cb * s(2 * f + a as i32 + b as i32);
                }
            }
            assert!((direct - expanded).abs() < 1e-10, "{direct} vs {expanded}");
        }
    }

    #[test]
    fn unavailable_points_contribute_nothing() {
        let mut p = path(MeasureKind::Tvdfpca { d: 1 }, 50, |e| e * e);
        let full = self_norm_scalar(&p).unwrap();
        p.values[0] = None;
        p.values[1] = None;
        let partial = self_norm_scalar(&p).unwrap();
        let eta: [f64; 2] = [0.02, 0.04];
        let removed: f64 = eta.iter().map(|e| (e.powi(3) * (e * e - 1.0)).powi(2) / 50.0).sum();
        assert!((full.powi(2) - partial.powi(2) - removed).abs() < 1e-15);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = path(MeasureKind::Tvdfpca { d: 1 }, 10, |e| e);
        let b = path(MeasureKind::Tvdfpca { d: 1 }, 12, |e| e);
        assert_eq!(self_norm_v(&[&a, &b]).unwrap_err(), Error::GridMismatch);
    }

    #[test]
    fn interval_and_tests() {
        let law = toy_law();
        let ci = confidence_interval(0.4, 0.0, &law, 0.05).unwrap();
        assert_eq!((ci.lo, ci.hi), (0.4, 0.4));
        let ci = confidence_interval(0.4, 0.1, &law, 0.05).unwrap();
        assert!((ci.lo - 0.2).abs() < 1e-15 && (ci.hi - 0.6).abs() < 1e-15);
        assert!(!relevant_test(0.1, 0.3, &law, 0.5, 0.05).unwrap().reject);
        assert!(relevant_test(0.6, 0.0, &law, 0.5, 0.05).unwrap().reject);
        assert!(test_order_lower(0.99, 0.001, &law, 0.9, 0.05).unwrap());
        assert!(!test_order_lower(0.9, 0.01, &law, 0.9, 0.05).unwrap());
        assert!(confidence_interval(0.4, 0.1, &law, 0.2).is_err());
    }

    #[test]
    fn relevant_test_duality() {
        let law = toy_law();
        for &(est, v) in &[(0.3, 0.05), (0.7, 0.2), (0.0, 0.0), (1.2, 0.01)] {
            for delta in [0.0, 0.1, 0.25, 0.5, 0.69, 1.0, 1.5] {
                let reject = relevant_test(est, v, &law, delta, 0.05).unwrap().reject;
                let bound = lower_confidence_bound(est, v, &law, 0.05).unwrap();
                assert_eq!(reject, delta < bound);
            }
        }
    }

    #[test]
    fn order_selection_logic() {
        let law = toy_law();
        let n = 100;
        // nearly flat paths so V is small; values at η = 1 are 0.2, 0.97, 0.99
        let mk = |s: f64| path(MeasureKind::Tvdfpca { d: 1 }, n, move |e| s + 1e-4 * (e - 1.0));
        let paths = vec![mk(0.2), mk(0.97), mk(0.99)];
        let (d, stats) = estimate_dstar(&paths, &law, 0.9, 0.05).unwrap();
        assert_eq!(d, SelectedOrder::Found(2));
        assert!(stats[1].statistic > 100.0 && stats[0].statistic < -100.0);
        let low = vec![mk(0.2), mk(0.5)];
        let (d, stats) = estimate_dstar(&low, &law, 0.9, 0.05).unwrap();
        assert_eq!(d, SelectedOrder::NotFound { d_max: 2 });
        assert!(stats.iter().all(|s| s.statistic < -100.0));
        let flat = vec![path(MeasureKind::Tvdfpca { d: 1 }, n, |_| 0.9)];
        assert_eq!(estimate_dstar(&flat, &law, 0.9, 0.05).unwrap_err(), Error::DegenerateOrderStatistic { d: 1 });
    }

    #[test]
    fn selection_is_monotone_in_threshold() {
        let law = toy_law();
        let n = 64;
        let shares = [0.5, 0.7, 0.8, 0.93, 1.0];
        let paths: Vec<_> =
            shares.iter().map(|&s| path(MeasureKind::Tvdfpca { d: 1 }, n, move |e| s - 0.02 * (1.0 - e))).collect();
        let mut last = 0;
        for nu in [0.1, 0.4, 0.6, 0.75, 0.85, 0.9, 0.95, 0.99] {
            let (d, _) = estimate_dstar(&paths, &law, nu, 0.05).unwrap();
            let d = d.order().unwrap_or(usize::MAX);
            assert!(d >= last);
            last = d;
        }
    }

    #[test]
    fn upper_order_test() {
        assert!(!test_order_upper(SelectedOrder::Found(2), 3));
        assert!(test_order_upper(SelectedOrder::Found(4), 3));
        assert!(!test_order_upper(SelectedOrder::NotFound { d_max: 4 }, 3));
    }

    #[test]
    fn cache_round_trip() {
        let law = mc_quantiles(2, 1, 10_000, 500, 3).unwrap();
        let text = law.to_cache_string();
        assert!(text.starts_with("2 1 10000 500 3\n"));
        assert_eq!(PivotLaw::from_cache_string(&text).unwrap(), law);
        assert!(PivotLaw::from_cache_string("1 2 3\n").is_err());
        let dir = std::env::temp_dir().join(format!("specnorm-cache-test-{}", std::process::id()));
        let a = cached_mc_quantiles(&dir, 2, 1, 10_000, 500, 3, &[0.2]).unwrap();
        assert!(a.quantile(0.2).is_ok());
        let b = cached_mc_quantiles(&dir, 2, 1, 10_000, 500, 3, &[]).unwrap();
        assert_eq!(a, b);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn quantiles_are_seed_deterministic_and_increasing() {
        let a = mc_quantiles(3, 2, 10_000, 500, 11).unwrap();
        let b = mc_quantiles(3, 2, 10_000, 500, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.table.windows(2).all(|w| w[0].1 < w[1].1));
        let c = mc_quantiles(3, 2, 10_000, 500, 12).unwrap();
        assert_ne!(a, c);
        assert!(mc_quantiles(3, 2, 100, 500, 1).is_err());
        assert!(mc_quantiles(3, 2, 10_000, 100, 1).is_err());
    }

    #[test]
    fn samples_do_not_depend_on_thread_count() {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let one = pool.install(|| pivot_samples(4, 3, 500, 200, 9));
        let many = pivot_samples(4, 3, 500, 200, 9);
        assert_eq!(one, many);
    }

    #[test]
    fn joint_with_one_component_is_squared_pivot() {
        let a = pivot_samples(3, 2, 300, 200, 5);
        let b = joint_pivot_samples(&[(3, 2)], 300, 200, 5);
        for (x, y) in a.iter().zip(&b) {
            assert!((x * x - y).abs() < 1e-9 * (1.0 + y));
        }
        let p = path(MeasureKind::Tvdfpca { d: 1 }, 100, |e| e * e);
        let v = self_norm_v(&[&p]).unwrap();
        let law = JointPivotLaw {
            exponents: vec![(3, 2)],
            replications: 10_000,
            bm_steps: 500,
            seed: 0,
            table: vec![(0.95, 4.0)],
        };
        let dec = joint_statistic(&[0.05], &v, &law, 0.05).unwrap();
        assert!((dec.statistic - (0.05 / v.v(0)).powi(2)).abs() < 1e-9);
        let zero = joint_statistic(&[0.0], &v, &law, 0.05).unwrap();
        assert_eq!(zero.statistic, 0.0);
        assert!(!zero.reject);
    }

    #[test]
    fn singular_self_normalizer_is_rejected() {
        let p = path(MeasureKind::Tvdfpca { d: 1 }, 100, |e| e * e);
        let v = self_norm_v(&[&p, &p]).unwrap();
        let law = JointPivotLaw {
            exponents: vec![(3, 2), (3, 2)],
            replications: 10_000,
            bm_steps: 500,
            seed: 0,
            table: vec![(0.95, 4.0)],
        };
        assert!(matches!(joint_statistic(&[0.1, 0.1], &v, &law, 0.05), Err(Error::SingularSelfNormalizer { .. })));
    }
}
