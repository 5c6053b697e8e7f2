//! Line-oriented `key = value` run configuration.
//!
//! ```text
//! # iid example
//! process = iid
//! t = 4096
//! sigma = 8, 4, 2, 1
//! measure = tvdfpca
//! d = 1
//! nu = 0.85
//! ```
//!
//! Matrices are written row by row, rows separated by `;`. A single row is read
//! as the diagonal of a diagonal matrix.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use specnorm::estimator::{DEFAULT_ALPHA, DEFAULT_IOTA, DEFAULT_KAPPA, MIN_SERIES_LEN};
use specnorm::inference::{DEFAULT_BM_STEPS, DEFAULT_REPLICATIONS, MIN_BM_STEPS, MIN_REPLICATIONS};
use specnorm::simulation::DEFAULT_BURN_IN;
use specnorm::{KernelKind, MatrixPath, MeasureKind, PlanOverrides, ProcessKind, ProcessSpec, ProductStructure};

use crate::error::{Failure, Stage};

const KEYS: &[&str] = &[
    "input",
    "process",
    "t",
    "burn_in",
    "sigma",
    "ar",
    "ar_end",
    "sigma_x",
    "sigma_y",
    "sigma_z",
    "sigma_xi",
    "coupling",
    "coupling_end",
    "p1",
    "p2",
    "alpha",
    "kappa",
    "m",
    "iota",
    "k_omega",
    "band",
    "kernel",
    "measure",
    "d",
    "d_max",
    "level",
    "delta",
    "nu",
    "replications",
    "bm_steps",
    "pivot_seed",
    "seed",
    "out",
];

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Simulated(ProcessSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    pub plan: PlanOverrides,
    /// Frequency cells; `None` picks the plan's default.
    pub k_omega: Option<usize>,
    pub band: (f64, f64),
    pub kernel: KernelKind,
    pub measure: MeasureKind,
    pub d_max: Option<usize>,
    /// Test level `α` (the interval has coverage `1 − α`).
    pub level: f64,
    pub delta: Option<f64>,
    pub nu: Option<f64>,
    pub replications: usize,
    pub bm_steps: usize,
    pub pivot_seed: u64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Canonical `key -> value` listing of every setting, defaults included.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut e = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            e.insert(k.to_string(), v);
        };
        match &self.source {
            DataSource::Csv(p) => put("input", p.display().to_string()),
            DataSource::Simulated(spec) => {
                put("process", serde_json::to_string(&spec.kind).unwrap_or_default());
                put("t", spec.t.to_string());
                put("burn_in", spec.burn_in.to_string());
            }
        }
        let opt = |x: Option<f64>| x.map_or("default".to_string(), |v| v.to_string());
        put("alpha", self.plan.alpha.unwrap_or(DEFAULT_ALPHA).to_string());
        put("kappa", self.plan.kappa.unwrap_or(DEFAULT_KAPPA).to_string());
        put("iota", self.plan.iota.unwrap_or(DEFAULT_IOTA).to_string());
        put("m", self.plan.m.map_or("default".into(), |m| m.to_string()));
        put("k_omega", self.k_omega.map_or("default".into(), |k| k.to_string()));
        put("band", format!("{}, {}", self.band.0, self.band.1));
        put("kernel", self.kernel.name().to_string());
        put("measure", serde_json::to_string(&self.measure).unwrap_or_default());
        put("d_max", self.d_max.map_or("default".into(), |d| d.to_string()));
        put("level", self.level.to_string());
        put("delta", opt(self.delta));
        put("nu", opt(self.nu));
        put("replications", self.replications.to_string());
        put("bm_steps", self.bm_steps.to_string());
        put("pivot_seed", self.pivot_seed.to_string());
        put("seed", self.seed.to_string());
        e
    }

    /// Sets the master seed, which also seeds the simulator.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let DataSource::Simulated(spec) = &mut self.source {
            spec.seed = seed;
        }
        self
    }
}

fn err(msg: impl Into<String>) -> Failure {
    Failure::config(Stage::Config, msg)
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }

    fn parsed<V: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<V>, Failure> {
        match self.map.get(key) {
            None => Ok(None),
            Some((line, v)) => {
                v.parse().map(Some).map_err(|_| err(format!("line {line}: {key} expects {what}, got '{v}'")))
            }
        }
    }

    fn real(&self, key: &str) -> Result<Option<f64>, Failure> {
        let v: Option<f64> = self.parsed(key, "a number")?;
        match v {
            Some(x) if !x.is_finite() => Err(err(format!("{key} must be finite"))),
            _ => Ok(v),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>, Failure> {
        self.parsed(key, "a nonnegative integer")
    }

    fn matrix(&self, key: &str) -> Result<Option<(usize, Vec<f64>)>, Failure> {
        self.raw(key).map(|v| parse_matrix(key, v)).transpose()
    }

    fn required_matrix(&self, key: &str, process: &str) -> Result<(usize, Vec<f64>), Failure> {
        self.matrix(key)?.ok_or_else(|| err(format!("process = {process} requires '{key}'")))
    }
}

/// Parses `a, b; c, d` (full, row-major) or `a, b` (diagonal).
fn parse_matrix(key: &str, text: &str) -> Result<(usize, Vec<f64>), Failure> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|c| {
                    let c = c.trim();
                    c.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| err(format!("{key}: '{c}' is not a finite number")))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    if rows.len() == 1 {
        let diag = &rows[0];
        let p = diag.len();
        let mut m = vec![0.0; p * p];
        for (i, &x) in diag.iter().enumerate() {
            m[i * p + i] = x;
        }
        return Ok((p, m));
    }
    let p = rows.len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(err(format!("{key}: a full matrix needs {p} entries in each of its {p} rows")));
    }
    Ok((p, rows.concat()))
}

fn parse_band(text: &str) -> Result<(f64, f64), Failure> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|s| {
            let s = s.trim();
            match s {
                "pi" => Ok(PI),
                _ => s.parse::<f64>().map_err(|_| err(format!("band: '{s}' is not a number"))),
            }
        })
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b] if a < b && a >= 0.0 && b <= PI + 1e-12 => Ok((a, b.min(PI))),
        [_, _] => Err(err("band must satisfy 0 <= a < b <= pi")),
        _ => Err(err("band expects two values 'a, b'")),
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), Failure> {
    if cond {
        Ok(())
    } else {
        Err(err(msg()))
    }
}

fn product_structure(e: &Entries, what: &str) -> Result<ProductStructure, Failure> {
    match (e.count("p1")?, e.count("p2")?) {
        (Some(p1), Some(p2)) => ProductStructure::new(p1, p2).map_err(|x| err(x.to_string())),
        _ => Err(err(format!("{what}: product structure required (set p1 and p2)"))),
    }
}

fn process_spec(e: &Entries, process: &str) -> Result<ProcessSpec, Failure> {
    let t = e.count("t")?.ok_or_else(|| err("a simulated run requires 't'"))?;
    check(t >= MIN_SERIES_LEN, || format!("t = {t} below minimum {MIN_SERIES_LEN}"))?;
    let kind = match process {
        "iid" => ProcessKind::Iid { sigma: e.required_matrix("sigma", process)?.1 },
        "tvfar1" => {
            let (p, sigma_eps) = e.required_matrix("sigma", process)?;
            let (pa, start) = e.required_matrix("ar", process)?;
            let (pe, end) = e.matrix("ar_end")?.unwrap_or((pa, start.clone()));
            check(pa == p && pe == p, || format!("ar and ar_end must be {p}x{p} like sigma"))?;
            ProcessKind::Tvfar1 { a: MatrixPath::linear(p, start, end).map_err(|x| err(x.to_string()))?, sigma_eps }
        }
        "separable" => ProcessKind::Separable {
            ps: product_structure(e, "process = separable")?,
            sigma_x: e.required_matrix("sigma_x", process)?.1,
            sigma_y: e.required_matrix("sigma_y", process)?.1,
        },
        "coherent_pair" => {
            let ps = product_structure(e, "process = coherent_pair")?;
            let q = ps.p1;
            let coupling = match e.matrix("coupling")? {
                None => MatrixPath::zero(q),
                Some((pc, start)) => {
                    let (_, end) = e.matrix("coupling_end")?.unwrap_or((pc, start.clone()));
                    MatrixPath::linear(pc, start, end).map_err(|x| err(x.to_string()))?
                }
            };
            ProcessKind::CoherentPair {
                ps,
                sigma_z: e.required_matrix("sigma_z", process)?.1,
                coupling,
                sigma_xi: e.required_matrix("sigma_xi", process)?.1,
            }
        }
        other => {
            return Err(err(format!("unknown process '{other}' (expected iid, tvfar1, separable or coherent_pair)")))
        }
    };
    let mut spec = ProcessSpec::new(kind, t, 0);
    spec.burn_in = e.count("burn_in")?.unwrap_or(DEFAULT_BURN_IN);
    spec.validate().map_err(|x| err(format!("process: {x}")))?;
    Ok(spec)
}

fn measure_kind(e: &Entries) -> Result<MeasureKind, Failure> {
    let d = e.count("d")?.unwrap_or(1);
    check(d >= 1, || "d must be at least 1".into())?;
    let kind = match e.raw("measure").unwrap_or("tvdfpca") {
        "tvdfpca" => MeasureKind::Tvdfpca { d },
        "stationarity" => MeasureKind::Stationarity { d },
        "tvdpsca" => MeasureKind::Tvdpsca { d, ps: product_structure(e, "measure = tvdpsca")? },
        "coherence" => MeasureKind::Coherence { d, ps: product_structure(e, "measure = coherence")? },
        other => {
            return Err(err(format!(
                "unknown measure '{other}' (expected tvdfpca, tvdpsca, coherence or stationarity)"
            )))
        }
    };
    Ok(kind)
}

/// Parses and validates a configuration; unset keys take their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, Failure> {
    let mut map = BTreeMap::new();
    let mut unknown = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("line {}: expected 'key = value'", i + 1)))?;
        let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
        if !KEYS.contains(&k.as_str()) {
            unknown.push(k);
            continue;
        }
        if map.insert(k.clone(), (i + 1, v)).is_some() {
            return Err(err(format!("line {}: duplicate key '{k}'", i + 1)));
        }
    }
    if !unknown.is_empty() {
        return Err(err(format!("unknown keys: {}", unknown.join(", "))));
    }
    let e = Entries { map };

    let seed: u64 = e.parsed("seed", "an unsigned integer")?.unwrap_or(0);
    let source = match (e.raw("input"), e.raw("process")) {
        (Some(path), None) => DataSource::Csv(PathBuf::from(path)),
        (None, Some(process)) => DataSource::Simulated(process_spec(&e, process)?),
        (Some(_), Some(_)) => return Err(err("set exactly one of 'input' and 'process', not both")),
        (None, None) => return Err(err("missing required key: one of 'input' or 'process'")),
    };

    let alpha = e.real("alpha")?;
    if let Some(a) = alpha {
        check(a > 0.0 && a < 1.0, || format!("alpha = {a} outside (0, 1)"))?;
    }
    let iota = e.real("iota")?;
    let iota_v = iota.unwrap_or(DEFAULT_IOTA);
    check(iota_v >= 2.0, || format!("iota = {iota_v} must be at least 2"))?;
    let kappa = e.real("kappa")?;
    if let Some(k) = kappa {
        let lo = 1.0 / (2.0 * iota_v + 1.0);
        check(k > lo && k < 1.0, || format!("kappa = {k} outside ({lo}, 1)"))?;
    }
    let m = e.count("m")?;
    check(m != Some(0), || "m must be at least 1".into())?;
    let k_omega = e.count("k_omega")?;
    check(k_omega != Some(0), || "k_omega must be at least 1".into())?;
    let kernel = match e.raw("kernel").unwrap_or("parzen") {
        "parzen" => KernelKind::Parzen,
        "truncated_flat_top" | "flat_top" => KernelKind::TruncatedFlatTop,
        other => return Err(err(format!("unknown kernel '{other}' (expected parzen or truncated_flat_top)"))),
    };
    let band = e.raw("band").map(parse_band).transpose()?.unwrap_or((0.0, PI));

    let measure = measure_kind(&e)?;
    if matches!(measure, MeasureKind::Stationarity { .. }) {
        check((band.0).abs() < 1e-12 && (band.1 - PI).abs() < 1e-12, || {
            "measure = stationarity is defined on the band [0, pi] only".into()
        })?;
    }
    let d_max = e.count("d_max")?;
    if let Some(dm) = d_max {
        check(dm >= 1, || "d_max must be at least 1".into())?;
    }

    let level = e.real("level")?.unwrap_or(0.05);
    check(level > 0.0 && level < 0.5, || format!("level = {level} outside (0, 0.5)"))?;
    let delta = e.real("delta")?;
    if let Some(dl) = delta {
        check(dl >= 0.0, || format!("delta = {dl} must be nonnegative"))?;
    }
    let nu = e.real("nu")?;
    if let Some(n) = nu {
        check(n > 0.0 && n < 1.0, || format!("nu = {n} outside (0, 1)"))?;
        check(!matches!(measure, MeasureKind::Stationarity { .. }), || {
            "order selection needs a share measure, not stationarity".into()
        })?;
    }
    let replications = e.count("replications")?.unwrap_or(DEFAULT_REPLICATIONS);
    check(replications >= MIN_REPLICATIONS, || {
        format!("replications = {replications} below minimum {MIN_REPLICATIONS}")
    })?;
    let bm_steps = e.count("bm_steps")?.unwrap_or(DEFAULT_BM_STEPS);
    check(bm_steps >= MIN_BM_STEPS, || format!("bm_steps = {bm_steps} below minimum {MIN_BM_STEPS}"))?;
    let pivot_seed = e.parsed("pivot_seed", "an unsigned integer")?.unwrap_or(0);

    let config = RunConfig {
        source,
        plan: PlanOverrides { alpha, kappa, m, iota, kernel: Some(kernel) },
        k_omega,
        band,
        kernel,
        measure,
        d_max,
        level,
        delta,
        nu,
        replications,
        bm_steps,
        pivot_seed,
        seed,
        out: e.raw("out").map(PathBuf::from),
    };
    Ok(config.with_seed(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn required_keys_only_gives_defaults() {
        let c = parse_config("input = data.csv\n").unwrap();
        assert_eq!(c.source, DataSource::Csv(PathBuf::from("data.csv")));
        assert_eq!(c.measure, MeasureKind::Tvdfpca { d: 1 });
        assert_eq!(c.band, (0.0, PI));
        assert_eq!((c.level, c.replications, c.bm_steps, c.seed), (0.05, DEFAULT_REPLICATIONS, DEFAULT_BM_STEPS, 0));
        assert_eq!(c.plan.alpha, None);
        assert!(c.delta.is_none() && c.nu.is_none());
    }

    #[test]
    fn small_kappa_is_a_range_error() {
        let e = parse_config("input = x.csv\nkappa = 0.1\n").unwrap_err();
        assert!(e.message.contains("kappa"), "{}", e.message);
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn tensor_measure_needs_split() {
        let e = parse_config("input = x.csv\nmeasure = tvdpsca\n").unwrap_err();
        assert!(e.message.contains("product structure required"));
    }

    #[test]
    fn unknown_keys_are_listed() {
        let e = parse_config("input = x.csv\nfoo = 1\nbar = 2\n").unwrap_err();
        assert!(e.message.contains("foo") && e.message.contains("bar"));
    }

    #[test]
    fn source_must_be_unique() {
        assert!(parse_config("alpha = 0.5\n").is_err());
        assert!(parse_config("input = a.csv\nprocess = iid\nt = 100\nsigma = 1\n").is_err());
    }

    #[test]
    fn type_mismatch_names_the_line() {
        let e = parse_config("input = x.csv\n\n alpha = half\n").unwrap_err();
        assert!(e.message.contains("line 3"), "{}", e.message);
    }

    #[test]
    fn matrices_parse_diagonal_and_full() {
        assert_eq!(parse_matrix("s", "2, 3").unwrap(), (2, vec![2.0, 0.0, 0.0, 3.0]));
        assert_eq!(parse_matrix("s", "1, 0.5; 0.5, 1").unwrap(), (2, vec![1.0, 0.5, 0.5, 1.0]));
        assert!(parse_matrix("s", "1, 2; 3").is_err());
    }

    #[test]
    fn simulated_source_takes_seed() {
        let c = parse_config("process = iid\nt = 128\nsigma = 2, 1  # diagonal\nseed = 9\n").unwrap();
        match c.source {
            DataSource::Simulated(spec) => assert_eq!((spec.t, spec.seed), (128, 9)),
            _ => panic!("expected a simulated source"),
        }
    }

    #[test]
    fn unstable_autoregression_is_rejected() {
        assert!(parse_config("process = tvfar1\nt = 128\nsigma = 1, 1\nar = 0.99, 0.5\n").is_err());
    }
}
