//! Machine-readable reports.
//!
//! Floats are written as `d.dddddddddddddddde±x` (17 significant digits), so
//! every value survives a text round trip bit for bit. Non-finite values are
//! written as the strings `"inf"`, `"-inf"` and `"NaN"`.

use std::collections::BTreeMap;
use std::io;

use serde::{Serialize, Serializer};

use crate::error::Failure;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A float that also serializes when it is not finite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let x = self.0;
        if x.is_finite() {
            s.serialize_f64(x)
        } else if x.is_nan() {
            s.serialize_str("NaN")
        } else if x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl From<f64> for Num {
    fn from(x: f64) -> Self {
        Num(x)
    }
}

pub fn nums(xs: &[f64]) -> Vec<Num> {
    xs.iter().copied().map(Num).collect()
}

struct Digits17;

impl serde_json::ser::Formatter for Digits17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{:.16e}", f64::from(value))
    }
}

/// Compact JSON with 17-digit floats, terminated by a newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    value.serialize(&mut ser).expect("report types always serialize");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureSummary {
    pub name: &'static str,
    pub d: usize,
    pub f_exponent: i32,
    pub g_exponent: i32,
}

#[derive(Clone, Debug, Serialize)]
pub struct PlanSummary {
    pub t: usize,
    pub p: usize,
    pub alpha: Num,
    pub kappa: Num,
    pub iota: Num,
    pub n: usize,
    pub b_f: Num,
    pub m: usize,
    pub k_omega: usize,
    pub band: [Num; 2],
    pub kernel: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticsReport {
    pub plan: PlanSummary,
    pub near_ties: usize,
    pub max_psd_projection: Num,
    pub skipped_cells: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PivotSummary {
    pub f_exponent: i32,
    pub g_exponent: i32,
    pub replications: usize,
    pub bm_steps: usize,
    pub seed: u64,
    /// `(α, q_α)` pairs.
    pub quantiles: Vec<[Num; 2]>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CiReport {
    pub level: Num,
    pub lo: Num,
    pub hi: Num,
}

#[derive(Clone, Debug, Serialize)]
pub struct RelevantReport {
    pub delta: Num,
    pub quantile: Num,
    pub threshold: Num,
    pub reject: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderStat {
    pub d: usize,
    pub estimate: Num,
    #[serde(rename = "V")]
    pub v: Num,
    pub statistic: Num,
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderReport {
    pub nu: Num,
    /// `null` when no order up to `d_max` passes.
    pub d_hat: Option<usize>,
    pub d_max: usize,
    pub quantile: Num,
    pub stats: Vec<OrderStat>,
}

/// Output of `infer` and `select-d`.
#[derive(Clone, Debug, Serialize)]
pub struct InferenceReport {
    pub config_echo: BTreeMap<String, String>,
    pub measure: MeasureSummary,
    pub estimate: Num,
    #[serde(rename = "V")]
    pub v: Num,
    pub pivot: PivotSummary,
    pub ci: CiReport,
    pub relevant_test: Option<RelevantReport>,
    pub order: Option<OrderReport>,
    pub diagnostics: DiagnosticsReport,
    pub seed: u64,
    pub version: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct SequentialPath {
    pub eta: Vec<Num>,
    /// `null` where the estimate uses fewer than `p` observations.
    pub values: Vec<Option<Num>>,
}

/// Output of `measure`.
#[derive(Clone, Debug, Serialize)]
pub struct MeasureReport {
    pub config_echo: BTreeMap<String, String>,
    pub measure: MeasureSummary,
    pub estimate: Num,
    #[serde(rename = "V")]
    pub v: Num,
    pub sequential: SequentialPath,
    pub diagnostics: DiagnosticsReport,
    pub seed: u64,
    pub version: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellSummary {
    pub u: Num,
    pub omega: Num,
    pub trace: Num,
    pub eigenvalues: Vec<Num>,
}

/// Output of `estimate`: per-cell summaries of the full-window estimate.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub config_echo: BTreeMap<String, String>,
    pub diagnostics: DiagnosticsReport,
    pub cells: Vec<CellSummary>,
    pub seed: u64,
    pub version: &'static str,
}

/// Output of `quantiles`.
#[derive(Clone, Debug, Serialize)]
pub struct QuantileReport {
    pub config_echo: BTreeMap<String, String>,
    pub pivot: PivotSummary,
    pub seed: u64,
    pub version: &'static str,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a Failure,
    version: &'static str,
}

pub fn error_json(f: &Failure) -> String {
    to_json(&ErrorReport { error: f, version: VERSION })
}
