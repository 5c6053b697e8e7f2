//! One batch run: data, estimator, measure, pivot law and inference.

use std::path::Path;

use specnorm::inference::{mc_quantiles_at, self_norm_scalar};
use specnorm::measures::Diagnostics;
use specnorm::{
    cached_mc_quantiles, confidence_interval, default_bandwidth_plan, eigh_descending, estimate_dstar,
    estimate_sequential_sdo, evaluate, relevant_test, simulate, BandwidthPlan, DeviationResult, FrequencyGrid,
    KernelSpec, MeasureKind, PivotLaw, SelectedOrder, SequentialSdo, TimeSeriesSample,
};

use crate::config::{DataSource, RunConfig};
use crate::error::{AtStage, Failure, Stage};
use crate::ingest::ingest_csv;
use crate::report::*;

pub fn load_sample(cfg: &RunConfig) -> Result<TimeSeriesSample<f64>, Failure> {
    match &cfg.source {
        DataSource::Csv(path) => ingest_csv(path),
        DataSource::Simulated(spec) => simulate(spec).at(Stage::Simulate),
    }
}

/// A sample together with its estimated sequential operator.
pub struct Estimated {
    pub plan: BandwidthPlan,
    pub sdo: SequentialSdo<f64>,
    pub t: usize,
    pub p: usize,
}

impl Estimated {
    fn diagnostics(&self, cfg: &RunConfig, measure: Option<&Diagnostics>) -> DiagnosticsReport {
        let plan = &self.plan;
        let mut warnings = plan.warnings.clone();
        let (mut near_ties, mut max_psd, mut skipped) = (0, 0.0, 0);
        if let Some(d) = measure {
            warnings.extend(d.warnings.iter().cloned());
            near_ties = d.near_ties;
            max_psd = d.max_psd_projection;
            skipped = d.skipped_cells;
        }
        DiagnosticsReport {
            plan: PlanSummary {
                t: self.t,
                p: self.p,
                alpha: Num(plan.alpha),
                kappa: Num(plan.kappa),
                iota: Num(plan.iota),
                n: plan.n,
                b_f: Num(plan.b_f),
                m: plan.m,
                k_omega: self.sdo.k_omega(),
                band: [Num(cfg.band.0), Num(cfg.band.1)],
                kernel: cfg.kernel.name(),
            },
            near_ties,
            max_psd_projection: Num(max_psd),
            skipped_cells: skipped,
            warnings,
        }
    }
}

pub fn estimate_sdo(cfg: &RunConfig) -> Result<Estimated, Failure> {
    let sample = load_sample(cfg)?;
    let (t, p) = (sample.len(), sample.dim());
    cfg.measure.validate(p).at(Stage::Config)?;
    let plan = default_bandwidth_plan(t, &cfg.plan).at(Stage::Estimate)?;
    let k_omega = cfg.k_omega.unwrap_or_else(|| FrequencyGrid::default_cells(cfg.band.0, cfg.band.1, &plan));
    let sdo =
        estimate_sequential_sdo(&sample, &plan, &KernelSpec::new(cfg.kernel), cfg.band, k_omega).at(Stage::Estimate)?;
    Ok(Estimated { plan, sdo, t, p })
}

/// Pivot table for `(f, g)` holding every level the run needs; read from and
/// written to `cache` when given.
pub fn pivot_law(cfg: &RunConfig, exponents: (i32, i32), cache: Option<&Path>) -> Result<PivotLaw, Failure> {
    let a = cfg.level;
    let extra = [a / 2.0, 1.0 - a / 2.0, a, 1.0 - a];
    let (f, g) = exponents;
    match cache {
        Some(dir) => cached_mc_quantiles(dir, f, g, cfg.replications, cfg.bm_steps, cfg.pivot_seed, &extra),
        None => mc_quantiles_at(f, g, cfg.replications, cfg.bm_steps, cfg.pivot_seed, &extra),
    }
    .at(Stage::Quantiles)
}

fn pivot_summary(law: &PivotLaw) -> PivotSummary {
    PivotSummary {
        f_exponent: law.f_exponent,
        g_exponent: law.g_exponent,
        replications: law.replications,
        bm_steps: law.bm_steps,
        seed: law.seed,
        quantiles: law.table.iter().map(|&(a, q)| [Num(a), Num(q)]).collect(),
    }
}

fn measure_summary(kind: &MeasureKind) -> MeasureSummary {
    let (f, g) = kind.exponents();
    MeasureSummary { name: kind.name(), d: kind.d(), f_exponent: f, g_exponent: g }
}

fn measure(est: &Estimated, kind: MeasureKind) -> Result<(DeviationResult, f64), Failure> {
    let r = evaluate(&est.sdo, kind).at(Stage::Measure)?;
    let v = self_norm_scalar(&r.sequential).at(Stage::Inference)?;
    Ok((r, v))
}

fn order_report(cfg: &RunConfig, est: &Estimated, law: &PivotLaw, nu: f64) -> Result<OrderReport, Failure> {
    let max = cfg.measure.max_order(est.p);
    let d_max = cfg.d_max.unwrap_or(max);
    if d_max > max {
        return Err(Failure::config(
            Stage::Config,
            format!("d_max = {d_max} exceeds {max} for {}", cfg.measure.name()),
        ));
    }
    let paths = (1..=d_max)
        .map(|d| evaluate(&est.sdo, cfg.measure.with_d(d)).map(|r| r.sequential))
        .collect::<specnorm::Result<Vec<_>>>()
        .at(Stage::Measure)?;
    let (order, stats) = estimate_dstar(&paths, law, nu, cfg.level).at(Stage::Inference)?;
    Ok(OrderReport {
        nu: Num(nu),
        d_hat: match order {
            SelectedOrder::Found(d) => Some(d),
            SelectedOrder::NotFound { .. } => None,
        },
        d_max,
        quantile: Num(law.quantile(cfg.level).at(Stage::Inference)?),
        stats: stats
            .iter()
            .map(|s| OrderStat { d: s.d, estimate: Num(s.estimate), v: Num(s.v), statistic: Num(s.statistic) })
            .collect(),
    })
}

/// Full inference report: interval, optional relevant test and optional order
/// selection.
pub fn run_pipeline(cfg: &RunConfig, cache: Option<&Path>) -> Result<InferenceReport, Failure> {
    let est = estimate_sdo(cfg)?;
    let (r, v) = measure(&est, cfg.measure)?;
    let law = pivot_law(cfg, cfg.measure.exponents(), cache)?;
    let ci = confidence_interval(r.point_estimate, v, &law, cfg.level).at(Stage::Inference)?;
    let relevant = match cfg.delta {
        Some(delta) => {
            let t = relevant_test(r.point_estimate, v, &law, delta, cfg.level).at(Stage::Inference)?;
            Some(RelevantReport {
                delta: Num(t.delta),
                quantile: Num(t.quantile),
                threshold: Num(t.threshold),
                reject: t.reject,
            })
        }
        None => None,
    };
    let order = cfg.nu.map(|nu| order_report(cfg, &est, &law, nu)).transpose()?;
    Ok(InferenceReport {
        config_echo: cfg.echo(),
        measure: measure_summary(&cfg.measure),
        estimate: Num(r.point_estimate),
        v: Num(v),
        pivot: pivot_summary(&law),
        ci: CiReport { level: Num(ci.level), lo: Num(ci.lo), hi: Num(ci.hi) },
        relevant_test: relevant,
        order,
        diagnostics: est.diagnostics(cfg, Some(&r.diagnostics)),
        seed: cfg.seed,
        version: VERSION,
    })
}

pub fn run_measure(cfg: &RunConfig) -> Result<MeasureReport, Failure> {
    let est = estimate_sdo(cfg)?;
    let (r, v) = measure(&est, cfg.measure)?;
    let seq = &r.sequential;
    Ok(MeasureReport {
        config_echo: cfg.echo(),
        measure: measure_summary(&cfg.measure),
        estimate: Num(r.point_estimate),
        v: Num(v),
        sequential: SequentialPath {
            eta: nums(&seq.eta_points),
            values: seq.values.iter().map(|x| x.map(Num)).collect(),
        },
        diagnostics: est.diagnostics(cfg, Some(&r.diagnostics)),
        seed: cfg.seed,
        version: VERSION,
    })
}

pub fn run_estimate(cfg: &RunConfig) -> Result<EstimateReport, Failure> {
    let est = estimate_sdo(cfg)?;
    let sdo = &est.sdo;
    let cells = sdo
        .cells()
        .map(|(iu, iw)| {
            let f = sdo.full(iu, iw);
            let eig = eigh_descending(f, 1e-8).at(Stage::Estimate)?;
            Ok(CellSummary {
                u: Num(sdo.u_points[iu]),
                omega: Num(sdo.omega_points[iw]),
                trace: Num(f.trace()),
                eigenvalues: nums(&eig.values),
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok(EstimateReport {
        config_echo: cfg.echo(),
        diagnostics: est.diagnostics(cfg, None),
        cells,
        seed: cfg.seed,
        version: VERSION,
    })
}

pub fn run_quantiles(cfg: &RunConfig, cache: Option<&Path>) -> Result<QuantileReport, Failure> {
    let law = pivot_law(cfg, cfg.measure.exponents(), cache)?;
    Ok(QuantileReport { config_echo: cfg.echo(), pivot: pivot_summary(&law), seed: cfg.seed, version: VERSION })
}
