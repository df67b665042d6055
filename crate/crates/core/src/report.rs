//! Static versus tuned throughput across models and latency targets, and the
//! CSV files that carry it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loadgen::SizeDistribution;
use crate::model::{builtin_model, ModelSpec};
use crate::platform::{power, AcceleratorSpec, CpuPlatformSpec};
use crate::sim::TraceParams;
use crate::targets::{sla_seconds, SlaLevel};
use crate::tune::{pareto, static_baseline, tune, SweepRow, TuneOutcome, TunedConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Scheduler {
    #[serde(rename = "static")]
    Static,
    #[serde(rename = "tuned-cpu")]
    TunedCpu,
    #[serde(rename = "tuned-accel")]
    TunedAccel,
}

impl Scheduler {
    pub const ALL: [Scheduler; 3] = [Scheduler::Static, Scheduler::TunedCpu, Scheduler::TunedAccel];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheduler::Static => "static",
            Scheduler::TunedCpu => "tuned-cpu",
            Scheduler::TunedAccel => "tuned-accel",
        }
    }
}

/// Everything measured for one (model, target) pair. A `None` tuned result
/// means no batch size met the target.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseResult {
    pub model: String,
    pub level: SlaLevel,
    pub sla_s: f64,
    pub static_baseline: TunedConfig,
    pub tuned: Option<TuneOutcome>,
}

impl CaseResult {
    pub fn config(&self, scheduler: Scheduler) -> Option<&TunedConfig> {
        match scheduler {
            Scheduler::Static => Some(&self.static_baseline),
            Scheduler::TunedCpu => self.tuned.as_ref().map(|t| &t.cpu_only).filter(|c| c.qps > 0.0),
            Scheduler::TunedAccel => self.tuned.as_ref().and_then(|t| t.offload.as_ref()),
        }
    }

    /// QPS of a scheduler, zero when infeasible.
    pub fn qps(&self, scheduler: Scheduler) -> f64 {
        self.config(scheduler).map_or(0.0, |c| c.qps)
    }
}

/// Runs the static baseline and the tuner for one case.
pub fn run_case(
    model: &ModelSpec,
    cpu: &CpuPlatformSpec,
    accel: Option<&AcceleratorSpec>,
    level: SlaLevel,
    sla_s: f64,
    params: &TraceParams,
) -> Result<CaseResult> {
    let static_baseline = static_baseline(model, cpu, sla_s, params)?;
    let tuned = match tune(model, cpu, accel, sla_s, params) {
        Ok(t) => Some(t),
        Err(Error::InfeasibleSla { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(CaseResult {
        model: model.name.clone(),
        level,
        sla_s,
        static_baseline,
        tuned,
    })
}

/// Every built-in `models` entry at every level, evaluated in parallel.
pub fn run_cases(
    models: &[&str],
    levels: &[SlaLevel],
    cpu: &CpuPlatformSpec,
    accel: Option<&AcceleratorSpec>,
    params: &TraceParams,
) -> Result<Vec<CaseResult>> {
    let mut jobs = Vec::new();
    for &m in models {
        for &level in levels {
            jobs.push((m, level));
        }
    }
    jobs.par_iter()
        .map(|&(m, level)| {
            let spec = builtin_model(m)?;
            run_case(&spec, cpu, accel, level, sla_seconds(m, level)?, params)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub model: String,
    pub sla: SlaLevel,
    pub scheduler: Scheduler,
    pub qps: f64,
    /// QPS over the static baseline's QPS at the low target.
    pub qps_norm: Option<f64>,
    pub p95_s: Option<f64>,
    pub watts: f64,
    pub qps_per_watt: f64,
    pub batch: Option<usize>,
    pub threshold: Option<usize>,
    pub accel_work_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub model: String,
    pub sla: SlaLevel,
    pub p95_s: f64,
    pub qps: f64,
    pub batch: usize,
    pub threshold: Option<usize>,
    pub is_pareto: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub pareto: Vec<ParetoPoint>,
}

impl Report {
    pub fn row(&self, model: &str, sla: SlaLevel, scheduler: Scheduler) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.sla == sla && r.scheduler == scheduler)
    }
}

/// Builds report rows and the Pareto dataset from case results.
pub fn build_report(
    cases: &[CaseResult],
    cpu: &CpuPlatformSpec,
    accel: Option<&AcceleratorSpec>,
) -> Result<Report> {
    if cases.is_empty() {
        return Err(Error::Config("report needs at least one result".into()));
    }
    let mut sorted: Vec<&CaseResult> = cases.iter().collect();
    sorted.sort_by(|a, b| a.model.cmp(&b.model).then(a.level.cmp(&b.level)));

    let anchors: BTreeMap<&str, f64> = sorted
        .iter()
        .filter(|c| c.level == SlaLevel::Low)
        .map(|c| (c.model.as_str(), c.static_baseline.qps))
        .collect();

    let mut report = Report::default();
    for case in &sorted {
        let anchor = anchors.get(case.model.as_str()).copied().filter(|&a| a > 0.0);
        for scheduler in Scheduler::ALL {
            if scheduler == Scheduler::TunedAccel && accel.is_none() {
                continue;
            }
            let watts = match scheduler {
                Scheduler::TunedAccel => power(cpu, accel),
                _ => power(cpu, None),
            };
            let row = match case.config(scheduler).filter(|c| c.qps > 0.0) {
                Some(c) => ReportRow {
                    model: case.model.clone(),
                    sla: case.level,
                    scheduler,
                    qps: c.qps,
                    qps_norm: anchor.map(|a| c.qps / a),
                    p95_s: Some(c.p95),
                    watts,
                    qps_per_watt: c.qps / watts,
                    batch: Some(c.batch_size),
                    threshold: c.offload_threshold,
                    accel_work_fraction: c.accel_work_fraction,
                },
                None => ReportRow {
                    model: case.model.clone(),
                    sla: case.level,
                    scheduler,
                    qps: 0.0,
                    qps_norm: anchor.map(|_| 0.0),
                    p95_s: None,
                    watts,
                    qps_per_watt: 0.0,
                    batch: None,
                    threshold: None,
                    accel_work_fraction: 0.0,
                },
            };
            report.rows.push(row);
        }
        report.pareto.extend(pareto_points(case));
    }
    Ok(report)
}

/// Every feasible configuration the tuner and baseline measured for a case,
/// flagged by membership in the (qps, p95) frontier.
fn pareto_points(case: &CaseResult) -> Vec<ParetoPoint> {
    let mut seen: BTreeMap<(usize, Option<usize>), SweepRow> = BTreeMap::new();
    let mut add = |batch: usize, threshold: Option<usize>, qps: f64, p95: f64| {
        if qps > 0.0 {
            seen.entry((batch, threshold)).or_insert(SweepRow {
                batch_size: batch,
                offload_threshold: threshold,
                sla: case.sla_s,
                qps,
                p95,
                qps_per_watt: 0.0,
                accel_work_fraction: 0.0,
            });
        }
    };
    let s = &case.static_baseline;
    add(s.batch_size, s.offload_threshold, s.qps, s.p95);
    if let Some(t) = &case.tuned {
        for step in &t.best().search_path {
            add(step.batch_size, step.offload_threshold, step.qps, step.p95);
        }
    }
    let rows: Vec<SweepRow> = seen.into_values().collect();
    let frontier = pareto(&rows);
    let mut points: Vec<ParetoPoint> = rows
        .iter()
        .map(|r| ParetoPoint {
            model: case.model.clone(),
            sla: case.level,
            p95_s: r.p95,
            qps: r.qps,
            batch: r.batch_size,
            threshold: r.offload_threshold,
            is_pareto: frontier.contains(r),
        })
        .collect();
    points.sort_by(|a, b| {
        a.p95_s
            .total_cmp(&b.p95_s)
            .then(b.qps.total_cmp(&a.qps))
            .then(a.batch.cmp(&b.batch))
            .then(a.threshold.cmp(&b.threshold))
    });
    points
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn report_csv(report: &Report) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model",
        "sla",
        "scheduler",
        "qps",
        "qps_norm",
        "p95_s",
        "watts",
        "qps_per_watt",
        "batch",
        "threshold",
        "accel_work_fraction",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.model.clone(),
            r.sla.to_string(),
            r.scheduler.as_str().to_string(),
            r.qps.to_string(),
            opt(r.qps_norm),
            opt(r.p95_s),
            r.watts.to_string(),
            r.qps_per_watt.to_string(),
            opt(r.batch),
            opt(r.threshold),
            r.accel_work_fraction.to_string(),
        ])?;
    }
    finish(w)
}

pub fn pareto_csv(report: &Report) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "sla", "p95_s", "qps", "batch", "threshold", "is_pareto"])?;
    for p in &report.pareto {
        w.write_record([
            p.model.clone(),
            p.sla.to_string(),
            p.p95_s.to_string(),
            p.qps.to_string(),
            p.batch.to_string(),
            opt(p.threshold),
            p.is_pareto.to_string(),
        ])?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Writes `report.csv` and `pareto.csv` into `dir`, creating it if needed.
pub fn emit_report(report: &Report, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report_path = dir.join("report.csv");
    let pareto_path = dir.join("pareto.csv");
    std::fs::write(&report_path, report_csv(report)?).map_err(|e| Error::io(&report_path, e))?;
    std::fs::write(&pareto_path, pareto_csv(report)?).map_err(|e| Error::io(&pareto_path, e))?;
    Ok((report_path, pareto_path))
}

/// Trace parameters used by the report and reproduction runs.
pub fn desk_params(queries: usize, base_seed: u64, distribution: SizeDistribution) -> TraceParams {
    TraceParams {
        distribution,
        queries,
        base_seed,
        replicas: 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platform::{default_accelerator, skylake};
    use crate::tune::{Knobs, SearchStep};

    fn cfg(knobs: Knobs, qps: f64, p95: f64, path: Vec<SearchStep>) -> TunedConfig {
        TunedConfig {
            batch_size: knobs.batch_size,
            offload_threshold: knobs.offload_threshold,
            qps,
            qps_per_watt: qps / 125.0,
            p95,
            accel_work_fraction: 0.0,
            watts: 125.0,
            search_path: path,
        }
    }

    fn step(b: usize, t: Option<usize>, qps: f64, p95: f64) -> SearchStep {
        SearchStep {
            phase: crate::tune::Phase::Batch,
            batch_size: b,
            offload_threshold: t,
            qps,
            p95,
        }
    }

    fn case(level: SlaLevel, static_qps: f64, tuned_qps: f64) -> CaseResult {
        let path = vec![step(1, None, 1.0, 0.01), step(2, None, tuned_qps, 0.02), step(4, None, 2.0, 0.03)];
        CaseResult {
            model: "NCF".into(),
            level,
            sla_s: 0.005,
            static_baseline: cfg(Knobs::cpu(25), static_qps, 0.04, vec![]),
            tuned: Some(TuneOutcome {
                cpu_only: cfg(Knobs::cpu(2), tuned_qps, 0.02, path.clone()),
                offload: Some(cfg(
                    Knobs { batch_size: 2, offload_threshold: Some(9) },
                    tuned_qps * 1.5,
                    0.02,
                    path,
                )),
            }),
        }
    }

    #[test]
    fn static_low_anchors_normalization() {
        let cases = [case(SlaLevel::Medium, 12.0, 20.0), case(SlaLevel::Low, 10.0, 15.0)];
        let acc = default_accelerator();
        let r = build_report(&cases, &skylake(), Some(&acc)).unwrap();
        assert_eq!(r.rows.len(), 6);
        let anchor = r.row("NCF", SlaLevel::Low, Scheduler::Static).unwrap();
        assert_eq!(anchor.qps_norm, Some(1.0));
        let tuned = r.row("NCF", SlaLevel::Medium, Scheduler::TunedCpu).unwrap();
        assert_eq!(tuned.qps_norm, Some(2.0));
        assert_eq!(r.row("NCF", SlaLevel::Low, Scheduler::TunedAccel).unwrap().watts, 375.0);
    }

    #[test]
    fn pareto_flags_match_frontier() {
        let r = build_report(&[case(SlaLevel::Low, 1.5, 3.0)], &skylake(), None).unwrap();
        assert_eq!(r.rows.len(), 2);
        let flagged: Vec<(usize, bool)> = r.pareto.iter().map(|p| (p.batch, p.is_pareto)).collect();
        // (qps, p95): b1 (1, .01), b2 (3, .02), b4 (2, .03), static b25 (1.5, .04)
        assert_eq!(flagged, vec![(1, true), (2, true), (4, false), (25, false)]);
    }

    #[test]
    fn csv_headers_and_empty_cells() {
        let mut c = case(SlaLevel::Low, 0.0, 3.0);
        c.tuned = None;
        let r = build_report(&[c], &skylake(), None).unwrap();
        let text = report_csv(&r).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "model,sla,scheduler,qps,qps_norm,p95_s,watts,qps_per_watt,batch,threshold,accel_work_fraction"
        );
        assert_eq!(lines.next().unwrap(), "NCF,low,static,0,,,125,0,,,0");
        assert!(pareto_csv(&r).unwrap().starts_with("model,sla,p95_s,qps,batch,threshold,is_pareto\n"));
    }
}
