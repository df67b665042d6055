//! Two-phase hill climbing over batch size and offload threshold, an
//! exhaustive sweep for comparison, and Pareto extraction.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::platform::{power, AcceleratorSpec, CpuPlatformSpec};
use crate::sim::{max_qps_under_sla, SchedulerConfig, TraceParams, DEFAULT_WARMUP_FRACTION};

/// Relative drop that ends a climb.
pub const DEGRADATION_TOLERANCE: f64 = 0.01;

/// Static production batch size: the largest query split evenly over every
/// core, 25 for 1000-item queries on 40 cores.
pub fn static_batch(cpu: &CpuPlatformSpec, max_size: usize) -> usize {
    max_size.div_ceil(cpu.cores).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Knobs {
    pub batch_size: usize,
    pub offload_threshold: Option<usize>,
}

impl Knobs {
    pub fn cpu(batch_size: usize) -> Self {
        Knobs {
            batch_size,
            offload_threshold: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Evaluation {
    pub qps: f64,
    pub lambda: f64,
    pub p95: f64,
    pub accel_work_fraction: f64,
}

/// Something the climb can measure. Implementations may cache.
pub trait Objective {
    fn evaluate(&mut self, knobs: Knobs) -> Result<Evaluation>;
    /// Watts drawn by a configuration with these knobs.
    fn watts(&self, knobs: Knobs) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Batch,
    Threshold,
    Refine,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SearchStep {
    pub phase: Phase,
    pub batch_size: usize,
    pub offload_threshold: Option<usize>,
    pub qps: f64,
    pub p95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TunedConfig {
    pub batch_size: usize,
    pub offload_threshold: Option<usize>,
    pub qps: f64,
    pub qps_per_watt: f64,
    pub p95: f64,
    pub accel_work_fraction: f64,
    pub watts: f64,
    pub search_path: Vec<SearchStep>,
}

impl TunedConfig {
    pub fn knobs(&self) -> Knobs {
        Knobs {
            batch_size: self.batch_size,
            offload_threshold: self.offload_threshold,
        }
    }

    fn from_eval(knobs: Knobs, e: Evaluation, watts: f64, search_path: Vec<SearchStep>) -> Self {
        TunedConfig {
            batch_size: knobs.batch_size,
            offload_threshold: knobs.offload_threshold,
            qps: e.qps,
            qps_per_watt: e.qps / watts,
            p95: e.p95,
            accel_work_fraction: e.accel_work_fraction,
            watts,
            search_path,
        }
    }
}

/// Both phases of one climb: the batch-only result and, when an accelerator
/// is configured, the result after threshold tuning. With an accelerator the
/// batch-only result may have zero QPS when only offloading meets the target.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TuneOutcome {
    pub cpu_only: TunedConfig,
    pub offload: Option<TunedConfig>,
}

impl TuneOutcome {
    pub fn best(&self) -> &TunedConfig {
        self.offload.as_ref().unwrap_or(&self.cpu_only)
    }
}

/// `{1, 2, 4, ...}` up to and including `max`; `max` is appended when it is
/// not itself a power of two.
pub fn pow2_ladder(max: usize) -> Vec<usize> {
    let mut v: Vec<usize> = std::iter::successors(Some(1usize), |x| x.checked_mul(2))
        .take_while(|&x| x <= max)
        .collect();
    if v.last() != Some(&max) {
        v.push(max);
    }
    v
}

pub fn batch_ladder() -> Vec<usize> {
    pow2_ladder(1024)
}

/// The power-of-two ladder with `extra` slotted in, so the climb passes
/// through the static production batch.
pub fn batch_ladder_with(extra: usize) -> Vec<usize> {
    let mut v = batch_ladder();
    if let Err(i) = v.binary_search(&extra) {
        v.insert(i, extra);
    }
    v
}

/// Ascending climb; stops at the first value whose score falls more than
/// the tolerance below the running best. Ties keep the earlier value.
pub fn climb<F>(ladder: &[usize], mut score: F) -> Result<(usize, f64)>
where
    F: FnMut(usize) -> Result<f64>,
{
    let mut best: Option<(usize, f64)> = None;
    for &x in ladder {
        let q = score(x)?;
        match best {
            None => best = Some((x, q)),
            Some((_, bq)) if q > bq => best = Some((x, q)),
            Some((_, bq)) if q < bq * (1.0 - DEGRADATION_TOLERANCE) => break,
            _ => {}
        }
    }
    best.ok_or_else(|| Error::Config("empty ladder".into()))
}

/// Thresholds strictly inside `(coarse/2, 2*coarse)` at a stride of
/// `max(1, coarse/8)`, capped at `max_size`.
pub fn refine_candidates(coarse: usize, max_size: usize) -> Vec<usize> {
    let step = (coarse / 8).max(1);
    let lo = coarse / 2;
    let hi = coarse.saturating_mul(2).min(max_size.saturating_add(1));
    (1..)
        .map(|k| lo + k * step)
        .take_while(|&t| t < hi)
        .filter(|&t| t >= 1)
        .collect()
}

pub fn hill_climb(obj: &mut dyn Objective, has_accel: bool, max_size: usize) -> Result<TuneOutcome> {
    hill_climb_with(obj, &batch_ladder(), has_accel, max_size)
}

pub fn hill_climb_with(
    obj: &mut dyn Objective,
    batches: &[usize],
    has_accel: bool,
    max_size: usize,
) -> Result<TuneOutcome> {
    let mut path = Vec::new();
    let mut evals: HashMap<Knobs, Evaluation> = HashMap::new();

    let mut measure = |obj: &mut dyn Objective, knobs: Knobs, phase: Phase, path: &mut Vec<SearchStep>| -> Result<f64> {
        let e = match evals.get(&knobs) {
            Some(e) => *e,
            None => {
                let e = obj.evaluate(knobs)?;
                evals.insert(knobs, e);
                e
            }
        };
        path.push(SearchStep {
            phase,
            batch_size: knobs.batch_size,
            offload_threshold: knobs.offload_threshold,
            qps: e.qps,
            p95: e.p95,
        });
        Ok(e.qps)
    };

    let (b_star, q_star) = climb(batches, |b| measure(obj, Knobs::cpu(b), Phase::Batch, &mut path))?;
    if q_star <= 0.0 && !has_accel {
        return Err(Error::InfeasibleSla { sla_s: f64::NAN });
    }
    let cpu_knobs = Knobs::cpu(b_star);
    let cpu_eval = obj.evaluate(cpu_knobs)?;
    let cpu_only = TunedConfig::from_eval(cpu_knobs, cpu_eval, obj.watts(cpu_knobs), path.clone());
    if !has_accel {
        return Ok(TuneOutcome {
            cpu_only,
            offload: None,
        });
    }

    let with_t = |t: usize| Knobs {
        batch_size: b_star,
        offload_threshold: Some(t),
    };
    let (t_coarse, q_coarse) = climb(&pow2_ladder(max_size), |t| {
        measure(obj, with_t(t), Phase::Threshold, &mut path)
    })?;
    let (mut t_best, mut q_best) = (t_coarse, q_coarse);
    for t in refine_candidates(t_coarse, max_size) {
        let q = measure(obj, with_t(t), Phase::Refine, &mut path)?;
        if q > q_best || (q == q_best && t > t_best) {
            t_best = t;
            q_best = q;
        }
    }
    if q_best <= 0.0 {
        return Err(Error::InfeasibleSla { sla_s: f64::NAN });
    }
    let knobs = with_t(t_best);
    let eval = obj.evaluate(knobs)?;
    Ok(TuneOutcome {
        cpu_only,
        offload: Some(TunedConfig::from_eval(knobs, eval, obj.watts(knobs), path)),
    })
}

/// Measures knobs by simulation against one latency target.
pub struct SimObjective {
    pub base: SchedulerConfig,
    pub sla: f64,
    pub params: TraceParams,
    cache: HashMap<Knobs, Evaluation>,
}

impl SimObjective {
    pub fn new(
        model: ModelSpec,
        cpu: CpuPlatformSpec,
        accel: Option<AcceleratorSpec>,
        sla: f64,
        params: TraceParams,
    ) -> Self {
        SimObjective {
            base: SchedulerConfig {
                batch_size: 1,
                offload_threshold: None,
                model,
                cpu,
                accel,
                sla_p95: sla,
                warmup_fraction: DEFAULT_WARMUP_FRACTION,
            },
            sla,
            params,
            cache: HashMap::new(),
        }
    }

    pub fn config(&self, knobs: Knobs) -> SchedulerConfig {
        let mut c = self.base.clone();
        c.batch_size = knobs.batch_size;
        c.offload_threshold = knobs.offload_threshold;
        c
    }
}

impl Objective for SimObjective {
    fn evaluate(&mut self, knobs: Knobs) -> Result<Evaluation> {
        if let Some(e) = self.cache.get(&knobs) {
            return Ok(*e);
        }
        let r = max_qps_under_sla(&self.config(knobs), self.sla, &self.params)?;
        let e = Evaluation {
            qps: r.qps,
            lambda: r.lambda,
            p95: r.p95,
            accel_work_fraction: r.accel_work_fraction,
        };
        self.cache.insert(knobs, e);
        Ok(e)
    }

    fn watts(&self, knobs: Knobs) -> f64 {
        let accel = knobs.offload_threshold.and(self.base.accel.as_ref());
        power(&self.base.cpu, accel)
    }
}

/// Tunes batch size, then the offload threshold when `accel` is given.
pub fn tune(
    model: &ModelSpec,
    cpu: &CpuPlatformSpec,
    accel: Option<&AcceleratorSpec>,
    sla: f64,
    params: &TraceParams,
) -> Result<TuneOutcome> {
    if !(sla > 0.0) {
        return Err(Error::Config(format!("sla must be positive, got {sla}")));
    }
    let max_size = params.distribution.max_size;
    let ladder = batch_ladder_with(static_batch(cpu, max_size));
    let mut obj = SimObjective::new(model.clone(), cpu.clone(), accel.cloned(), sla, params.clone());
    hill_climb_with(&mut obj, &ladder, accel.is_some(), max_size).map_err(|e| match e {
        Error::InfeasibleSla { .. } => Error::InfeasibleSla { sla_s: sla },
        e => e,
    })
}

/// The fixed production configuration: [`static_batch`], no offload.
pub fn static_baseline(
    model: &ModelSpec,
    cpu: &CpuPlatformSpec,
    sla: f64,
    params: &TraceParams,
) -> Result<TunedConfig> {
    let mut obj = SimObjective::new(model.clone(), cpu.clone(), None, sla, params.clone());
    let knobs = Knobs::cpu(static_batch(cpu, params.distribution.max_size));
    let e = obj.evaluate(knobs)?;
    Ok(TunedConfig::from_eval(knobs, e, obj.watts(knobs), Vec::new()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub batch_size: usize,
    pub offload_threshold: Option<usize>,
    pub sla: f64,
    pub qps: f64,
    pub p95: f64,
    pub qps_per_watt: f64,
    pub accel_work_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Row with the highest QPS; ties go to the earlier row.
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .fold(None, |acc: Option<&SweepRow>, r| match acc {
                Some(a) if a.qps >= r.qps => Some(a),
                _ => Some(r),
            })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "batch",
            "threshold",
            "sla_s",
            "qps",
            "p95_s",
            "qps_per_watt",
            "accel_work_fraction",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.batch_size.to_string(),
                r.offload_threshold.map_or(String::new(), |t| t.to_string()),
                r.sla.to_string(),
                r.qps.to_string(),
                r.p95.to_string(),
                r.qps_per_watt.to_string(),
                r.accel_work_fraction.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Every point of `slas x batches x thresholds`, evaluated independently.
pub fn sweep(
    model: &ModelSpec,
    cpu: &CpuPlatformSpec,
    accel: Option<&AcceleratorSpec>,
    slas: &[f64],
    batches: &[usize],
    thresholds: &[Option<usize>],
    params: &TraceParams,
) -> Result<SweepTable> {
    if slas.is_empty() || batches.is_empty() || thresholds.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    if accel.is_none() && thresholds.iter().any(Option::is_some) {
        return Err(Error::Config("threshold grid needs an accelerator".into()));
    }
    let mut points = Vec::new();
    for &sla in slas {
        for &b in batches {
            for &t in thresholds {
                points.push((sla, Knobs { batch_size: b, offload_threshold: t }));
            }
        }
    }
    let rows = points
        .par_iter()
        .map(|&(sla, knobs)| {
            let mut obj = SimObjective::new(model.clone(), cpu.clone(), accel.cloned(), sla, params.clone());
            let e = obj.evaluate(knobs)?;
            Ok(SweepRow {
                batch_size: knobs.batch_size,
                offload_threshold: knobs.offload_threshold,
                sla,
                qps: e.qps,
                p95: e.p95,
                qps_per_watt: e.qps / obj.watts(knobs),
                accel_work_fraction: e.accel_work_fraction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { rows })
}

/// Rows not dominated in (higher qps, lower p95), sorted by p95 then qps.
pub fn pareto(rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut sorted: Vec<SweepRow> = rows.to_vec();
    // p95 ascending, qps descending: a row is on the frontier iff its qps
    // beats every row before it, or matches the previous frontier row exactly.
    sorted.sort_by(|a, b| a.p95.total_cmp(&b.p95).then(b.qps.total_cmp(&a.qps)));
    let mut out: Vec<SweepRow> = Vec::new();
    let mut best_qps = f64::NEG_INFINITY;
    for r in sorted {
        match out.last() {
            Some(last) if last.p95 == r.p95 && last.qps == r.qps => out.push(r),
            _ if r.qps > best_qps => {
                best_qps = r.qps;
                out.push(r);
            }
            _ => {}
        }
    }
    out
}

/// `true` when `a` is at least as good as `b` on both axes and better on one.
pub fn dominates(a: &SweepRow, b: &SweepRow) -> bool {
    a.qps >= b.qps && a.p95 <= b.p95 && (a.qps > b.qps || a.p95 < b.p95)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Synthetic<F: Fn(Knobs) -> f64> {
        f: F,
        calls: Vec<Knobs>,
    }

    impl<F: Fn(Knobs) -> f64> Objective for Synthetic<F> {
        fn evaluate(&mut self, knobs: Knobs) -> Result<Evaluation> {
            self.calls.push(knobs);
            Ok(Evaluation {
                qps: (self.f)(knobs),
                ..Evaluation::default()
            })
        }
        fn watts(&self, k: Knobs) -> f64 {
            if k.offload_threshold.is_some() {
                375.0
            } else {
                125.0
            }
        }
    }

    fn peak_at(peak: f64) -> impl Fn(Knobs) -> f64 {
        move |k| 100.0 - 10.0 * ((k.batch_size as f64).log2() - peak.log2()).powi(2)
    }

    #[test]
    fn ladders() {
        assert_eq!(pow2_ladder(1000).last(), Some(&1000));
        assert_eq!(pow2_ladder(1000)[9], 512);
        assert_eq!(pow2_ladder(8), vec![1, 2, 4, 8]);
        assert_eq!(batch_ladder().len(), 11);
        assert_eq!(batch_ladder_with(25)[4..7], [16, 25, 32]);
        assert_eq!(batch_ladder_with(64), batch_ladder());
        assert_eq!(static_batch(&crate::platform::skylake(), 1000), 25);
        assert_eq!(static_batch(&crate::platform::broadwell(), 1000), 36);
    }

    #[test]
    fn unimodal_peak_found_and_path_stops_after_it() {
        let mut obj = Synthetic { f: peak_at(128.0), calls: vec![] };
        let out = hill_climb(&mut obj, false, 1000).unwrap();
        assert_eq!(out.cpu_only.batch_size, 128);
        let last = out.cpu_only.search_path.last().unwrap();
        assert_eq!(last.batch_size, 256);
        assert!(out.offload.is_none());
    }

    #[test]
    fn small_dips_do_not_stop_the_climb() {
        let f = |k: Knobs| match k.batch_size {
            4 => 101.5,
            b if b <= 64 => b as f64 + 100.0,
            _ => 0.0,
        };
        let mut obj = Synthetic { f, calls: vec![] };
        assert_eq!(hill_climb(&mut obj, false, 1000).unwrap().cpu_only.batch_size, 64);
    }

    #[test]
    fn ties_prefer_smaller_batch() {
        let mut obj = Synthetic { f: |_: Knobs| 5.0, calls: vec![] };
        assert_eq!(hill_climb(&mut obj, false, 1000).unwrap().cpu_only.batch_size, 1);
    }

    #[test]
    fn refinement_reaches_non_powers_of_two() {
        let f = |k: Knobs| match k.offload_threshold {
            None => 10.0 - (k.batch_size as f64 - 16.0).abs(),
            Some(t) => 100.0 - (t as f64 - 324.0).abs(),
        };
        let mut obj = Synthetic { f, calls: vec![] };
        let out = hill_climb(&mut obj, true, 1000).unwrap();
        let tuned = out.offload.unwrap();
        assert_eq!(tuned.batch_size, 16);
        assert_eq!(tuned.offload_threshold, Some(320));
        assert!(refine_candidates(256, 1000).contains(&320));
        assert!(tuned.search_path.iter().any(|s| s.phase == Phase::Refine));
    }

    #[test]
    fn refinement_ties_prefer_larger_threshold() {
        let f = |k: Knobs| match k.offload_threshold {
            Some(t) if t >= 8 => 7.0,
            Some(t) => t as f64 * 0.5,
            None => 1.0,
        };
        let mut obj = Synthetic { f, calls: vec![] };
        let out = hill_climb_with(&mut obj, &[1], true, 1000).unwrap();
        assert_eq!(out.offload.unwrap().offload_threshold, Some(15));
    }

    #[test]
    fn refine_window() {
        assert_eq!(refine_candidates(1, 1000), vec![1]);
        assert_eq!(refine_candidates(8, 1000), vec![5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15]);
        assert!(refine_candidates(1000, 1000).iter().all(|&t| t > 500 && t <= 1000));
    }

    #[test]
    fn all_zero_is_infeasible() {
        let mut obj = Synthetic { f: |_: Knobs| 0.0, calls: vec![] };
        assert!(matches!(hill_climb(&mut obj, false, 1000), Err(Error::InfeasibleSla { .. })));
        let mut obj = Synthetic { f: |_: Knobs| 0.0, calls: vec![] };
        assert!(matches!(hill_climb(&mut obj, true, 1000), Err(Error::InfeasibleSla { .. })));
    }

    #[test]
    fn offload_can_rescue_an_infeasible_cpu() {
        let f = |k: Knobs| match k.offload_threshold {
            Some(t) if t <= 16 => 50.0,
            _ => 0.0,
        };
        let mut obj = Synthetic { f, calls: vec![] };
        let out = hill_climb(&mut obj, true, 1000).unwrap();
        assert_eq!(out.cpu_only.qps, 0.0);
        assert_eq!(out.best().qps, 50.0);
        assert_eq!(out.best().batch_size, 1);
    }

    fn row(qps: f64, p95: f64) -> SweepRow {
        SweepRow {
            batch_size: 1,
            offload_threshold: None,
            sla: 1.0,
            qps,
            p95,
            qps_per_watt: 0.0,
            accel_work_fraction: 0.0,
        }
    }

    #[test]
    fn pareto_small_cases() {
        assert_eq!(pareto(&[row(1.0, 1.0)]), vec![row(1.0, 1.0)]);
        assert_eq!(pareto(&[row(1.0, 2.0), row(2.0, 1.0)]), vec![row(2.0, 1.0)]);
        let f = pareto(&[row(1.0, 1.0), row(3.0, 3.0), row(2.0, 2.0), row(2.0, 2.5)]);
        assert_eq!(f, vec![row(1.0, 1.0), row(2.0, 2.0), row(3.0, 3.0)]);
    }
}
