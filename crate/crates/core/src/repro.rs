//! The desk-scale reproduction suite behind `recsim repro`.
//!
//! [`run_repro`] tunes every zoo model at the three targets on the default
//! Skylake platform (with and without the default accelerator), writes the
//! report datasets, and checks the resulting trends along with the exact
//! queueing and workload properties.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::DEFAULT_SEED;
use crate::error::{Error, Result};
use crate::loadgen::{gen_trace, trace_stats, SizeDistribution};
use crate::model::{builtin_model, ModelSpec, ZOO};
use crate::platform::{broadwell, cpu_service_time, default_accelerator, skylake, CpuPlatformSpec};
use crate::report::{build_report, pareto_csv, report_csv, run_cases, CaseResult, Report, Scheduler};
use crate::sim::{light_load_p95, simulate, summarize_latencies, SchedulerConfig, TraceParams};
use crate::targets::{sla_seconds, SlaLevel};
use crate::tune::{
    batch_ladder_with, pow2_ladder, static_batch, sweep, tune, Knobs, Objective, SimObjective,
};

/// Queries per replica for the tuned report.
pub const DESK_QUERIES: usize = 20_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ReproOptions {
    pub queries: usize,
    pub base_seed: u64,
    /// Randomized configurations compared against the exhaustive sweep.
    pub sweep_configs: usize,
}

impl Default for ReproOptions {
    fn default() -> Self {
        ReproOptions {
            queries: DESK_QUERIES,
            base_seed: DEFAULT_SEED,
            sweep_configs: 20,
        }
    }
}

impl ReproOptions {
    pub fn params(&self, distribution: SizeDistribution) -> TraceParams {
        TraceParams {
            distribution,
            queries: self.queries,
            base_seed: self.base_seed,
            replicas: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(id: u32, name: &'static str, passed: bool, detail: String) -> Self {
        Check { id, name, passed, detail }
    }

    pub fn line(&self) -> String {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        format!("[{mark}] {:>2} {}: {}", self.id, self.name, self.detail)
    }
}

/// The tuned report and its CSV renderings.
#[derive(Clone, Debug)]
pub struct ReproReport {
    pub cases: Vec<CaseResult>,
    pub report: Report,
    pub report_csv: String,
    pub pareto_csv: String,
}

#[derive(Clone, Debug)]
pub struct ReproRun {
    pub report: ReproReport,
    pub checks: Vec<Check>,
}

impl ReproRun {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn repro_report(opts: &ReproOptions) -> Result<ReproReport> {
    let cpu = skylake();
    let accel = default_accelerator();
    let params = opts.params(SizeDistribution::production());
    let cases = run_cases(&ZOO, &SlaLevel::ALL, &cpu, Some(&accel), &params)?;
    let report = build_report(&cases, &cpu, Some(&accel))?;
    Ok(ReproReport {
        report_csv: report_csv(&report)?,
        pareto_csv: pareto_csv(&report)?,
        report,
        cases,
    })
}

pub fn run_repro(opts: &ReproOptions) -> Result<ReproRun> {
    let rep = repro_report(opts)?;
    let mut checks = vec![
        check_md1()?,
        check_percentiles(),
        check_arrivals()?,
        check_heavy_tail()?,
        check_hill_climb(opts)?,
        check_sla_trend(&rep.cases, opts)?,
        check_model_trend(&rep.cases),
        check_platform_trend(opts)?,
        check_dominance(&rep.cases),
        check_offload(&rep.cases, opts)?,
        check_power(&rep.cases),
        check_determinism(&rep, opts)?,
        check_distribution_sensitivity(&rep.cases, opts)?,
    ];
    checks.sort_by_key(|c| c.id);
    Ok(ReproRun { report: rep, checks })
}

fn case<'a>(cases: &'a [CaseResult], model: &str, level: SlaLevel) -> Result<&'a CaseResult> {
    cases
        .iter()
        .find(|c| c.model == model && c.level == level)
        .ok_or_else(|| Error::Config(format!("no result for {model} at {level}")))
}

fn tuned_batch(c: &CaseResult) -> Option<usize> {
    c.config(Scheduler::TunedCpu).map(|t| t.batch_size)
}

fn fmt_batch(b: Option<usize>) -> String {
    b.map_or("-".into(), |b| b.to_string())
}

/// One core, no contention, one-item queries: an M/D/1 queue.
pub fn md1_config() -> SchedulerConfig {
    let cpu = CpuPlatformSpec {
        name: "md1".into(),
        cores: 1,
        contention_coeff: 0.0,
        ..skylake()
    };
    SchedulerConfig::cpu_only(builtin_model("DLRM-RMC1").expect("zoo"), cpu, 1, f64::INFINITY)
}

fn check_md1() -> Result<Check> {
    let cfg = md1_config();
    let s = cpu_service_time(&cfg.model, 1, 1, &cfg.cpu).total;
    let rho = 0.5;
    let trace = gen_trace(1, rho / s, &SizeDistribution::fixed(1), 100_000)?;
    let res = simulate(&trace, &cfg)?;
    let wait = res.queries.iter().map(|q| q.latency - s).sum::<f64>() / res.queries.len() as f64;
    let expected = rho * s / (2.0 * (1.0 - rho));
    let err = (wait - expected).abs() / expected;
    Ok(Check::new(
        1,
        "M/D/1 mean wait",
        err <= 0.05,
        format!("simulated {wait:.3e}s, closed form {expected:.3e}s ({:.2}% off)", err * 100.0),
    ))
}

fn check_percentiles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..200);
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let got = summarize_latencies(&xs).expect("non-empty");
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = |p: f64| sorted[((p * n as f64).ceil() as usize).max(1) - 1];
        if got.p50 != rank(0.5) || got.p95 != rank(0.95) || got.p99 != rank(0.99) {
            mismatches += 1;
        }
    }
    Check::new(
        2,
        "percentile exactness",
        mismatches == 0,
        format!("{mismatches} of 10000 sets differ from the order statistic"),
    )
}

fn check_arrivals() -> Result<Check> {
    let lambda = 250.0;
    let st = trace_stats(&gen_trace(3, lambda, &SizeDistribution::production(), 1_000_000)?);
    let mean_err = (st.mean_gap * lambda - 1.0).abs();
    let var_err = (st.gap_variance * lambda * lambda - 1.0).abs();
    Ok(Check::new(
        3,
        "Poisson arrivals",
        mean_err <= 0.01 && var_err <= 0.03,
        format!(
            "gap mean {:.3}% off, variance {:.3}% off",
            mean_err * 100.0,
            var_err * 100.0
        ),
    ))
}

fn check_heavy_tail() -> Result<Check> {
    let prod = SizeDistribution::production();
    let ln = prod.matched_lognormal().expect("production has a body");
    let share = |d: &SizeDistribution| -> Result<f64> {
        Ok(trace_stats(&gen_trace(4, 100.0, d, 200_000)?).top_quartile_work_share)
    };
    let (p, l) = (share(&prod)?, share(&ln)?);
    Ok(Check::new(
        4,
        "heavy-tail mass",
        (0.45..=0.55).contains(&p) && p > l,
        format!("top-quartile share {p:.3} (matched lognormal {l:.3})"),
    ))
}

/// Randomized small configurations for the tuner-vs-sweep comparison.
pub fn random_configs(seed: u64, count: usize) -> Vec<(ModelSpec, CpuPlatformSpec, bool, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let name = *ZOO.choose(&mut rng).expect("zoo");
            let cpu = if rng.random_bool(0.5) { skylake() } else { broadwell() };
            let level = *SlaLevel::ALL.choose(&mut rng).expect("levels");
            let sla = sla_seconds(name, level).expect("zoo target");
            (builtin_model(name).expect("zoo"), cpu, rng.random_bool(0.5), sla)
        })
        .collect()
}

fn check_hill_climb(opts: &ReproOptions) -> Result<Check> {
    let params = TraceParams {
        distribution: SizeDistribution::production(),
        queries: 2_000,
        base_seed: opts.base_seed,
        replicas: 1,
    };
    let accel = default_accelerator();
    let max = params.distribution.max_size;
    let mut worst = 1.0f64;
    let mut misses = Vec::new();
    for (model, cpu, with_accel, sla) in random_configs(opts.base_seed, opts.sweep_configs) {
        let acc = with_accel.then_some(&accel);
        let batches = batch_ladder_with(static_batch(&cpu, max));
        let mut thresholds = vec![None];
        if with_accel {
            thresholds.extend(pow2_ladder(max).into_iter().map(Some));
        }
        let best = sweep(&model, &cpu, acc, &[sla], &batches, &thresholds, &params)?
            .best()
            .map_or(0.0, |r| r.qps);
        let tuned = match tune(&model, &cpu, acc, sla, &params) {
            Ok(t) => t.best().qps,
            Err(Error::InfeasibleSla { .. }) => 0.0,
            Err(e) => return Err(e),
        };
        let ratio = if best > 0.0 { tuned / best } else { 1.0 };
        worst = worst.min(ratio);
        if ratio < 0.98 {
            misses.push(format!("{}/{}", model.name, cpu.name));
        }
    }
    Ok(Check::new(
        5,
        "hill climb vs sweep",
        misses.is_empty(),
        format!(
            "{} configs, worst tuned/optimum {worst:.4}{}",
            opts.sweep_configs,
            if misses.is_empty() { String::new() } else { format!(", misses {}", misses.join(" ")) }
        ),
    ))
}

/// Tuned CPU batch size for RMC3 at an explicit target.
fn rmc3_batch_at(cpu: &CpuPlatformSpec, sla: f64, opts: &ReproOptions) -> Result<Option<usize>> {
    let params = opts.params(SizeDistribution::production());
    match tune(&builtin_model("DLRM-RMC3")?, cpu, None, sla, &params) {
        Ok(t) => Ok(Some(t.cpu_only.batch_size)),
        Err(Error::InfeasibleSla { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn check_sla_trend(cases: &[CaseResult], opts: &ReproOptions) -> Result<Check> {
    let b66 = rmc3_batch_at(&skylake(), 0.066, opts)?;
    let b100 = tuned_batch(case(cases, "DLRM-RMC3", SlaLevel::Medium)?);
    let mut ok = matches!((b66, b100), (Some(a), Some(b)) if a < b);
    let mut detail = format!("RMC3 {} at 66ms, {} at 100ms", fmt_batch(b66), fmt_batch(b100));
    for m in ZOO {
        let bs: Vec<usize> = SlaLevel::ALL
            .iter()
            .map(|&l| case(cases, m, l).map(tuned_batch))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        if bs.windows(2).any(|w| w[1] < w[0]) {
            ok = false;
            detail.push_str(&format!("; {m} decreases {bs:?}"));
        }
    }
    Ok(Check::new(6, "batch grows with the target", ok, detail))
}

fn check_model_trend(cases: &[CaseResult]) -> Check {
    let at_high = |m: &str| case(cases, m, SlaLevel::High).ok().and_then(tuned_batch);
    let (r1, r3, din, wnd) = (
        at_high("DLRM-RMC1"),
        at_high("DLRM-RMC3"),
        at_high("DIN"),
        at_high("WND"),
    );
    let gt = |a: Option<usize>, b: Option<usize>| matches!((a, b), (Some(a), Some(b)) if a > b);
    Check::new(
        7,
        "batch ordering across models",
        gt(r1, r3) && gt(din, wnd),
        format!(
            "RMC1 {} vs RMC3 {}, DIN {} vs WND {}",
            fmt_batch(r1),
            fmt_batch(r3),
            fmt_batch(din),
            fmt_batch(wnd)
        ),
    )
}

fn check_platform_trend(opts: &ReproOptions) -> Result<Check> {
    let sla = sla_seconds("DLRM-RMC3", SlaLevel::Medium)?;
    let bdw = rmc3_batch_at(&broadwell(), sla, opts)?;
    let sky = rmc3_batch_at(&skylake(), sla, opts)?;
    Ok(Check::new(
        8,
        "batch across platforms",
        matches!((bdw, sky), (Some(b), Some(s)) if b >= s),
        format!("RMC3 at medium: broadwell {}, skylake {}", fmt_batch(bdw), fmt_batch(sky)),
    ))
}

/// Geometric-mean tuned/static QPS at `level` over models whose static
/// configuration is feasible there, plus the models left out.
pub fn geo_mean_improvement(cases: &[CaseResult], level: SlaLevel) -> (f64, Vec<String>) {
    let mut logs = Vec::new();
    let mut skipped = Vec::new();
    for c in cases.iter().filter(|c| c.level == level) {
        let base = c.qps(Scheduler::Static);
        if base > 0.0 {
            logs.push((c.qps(Scheduler::TunedCpu) / base).ln());
        } else {
            skipped.push(c.model.clone());
        }
    }
    skipped.sort();
    let g = if logs.is_empty() { f64::NAN } else { (logs.iter().sum::<f64>() / logs.len() as f64).exp() };
    (g, skipped)
}

fn check_dominance(cases: &[CaseResult]) -> Check {
    let mut bad = Vec::new();
    for c in cases {
        let (s, t, a) = (
            c.qps(Scheduler::Static),
            c.qps(Scheduler::TunedCpu),
            c.qps(Scheduler::TunedAccel),
        );
        if t < s {
            bad.push(format!("{}@{} cpu<static", c.model, c.level));
        }
        if a < t {
            bad.push(format!("{}@{} accel<cpu", c.model, c.level));
        }
    }
    let (g, skipped) = geo_mean_improvement(cases, SlaLevel::Medium);
    let mut detail = format!("geo-mean {g:.3}x at medium");
    if !skipped.is_empty() {
        detail.push_str(&format!(" (static infeasible: {})", skipped.join(" ")));
    }
    if !bad.is_empty() {
        detail.push_str(&format!("; {}", bad.join(" ")));
    }
    Check::new(9, "tuned beats static", bad.is_empty() && g >= 1.5, detail)
}

/// Lowest p95 reachable at light load over the batch ladder, CPU-only and
/// with any power-of-two threshold.
pub fn latency_floors(model: &ModelSpec, params: &TraceParams) -> Result<(f64, f64)> {
    let cpu = skylake();
    let accel = default_accelerator();
    let max = params.distribution.max_size;
    let (mut cpu_floor, mut accel_floor) = (f64::INFINITY, f64::INFINITY);
    for b in batch_ladder_with(static_batch(&cpu, max)) {
        let mut cfg = SchedulerConfig::cpu_only(model.clone(), cpu.clone(), b, f64::INFINITY);
        cpu_floor = cpu_floor.min(light_load_p95(&cfg, params)?);
        cfg.accel = Some(accel.clone());
        for t in pow2_ladder(max) {
            cfg.offload_threshold = Some(t);
            accel_floor = accel_floor.min(light_load_p95(&cfg, params)?);
        }
    }
    Ok((cpu_floor, accel_floor))
}

fn check_offload(cases: &[CaseResult], opts: &ReproOptions) -> Result<Check> {
    let fr: Vec<f64> = SlaLevel::ALL
        .iter()
        .map(|&l| {
            case(cases, "DLRM-RMC1", l)
                .map(|c| c.config(Scheduler::TunedAccel).map_or(f64::NAN, |t| t.accel_work_fraction))
        })
        .collect::<Result<_>>()?;
    let monotone = fr.iter().all(|f| f.is_finite()) && fr.windows(2).all(|w| w[1] <= w[0]);
    let params = TraceParams {
        queries: 2_000,
        replicas: 1,
        ..opts.params(SizeDistribution::production())
    };
    let (cpu_floor, accel_floor) = latency_floors(&builtin_model("DLRM-RMC1")?, &params)?;
    Ok(Check::new(
        10,
        "offload fraction and latency floor",
        monotone && accel_floor < cpu_floor,
        format!(
            "RMC1 offload {:.3}/{:.3}/{:.3}; floor {:.1}ms with accelerator vs {:.1}ms CPU-only",
            fr[0],
            fr[1],
            fr[2],
            accel_floor * 1e3,
            cpu_floor * 1e3
        ),
    ))
}

fn check_power(cases: &[CaseResult]) -> Check {
    let c = case(cases, "DLRM-RMC1", SlaLevel::High).ok();
    let eff = |s| c.and_then(|c| c.config(s)).map_or(0.0, |t| t.qps_per_watt);
    let (cpu, acc) = (eff(Scheduler::TunedCpu), eff(Scheduler::TunedAccel));
    Check::new(
        11,
        "power efficiency",
        cpu > acc,
        format!("RMC1 at high: {cpu:.3} QPS/W CPU-only, {acc:.3} QPS/W with accelerator"),
    )
}

fn check_determinism(rep: &ReproReport, opts: &ReproOptions) -> Result<Check> {
    let cpu = skylake();
    let accel = default_accelerator();
    let params = opts.params(SizeDistribution::production());
    let again = run_cases(&["DLRM-RMC1"], &SlaLevel::ALL, &cpu, Some(&accel), &params)?;
    let csv = report_csv(&build_report(&again, &cpu, Some(&accel))?)?;
    let ours: Vec<&str> = rep
        .report_csv
        .lines()
        .filter(|l| l.starts_with("model,") || l.starts_with("DLRM-RMC1,"))
        .collect();
    let same = csv.lines().eq(ours.iter().copied());
    Ok(Check::new(
        12,
        "deterministic report",
        same,
        format!("re-running RMC1 {} the report rows", if same { "reproduces" } else { "changes" }),
    ))
}

fn check_distribution_sensitivity(cases: &[CaseResult], opts: &ReproOptions) -> Result<Check> {
    let model = builtin_model("DLRM-RMC1")?;
    let cpu = skylake();
    let prod = SizeDistribution::production();
    let ln = prod.matched_lognormal().expect("production has a body");
    let mut ok = true;
    let mut parts = Vec::new();
    for level in SlaLevel::ALL {
        let sla = sla_seconds(&model.name, level)?;
        let native = case(cases, &model.name, level)?.qps(Scheduler::TunedCpu);
        let b_ln = match tune(&model, &cpu, None, sla, &opts.params(ln.clone())) {
            Ok(t) => t.cpu_only.batch_size,
            Err(Error::InfeasibleSla { .. }) => {
                ok = false;
                parts.push(format!("{level}: infeasible on lognormal"));
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut obj = SimObjective::new(model.clone(), cpu.clone(), None, sla, opts.params(prod.clone()));
        let replayed = obj.evaluate(Knobs::cpu(b_ln))?.qps;
        ok &= replayed < native;
        parts.push(format!("{level}: B={b_ln} keeps {:.3} of native", replayed / native));
    }
    Ok(Check::new(13, "distribution sensitivity", ok, parts.join(", ")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn md1_and_percentile_checks_pass() {
        assert!(check_md1().unwrap().passed);
        assert!(check_percentiles().passed);
    }

    #[test]
    fn random_configs_are_seeded() {
        let a = random_configs(5, 6);
        let b = random_configs(5, 6);
        assert_eq!(a, b);
        assert_ne!(a, random_configs(6, 6));
    }

    #[test]
    fn check_lines_render() {
        let c = Check::new(3, "x", false, "y".into());
        assert_eq!(c.line(), "[FAIL]  3 x: y");
    }
}
