//! Static and tuned schedulers for two models, written as report.csv and
//! pareto.csv into the directory given (default: a temp dir).

use recsim::platform::{default_accelerator, skylake};
use recsim::report::{build_report, emit_report, run_cases};
use recsim::sim::TraceParams;
use recsim::targets::SlaLevel;

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("recsim-report"));
    std::fs::create_dir_all(&dir).unwrap();
    let cpu = skylake();
    let accel = default_accelerator();
    let params = TraceParams::production(5_000, 7);
    let cases = run_cases(&["DLRM-RMC1", "NCF"], &SlaLevel::ALL, &cpu, Some(&accel), &params).unwrap();
    let report = build_report(&cases, &cpu, Some(&accel)).unwrap();
    for r in &report.rows {
        println!(
            "{:<10} {:<6} {:<11} {:8.1} QPS  norm {}  {:.3} QPS/W",
            r.model,
            r.sla.as_str(),
            r.scheduler.as_str(),
            r.qps,
            r.qps_norm.map_or("-".into(), |n| format!("{n:.2}")),
            r.qps_per_watt
        );
    }
    let (a, b) = emit_report(&report, &dir).unwrap();
    println!("wrote {} and {}", a.display(), b.display());
}
