//! Hill-climbs batch size and offload threshold and prints the search path.

use recsim::model::builtin_model;
use recsim::platform::{default_accelerator, skylake};
use recsim::sim::TraceParams;
use recsim::targets::{sla_seconds, SlaLevel};
use recsim::tune::{static_baseline, tune};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "DLRM-RMC1".into());
    let m = builtin_model(&name).unwrap();
    let sla = sla_seconds(&name, SlaLevel::Medium).unwrap();
    let params = TraceParams::production(10_000, 7);
    let cpu = skylake();
    let baseline = static_baseline(&m, &cpu, sla, &params).unwrap();
    let out = tune(&m, &cpu, Some(&default_accelerator()), sla, &params).unwrap();
    for s in &out.best().search_path {
        println!(
            "{:?}  B={:<5} T={:<6} qps {:8.1}  p95 {:6.1} ms",
            s.phase,
            s.batch_size,
            s.offload_threshold.map_or("-".into(), |t| t.to_string()),
            s.qps,
            s.p95 * 1e3
        );
    }
    println!("static B={}: {:.1} QPS", baseline.batch_size, baseline.qps);
    println!("tuned CPU B={}: {:.1} QPS", out.cpu_only.batch_size, out.cpu_only.qps);
    if let Some(o) = &out.offload {
        println!(
            "with accelerator T={:?}: {:.1} QPS, {:.1}% of work offloaded, {:.3} QPS/W",
            o.offload_threshold,
            o.qps,
            o.accel_work_fraction * 100.0,
            o.qps_per_watt
        );
    }
}
