//! Exhaustive batch × threshold sweep and its latency/throughput frontier.

use recsim::model::builtin_model;
use recsim::platform::{default_accelerator, skylake};
use recsim::sim::TraceParams;
use recsim::targets::{sla_seconds, SlaLevel};
use recsim::tune::{pareto, sweep};

fn main() {
    let m = builtin_model("DLRM-RMC1").unwrap();
    let sla = sla_seconds(&m.name, SlaLevel::Medium).unwrap();
    let params = TraceParams::production(5_000, 7);
    let batches = [1, 4, 16, 64, 256];
    let thresholds = [None, Some(64), Some(128), Some(256)];
    let table = sweep(&m, &skylake(), Some(&default_accelerator()), &[sla], &batches, &thresholds, &params).unwrap();
    println!("{} points, best {:?}", table.rows.len(), table.best().map(|r| (r.batch_size, r.offload_threshold, r.qps)));
    for r in pareto(&table.rows) {
        println!(
            "frontier: B={:<4} T={:<5} p95 {:6.1} ms  {:8.1} QPS",
            r.batch_size,
            r.offload_threshold.map_or("-".into(), |t| t.to_string()),
            r.p95 * 1e3,
            r.qps
        );
    }
}
