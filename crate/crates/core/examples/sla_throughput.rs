//! Throughput under each latency target for a few fixed batch sizes.

use recsim::model::builtin_model;
use recsim::platform::skylake;
use recsim::sim::{max_qps_under_sla, SchedulerConfig, TraceParams};
use recsim::targets::{sla_seconds, SlaLevel};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "DLRM-RMC3".into());
    let m = builtin_model(&name).unwrap();
    let params = TraceParams::production(10_000, 7);
    for level in SlaLevel::ALL {
        let sla = sla_seconds(&name, level).unwrap();
        let row: Vec<String> = [4, 16, 64, 256]
            .iter()
            .map(|&b| {
                let cfg = SchedulerConfig::cpu_only(m.clone(), skylake(), b, sla);
                let r = max_qps_under_sla(&cfg, sla, &params).unwrap();
                format!("B={b}: {:7.1}", r.qps)
            })
            .collect();
        println!("{name} {level:<6} ({:.0} ms)  {}", sla * 1e3, row.join("  "));
    }
}
