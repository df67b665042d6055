//! Latency percentiles of one configuration as the offered load rises.

use recsim::loadgen::{gen_trace, SizeDistribution};
use recsim::model::builtin_model;
use recsim::platform::skylake;
use recsim::sim::{summarize, simulate, SchedulerConfig};

fn main() {
    let m = builtin_model("DLRM-RMC1").unwrap();
    let cfg = SchedulerConfig::cpu_only(m, skylake(), 64, 0.1);
    println!("lambda  achieved     p50      p95      p99   [ms]");
    for lambda in [100.0, 300.0, 500.0, 700.0, 900.0] {
        let t = gen_trace(7, lambda, &SizeDistribution::production(), 20_000).unwrap();
        let r = simulate(&t, &cfg).unwrap();
        let s = summarize(&r).unwrap();
        println!(
            "{lambda:>6}  {:>8.1}  {:>6.1}  {:>7.1}  {:>7.1}",
            r.achieved_qps,
            s.p50 * 1e3,
            s.p95 * 1e3,
            s.p99 * 1e3
        );
    }
}
