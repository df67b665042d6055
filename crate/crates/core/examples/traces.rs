//! Production-like and lognormal query traces side by side.

use recsim::loadgen::{export_trace_string, gen_trace, survival_fraction, trace_stats, SizeDistribution};

fn main() {
    let prod = SizeDistribution::production();
    let ln = prod.matched_lognormal().unwrap();
    for (label, d) in [("production", &prod), ("lognormal", &ln)] {
        let t = gen_trace(7, 500.0, d, 200_000).unwrap();
        let s = trace_stats(&t);
        println!(
            "{label:<10} mean {:6.1}  p50 {:4}  p95 {:4}  p99 {:4}  top-quartile mass {:.3}  P(size>500) {:.4}",
            s.mean_size,
            s.p50_size,
            s.p95_size,
            s.p99_size,
            s.top_quartile_work_share,
            survival_fraction(&t, 500)
        );
    }
    let small = gen_trace(1, 100.0, &prod, 5).unwrap();
    print!("{}", export_trace_string(&small));
}
