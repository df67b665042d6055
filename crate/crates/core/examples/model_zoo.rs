//! Per-category work and CPU time split for every zoo model.

use recsim::model::{builtin_model, dominant_category, time_shares, work, ZOO};
use recsim::platform::skylake;

fn main() {
    let cpu = skylake();
    for name in ZOO {
        let m = builtin_model(name).unwrap();
        let w = work(&m, 64).total();
        println!(
            "{name:<10} {:>12} flops {:>10} bytes per 64 items, dominant {}",
            w.flops,
            w.bytes,
            dominant_category(&m, &cpu, 64).as_str()
        );
        for (cat, share) in time_shares(&m, &cpu, 64) {
            if share > 0.0 {
                println!("    {:<16} {:5.1}%", cat.as_str(), share * 100.0);
            }
        }
    }
}
