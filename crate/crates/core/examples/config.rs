//! Builds an experiment config, prints its JSON, and resolves it.

use recsim::config::{AccelRef, ExperimentConfig};
use recsim::targets::SlaLevel;

fn main() {
    let mut cfg = ExperimentConfig::for_model("DIN");
    cfg.accel = Some(AccelRef::Name("default".into()));
    cfg.sla = SlaLevel::High;
    cfg.queries = 20_000;
    let text = cfg.to_json();
    println!("{text}");
    let exp = ExperimentConfig::parse(&text).unwrap().resolve().unwrap();
    println!(
        "{} on {} with {}: target {:.1} ms, seed {}",
        exp.model.name,
        exp.cpu.name,
        exp.accel.map_or("no accelerator".into(), |a| a.name),
        exp.sla * 1e3,
        exp.params.base_seed
    );
}
