use proptest::prelude::*;

use recsim::config::{ExperimentConfig, Grids, ModelRef};
use recsim::loadgen::{export_trace_string, gen_trace, parse_trace, SizeDistribution};
use recsim::model::{builtin_model, work, OpCategory, ZOO};
use recsim::platform::{broadwell, cpu_service_time, skylake};
use recsim::sim::{simulate, summarize_latencies, SchedulerConfig};
use recsim::targets::SlaLevel;
use recsim::tune::{dominates, pareto, SweepRow};

fn zoo_model() -> impl Strategy<Value = &'static str> {
    prop::sample::select(ZOO.to_vec())
}

fn level() -> impl Strategy<Value = SlaLevel> {
    prop::sample::select(SlaLevel::ALL.to_vec())
}

proptest! {
    #[test]
    fn work_scales_linearly_with_batch(name in zoo_model(), b in 1usize..300, k in prop::sample::select(vec![2usize, 4, 8])) {
        let m = builtin_model(name).unwrap();
        let (one, many) = (work(&m, b), work(&m, k * b));
        for cat in OpCategory::ALL {
            let (w1, wk) = (one.get(cat), many.get(cat));
            prop_assert_eq!(wk.flops, k as u64 * w1.flops);
            prop_assert_eq!(wk.bytes, k as u64 * w1.bytes);
        }
    }

    #[test]
    fn service_time_grows_with_batch(name in zoo_model(), b in 1usize..1024, active in 1usize..40) {
        let m = builtin_model(name).unwrap();
        let cpu = skylake();
        let t = |b| cpu_service_time(&m, b, active, &cpu).total;
        prop_assert!(t(b + 1) >= t(b));
    }

    #[test]
    fn contention_never_speeds_up(name in zoo_model(), b in 1usize..512) {
        let m = builtin_model(name).unwrap();
        for cpu in [skylake(), broadwell()] {
            let idle = cpu_service_time(&m, b, 1, &cpu).total;
            let busy = cpu_service_time(&m, b, cpu.cores, &cpu).total;
            prop_assert!(busy >= idle);
        }
    }

    #[test]
    fn summary_matches_order_statistics(xs in prop::collection::vec(0.0f64..10.0, 1..500)) {
        let s = summarize_latencies(&xs).unwrap();
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let at = |p: f64| sorted[((p * n as f64).ceil() as usize).max(1) - 1];
        prop_assert_eq!(s.p50, at(0.50));
        prop_assert_eq!(s.p95, at(0.95));
        prop_assert_eq!(s.p99, at(0.99));
        prop_assert_eq!(s.max, sorted[n - 1]);
    }

    #[test]
    fn pareto_matches_quadratic_oracle(pts in prop::collection::vec((0u8..40, 0u8..40), 1..1000)) {
        let rows: Vec<SweepRow> = pts
            .iter()
            .enumerate()
            .map(|(i, &(p, q))| SweepRow {
                batch_size: i + 1,
                offload_threshold: None,
                sla: 1.0,
                qps: q as f64,
                p95: p as f64 / 40.0,
                qps_per_watt: 0.0,
                accel_work_fraction: 0.0,
            })
            .collect();
        let mut got: Vec<usize> = pareto(&rows).iter().map(|r| r.batch_size).collect();
        got.sort_unstable();
        let want: Vec<usize> = rows
            .iter()
            .filter(|r| !rows.iter().any(|o| dominates(o, r)))
            .map(|r| r.batch_size)
            .collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn trace_text_round_trips(seed in any::<u64>(), lambda in 1.0f64..1e4, n in 1usize..300) {
        let t = gen_trace(seed, lambda, &SizeDistribution::production(), n).unwrap();
        let back = parse_trace(&export_trace_string(&t)).unwrap();
        prop_assert_eq!(back.records, t.records);
        prop_assert_eq!(back.seed, seed);
    }

    #[test]
    fn sizes_stay_in_range(seed in any::<u64>(), max in 1usize..2000) {
        let mut d = SizeDistribution::production();
        d.max_size = max;
        let t = gen_trace(seed, 100.0, &d, 2000).unwrap();
        prop_assert!(t.records.iter().all(|r| r.size >= 1 && r.size as usize <= max));
    }

    #[test]
    fn config_round_trips(
        name in zoo_model(),
        sla in level(),
        sla_s in prop::option::of(1e-4f64..10.0),
        seed in any::<u64>(),
        queries in 1usize..1_000_000,
        replicas in 1usize..8,
        mu in 0.0f64..6.0,
        sigma in 0.05f64..2.0,
        batches in prop::option::of(prop::collection::vec(1usize..2048, 1..6)),
        inline in any::<bool>(),
    ) {
        let mut cfg = ExperimentConfig::for_model(name);
        if inline {
            cfg.model = ModelRef::Inline(builtin_model(name).unwrap());
        }
        cfg.sla = sla;
        cfg.sla_s = sla_s;
        cfg.base_seed = seed;
        cfg.queries = queries;
        cfg.replicas = replicas;
        cfg.distribution = SizeDistribution::lognormal(mu, sigma);
        cfg.grids = Grids { batch: batches, threshold: Some(vec![None, Some(64)]), sla: Some(vec![sla]) };
        prop_assert_eq!(ExperimentConfig::parse(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), b in 1usize..64) {
        let m = builtin_model("DLRM-RMC1").unwrap();
        let cfg = SchedulerConfig::cpu_only(m, skylake(), b, 0.1);
        let t = gen_trace(seed, 500.0, &SizeDistribution::production(), 400).unwrap();
        prop_assert_eq!(simulate(&t, &cfg).unwrap(), simulate(&t, &cfg).unwrap());
    }
}
