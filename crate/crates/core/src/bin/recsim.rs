use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use recsim::config::{AccelRef, CpuRef, Experiment, ExperimentConfig, ModelRef};
use recsim::loadgen::{export_trace_string, gen_trace, import_trace, trace_stats, SizeDistribution};
use recsim::model::{builtin_model, ZOO};
use recsim::platform::{accelerator, cpu_platform, ACCELERATORS, CPU_PLATFORMS};
use recsim::report::{build_report, emit_report, run_cases};
use recsim::repro::{run_repro, ReproOptions};
use recsim::sim::{max_qps_under_sla, simulate, summarize, SchedulerConfig};
use recsim::targets::{sla_seconds, SlaLevel};
use recsim::tune::{batch_ladder_with, pareto, pow2_ladder, static_batch, sweep, tune, SweepRow};
use recsim::{Error, Result};

/// Simulate and tune recommendation inference serving under p95 targets.
#[derive(Parser)]
#[command(name = "recsim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List built-in models and platforms.
    #[command(subcommand)]
    Zoo(ZooCmd),
    /// Generate, summarize or validate query traces.
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Throughput under the target for fixed knobs, or latency at a given rate.
    Simulate {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        batch: usize,
        /// Offload queries larger than this (needs --accel).
        #[arg(long)]
        threshold: Option<usize>,
        /// Simulate one trace at this offered rate instead of searching.
        #[arg(long)]
        lambda: Option<f64>,
        /// Per-query CSV (with --lambda).
        #[arg(long)]
        queries_csv: Option<PathBuf>,
    },
    /// Hill-climb batch size and offload threshold.
    Tune {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Evaluate every point of a knob grid.
    Sweep {
        #[command(flatten)]
        exp: ExpArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Sweep a grid and flag its latency/throughput frontier.
    Pareto {
        #[command(flatten)]
        exp: ExpArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Static vs tuned comparison across models and targets.
    Report {
        #[command(flatten)]
        exp: ExpArgs,
        /// Comma-separated models; all of the zoo by default.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run the desk-scale reproduction suite.
    Repro {
        #[arg(long, default_value_t = ReproOptions::default().queries)]
        queries: usize,
        #[arg(long, default_value_t = ReproOptions::default().sweep_configs)]
        sweep_configs: usize,
        /// Where report.csv and pareto.csv go.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ZooCmd {
    List,
    Platforms,
    /// Print one model or platform as JSON.
    Show { name: String },
}

#[derive(Subcommand)]
enum TraceCmd {
    Gen {
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = recsim::config::DEFAULT_SEED)]
        seed: u64,
        /// production, lognormal, or fixed:<size>.
        #[arg(long, default_value = "production")]
        dist: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Stats { path: PathBuf },
    Validate { path: PathBuf },
}

#[derive(Args)]
struct ExpArgs {
    /// JSON experiment config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    cpu: Option<String>,
    #[arg(long)]
    accel: Option<String>,
    /// low, medium, high, or seconds.
    #[arg(long)]
    sla: Option<String>,
    #[arg(long)]
    dist: Option<String>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, value_delimiter = ',')]
    batches: Vec<usize>,
    /// Thresholds; `none` means CPU-only.
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<String>,
    /// Targets as levels or seconds.
    #[arg(long, value_delimiter = ',')]
    slas: Vec<String>,
}

fn parse_dist(s: &str) -> Result<SizeDistribution> {
    let prod = SizeDistribution::production();
    match s {
        "production" => Ok(prod),
        "lognormal" => Ok(prod.matched_lognormal().expect("production has a body")),
        _ => match s.strip_prefix("fixed:").map(str::parse) {
            Some(Ok(n)) => Ok(SizeDistribution::fixed(n)),
            _ => Err(Error::Config(format!("unknown distribution `{s}`"))),
        },
    }
}

enum Sla {
    Level(SlaLevel),
    Seconds(f64),
}

fn parse_sla(s: &str) -> Result<Sla> {
    if let Ok(l) = s.parse() {
        return Ok(Sla::Level(l));
    }
    s.parse()
        .map(Sla::Seconds)
        .map_err(|_| Error::Config(format!("`{s}` is neither an sla level nor seconds")))
}

impl ExpArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        self.config_or(None)
    }

    /// `fallback` stands in for a missing model.
    fn config_or(&self, fallback: Option<&str>) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.model.as_deref().or(fallback)) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(m)) => ExperimentConfig::for_model(m),
            (None, None) => return Err(Error::Config("pass --model or --config".into())),
        };
        if let (Some(_), Some(m)) = (&self.config, &self.model) {
            cfg.model = ModelRef::Name(m.clone());
        }
        if let Some(c) = &self.cpu {
            cfg.cpu = CpuRef::Name(c.clone());
        }
        if let Some(a) = &self.accel {
            cfg.accel = Some(AccelRef::Name(a.clone()));
        }
        if let Some(s) = &self.sla {
            match parse_sla(s)? {
                Sla::Level(l) => {
                    cfg.sla = l;
                    cfg.sla_s = None;
                }
                Sla::Seconds(x) => cfg.sla_s = Some(x),
            }
        }
        if let Some(d) = &self.dist {
            cfg.distribution = parse_dist(d)?;
        }
        if let Some(q) = self.queries {
            cfg.queries = q;
        }
        if let Some(r) = self.replicas {
            cfg.replicas = r;
        }
        Ok(cfg)
    }

    fn resolve(&self) -> Result<(ExperimentConfig, Experiment)> {
        let cfg = self.config()?;
        let exp = cfg.resolve()?;
        Ok((cfg, exp))
    }
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes")
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    model: &'a str,
    cpu: &'a str,
    batch: usize,
    threshold: Option<usize>,
    sla_s: f64,
    lambda: f64,
    qps: f64,
    p50: Option<f64>,
    p95: f64,
    p99: Option<f64>,
    meets_sla: bool,
    accel_work_fraction: f64,
    core_utilization: f64,
}

fn cmd_simulate(
    exp: &ExpArgs,
    batch: usize,
    threshold: Option<usize>,
    lambda: Option<f64>,
    queries_csv: Option<&Path>,
) -> Result<()> {
    let (_, e) = exp.resolve()?;
    let cfg = SchedulerConfig {
        batch_size: batch,
        offload_threshold: threshold,
        accel: e.accel.clone(),
        ..SchedulerConfig::cpu_only(e.model.clone(), e.cpu.clone(), batch, e.sla)
    };
    cfg.validate()?;
    let summary = match lambda {
        Some(l) => {
            let trace = gen_trace(e.params.base_seed, l, &e.params.distribution, e.params.queries)?;
            let res = simulate(&trace, &cfg)?;
            if let Some(p) = queries_csv {
                write_out(Some(p), &res.to_csv()?)?;
            }
            let s = summarize(&res)?;
            SimulateSummary {
                model: &e.model.name,
                cpu: &e.cpu.name,
                batch,
                threshold,
                sla_s: e.sla,
                lambda: l,
                qps: res.achieved_qps,
                p50: Some(s.p50),
                p95: s.p95,
                p99: Some(s.p99),
                meets_sla: s.p95 <= e.sla,
                accel_work_fraction: res.accel_work_fraction,
                core_utilization: res.core_utilization,
            }
        }
        None => {
            let r = max_qps_under_sla(&cfg, e.sla, &e.params)?;
            SimulateSummary {
                model: &e.model.name,
                cpu: &e.cpu.name,
                batch,
                threshold,
                sla_s: e.sla,
                lambda: r.lambda,
                qps: r.qps,
                p50: None,
                p95: r.p95,
                p99: None,
                meets_sla: r.qps > 0.0,
                accel_work_fraction: r.accel_work_fraction,
                core_utilization: r.core_utilization,
            }
        }
    };
    write_out(exp.out.as_deref(), &json(&summary))?;
    if summary.meets_sla {
        Ok(())
    } else {
        Err(Error::InfeasibleSla { sla_s: e.sla })
    }
}

fn cmd_tune(exp: &ExpArgs) -> Result<()> {
    let (_, e) = exp.resolve()?;
    let out = tune(&e.model, &e.cpu, e.accel.as_ref(), e.sla, &e.params)?;
    write_out(exp.out.as_deref(), &json(out.best()))
}

fn grid_points(
    grid: &GridArgs,
    cfg: &ExperimentConfig,
    e: &Experiment,
) -> Result<(Vec<f64>, Vec<usize>, Vec<Option<usize>>)> {
    let max = e.params.distribution.max_size;
    let mut slas = Vec::new();
    for s in &grid.slas {
        slas.push(match parse_sla(s)? {
            Sla::Level(l) => sla_seconds(&e.model.name, l)?,
            Sla::Seconds(x) => x,
        });
    }
    if slas.is_empty() {
        match &cfg.grids.sla {
            Some(levels) => {
                for &l in levels {
                    slas.push(sla_seconds(&e.model.name, l)?);
                }
            }
            None => slas.push(e.sla),
        }
    }
    let batches = if !grid.batches.is_empty() {
        grid.batches.clone()
    } else {
        cfg.grids
            .batch
            .clone()
            .unwrap_or_else(|| batch_ladder_with(static_batch(&e.cpu, max)))
    };
    let thresholds = if !grid.thresholds.is_empty() {
        grid.thresholds
            .iter()
            .map(|t| match t.as_str() {
                "none" => Ok(None),
                t => t
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::Config(format!("bad threshold `{t}`"))),
            })
            .collect::<Result<_>>()?
    } else if let Some(t) = &cfg.grids.threshold {
        t.clone()
    } else {
        let mut t = vec![None];
        if e.accel.is_some() {
            t.extend(pow2_ladder(max).into_iter().map(Some));
        }
        t
    };
    Ok((slas, batches, thresholds))
}

fn cmd_sweep(exp: &ExpArgs, grid: &GridArgs, frontier: bool) -> Result<()> {
    let (cfg, e) = exp.resolve()?;
    let (slas, batches, thresholds) = grid_points(grid, &cfg, &e)?;
    let table = sweep(&e.model, &e.cpu, e.accel.as_ref(), &slas, &batches, &thresholds, &e.params)?;
    let text = if frontier { pareto_table(&table.rows)? } else { table.to_csv()? };
    write_out(exp.out.as_deref(), &text)
}

fn pareto_table(rows: &[SweepRow]) -> Result<String> {
    let front = pareto(rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sla_s", "p95_s", "qps", "batch", "threshold", "is_pareto"])?;
    for r in rows {
        w.write_record([
            r.sla.to_string(),
            r.p95.to_string(),
            r.qps.to_string(),
            r.batch_size.to_string(),
            r.offload_threshold.map_or(String::new(), |t| t.to_string()),
            front.contains(r).to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8"))
}

fn cmd_report(exp: &ExpArgs, models: &[String], out_dir: &Path) -> Result<()> {
    let cfg = exp.config_or(Some(ZOO[0]))?;
    let e = cfg.resolve()?;
    let names: Vec<&str> = if models.is_empty() {
        ZOO.to_vec()
    } else {
        models.iter().map(String::as_str).collect()
    };
    for m in &names {
        builtin_model(m)?;
    }
    let levels = cfg.grids.sla.clone().unwrap_or_else(|| SlaLevel::ALL.to_vec());
    let cases = run_cases(&names, &levels, &e.cpu, e.accel.as_ref(), &e.params)?;
    let report = build_report(&cases, &e.cpu, e.accel.as_ref())?;
    std::fs::create_dir_all(out_dir).map_err(|err| Error::Io {
        path: out_dir.to_path_buf(),
        source: err,
    })?;
    let (r, p) = emit_report(&report, out_dir)?;
    println!("{}\n{}", r.display(), p.display());
    Ok(())
}

fn cmd_repro(queries: usize, sweep_configs: usize, out_dir: Option<&Path>) -> Result<bool> {
    let mut opts = ReproOptions {
        queries,
        sweep_configs,
        ..ReproOptions::default()
    };
    if let Ok(v) = std::env::var(recsim::config::SEED_ENV) {
        opts.base_seed = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{}={v} is not a u64", recsim::config::SEED_ENV)))?;
    }
    let run = run_repro(&opts)?;
    for c in &run.checks {
        println!("{}", c.line());
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        emit_report(&run.report.report, dir)?;
    }
    let passed = run.checks.iter().filter(|c| c.passed).count();
    println!("{passed}/{} checks passed", run.checks.len());
    Ok(run.all_passed())
}

fn cmd_zoo(cmd: &ZooCmd) -> Result<()> {
    match cmd {
        ZooCmd::List => {
            for m in ZOO {
                let targets: Vec<String> = SlaLevel::ALL
                    .iter()
                    .map(|&l| format!("{}={:.1}ms", l, sla_seconds(m, l).map_or(f64::NAN, |s| s * 1e3)))
                    .collect();
                println!("{m}\t{}", targets.join(" "));
            }
        }
        ZooCmd::Platforms => {
            for p in CPU_PLATFORMS {
                let c = cpu_platform(p)?;
                println!("{p}\tcpu\t{} cores\t{} W", c.cores, c.tdp);
            }
            for a in ACCELERATORS {
                println!("{a}\taccelerator\t{} W", accelerator(a)?.power);
            }
        }
        ZooCmd::Show { name } => {
            let text = if let Ok(m) = builtin_model(name) {
                json(&m)
            } else if let Ok(c) = cpu_platform(name) {
                json(&c)
            } else {
                json(&accelerator(name)?)
            };
            println!("{text}");
        }
    }
    Ok(())
}

fn cmd_trace(cmd: &TraceCmd) -> Result<()> {
    match cmd {
        TraceCmd::Gen { lambda, n, seed, dist, out } => {
            let trace = gen_trace(*seed, *lambda, &parse_dist(dist)?, *n)?;
            write_out(out.as_deref(), &export_trace_string(&trace))
        }
        TraceCmd::Stats { path } => {
            println!("{}", json(&trace_stats(&import_trace(path)?)));
            Ok(())
        }
        TraceCmd::Validate { path } => {
            let t = import_trace(path)?;
            println!("ok: {} queries", t.records.len());
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InfeasibleSla { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let res = match &cli.cmd {
        Cmd::Zoo(z) => cmd_zoo(z),
        Cmd::Trace(t) => cmd_trace(t),
        Cmd::Simulate { exp, batch, threshold, lambda, queries_csv } => {
            cmd_simulate(exp, *batch, *threshold, *lambda, queries_csv.as_deref())
        }
        Cmd::Tune { exp } => cmd_tune(exp),
        Cmd::Sweep { exp, grid } => cmd_sweep(exp, grid, false),
        Cmd::Pareto { exp, grid } => cmd_sweep(exp, grid, true),
        Cmd::Report { exp, models, out_dir } => cmd_report(exp, models, out_dir),
        Cmd::Repro { queries, sweep_configs, out_dir } => {
            match cmd_repro(*queries, *sweep_configs, out_dir.as_deref()) {
                Ok(true) => Ok(()),
                Ok(false) => return ExitCode::from(3),
                Err(e) => Err(e),
            }
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("recsim: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
