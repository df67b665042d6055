//! Seeded open-loop query traces.
//!
//! Arrivals are a Poisson process; query sizes come from a
//! [`SizeDistribution`], rounded and clamped to `[1, max_size]`. A trace is a
//! pure function of `(seed, lambda, distribution, n)`.
//!
//! Trace files are UTF-8, one `arrival_seconds<TAB>size` record per line,
//! after a `#recsim-trace v1 seed=<u64> lambda=<f64>` header. An optional
//! `#dist <json>` line records the size distribution.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::percentile_sorted;

pub const DEFAULT_MAX_SIZE: usize = 1000;

const HEADER_PREFIX: &str = "#recsim-trace v1";
const DIST_PREFIX: &str = "#dist ";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum SizeKind {
    Fixed { size: usize },
    Normal { mean: f64, std: f64 },
    LogNormal { mu: f64, sigma: f64 },
    /// Lognormal body mixed with a Pareto tail starting at the body median.
    ProductionHeavyTail {
        body_mu: f64,
        body_sigma: f64,
        tail_alpha: f64,
        tail_weight: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SizeDistribution {
    #[serde(flatten)]
    pub kind: SizeKind,
    pub max_size: usize,
}

fn default_max_size() -> usize {
    DEFAULT_MAX_SIZE
}

// `flatten` cannot be combined with `deny_unknown_fields`, so `max_size` is
// split off by hand and the remaining keys are checked by `SizeKind`.
impl<'de> Deserialize<'de> for SizeDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut map = serde_json::Map::deserialize(d)?;
        let max_size = match map.remove("max_size") {
            Some(v) => serde_json::from_value(v).map_err(D::Error::custom)?,
            None => default_max_size(),
        };
        let kind = serde_json::from_value(serde_json::Value::Object(map)).map_err(D::Error::custom)?;
        Ok(SizeDistribution { kind, max_size })
    }
}

impl SizeDistribution {
    pub fn fixed(size: usize) -> Self {
        SizeDistribution {
            kind: SizeKind::Fixed { size },
            max_size: DEFAULT_MAX_SIZE,
        }
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Self {
        SizeDistribution {
            kind: SizeKind::LogNormal { mu, sigma },
            max_size: DEFAULT_MAX_SIZE,
        }
    }

    /// Production-like heavy tail with the calibrated defaults.
    pub fn production() -> Self {
        SizeDistribution {
            kind: SizeKind::ProductionHeavyTail {
                body_mu: 30f64.ln(),
                body_sigma: 0.5,
                tail_alpha: 1.1,
                tail_weight: 0.12,
            },
            max_size: DEFAULT_MAX_SIZE,
        }
    }

    /// Lognormal with the body's sigma whose median equals the mixture's
    /// (unclamped) median. This is the light-tailed baseline the production
    /// distribution is contrasted against.
    pub fn matched_lognormal(&self) -> Option<Self> {
        match self.kind {
            SizeKind::ProductionHeavyTail { body_sigma, .. } => Some(SizeDistribution {
                kind: SizeKind::LogNormal {
                    mu: self.mixture_median()?.ln(),
                    sigma: body_sigma,
                },
                max_size: self.max_size,
            }),
            _ => None,
        }
    }

    fn mixture_median(&self) -> Option<f64> {
        let SizeKind::ProductionHeavyTail {
            body_mu,
            body_sigma,
            tail_alpha,
            tail_weight,
        } = self.kind
        else {
            return None;
        };
        let x_min = body_mu.exp();
        let cdf = |x: f64| {
            let z = (x.ln() - body_mu) / body_sigma;
            let body = 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2);
            let tail = if x > x_min { 1.0 - (x_min / x).powf(tail_alpha) } else { 0.0 };
            (1.0 - tail_weight) * body + tail_weight * tail
        };
        let (mut lo, mut hi) = (1e-9f64, 1e12f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if cdf(mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some((lo * hi).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidDistribution(m.to_string()));
        if self.max_size == 0 {
            return bad("max_size must be >= 1");
        }
        match self.kind {
            SizeKind::Fixed { size } if size == 0 => bad("fixed size must be >= 1"),
            SizeKind::Fixed { .. } => Ok(()),
            SizeKind::Normal { mean, std } => {
                if mean.is_finite() && std.is_finite() && std >= 0.0 {
                    Ok(())
                } else {
                    bad("normal requires finite mean and std >= 0")
                }
            }
            SizeKind::LogNormal { mu, sigma } => {
                if mu.is_finite() && sigma.is_finite() && sigma >= 0.0 {
                    Ok(())
                } else {
                    bad("lognormal requires finite mu and sigma >= 0")
                }
            }
            SizeKind::ProductionHeavyTail {
                body_mu,
                body_sigma,
                tail_alpha,
                tail_weight,
            } => {
                let finite = [body_mu, body_sigma, tail_alpha, tail_weight]
                    .iter()
                    .all(|v| v.is_finite());
                if !finite {
                    bad("heavy-tail parameters must be finite")
                } else if body_sigma < 0.0 || tail_alpha <= 0.0 {
                    bad("heavy-tail requires body_sigma >= 0 and tail_alpha > 0")
                } else if !(0.0..=1.0).contains(&tail_weight) {
                    bad("tail_weight must lie in [0, 1]")
                } else {
                    Ok(())
                }
            }
        }
    }

    fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        let dist_err = |e: &dyn std::fmt::Display| Error::InvalidDistribution(e.to_string());
        let s = match self.kind {
            SizeKind::Fixed { size } => Sampler::Fixed(size as f64),
            SizeKind::Normal { mean, std } => {
                Sampler::Normal(Normal::new(mean, std).map_err(|e| dist_err(&e))?)
            }
            SizeKind::LogNormal { mu, sigma } => {
                Sampler::LogNormal(LogNormal::new(mu, sigma).map_err(|e| dist_err(&e))?)
            }
            SizeKind::ProductionHeavyTail {
                body_mu,
                body_sigma,
                tail_alpha,
                tail_weight,
            } => Sampler::Mixture {
                body: LogNormal::new(body_mu, body_sigma).map_err(|e| dist_err(&e))?,
                tail: Pareto::new(body_mu.exp(), tail_alpha).map_err(|e| dist_err(&e))?,
                tail_weight,
            },
        };
        Ok(s)
    }
}

enum Sampler {
    Fixed(f64),
    Normal(Normal<f64>),
    LogNormal(LogNormal<f64>),
    Mixture {
        body: LogNormal<f64>,
        tail: Pareto<f64>,
        tail_weight: f64,
    },
}

impl Sampler {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Fixed(s) => *s,
            Sampler::Normal(d) => d.sample(rng),
            Sampler::LogNormal(d) => d.sample(rng),
            Sampler::Mixture {
                body,
                tail,
                tail_weight,
            } => {
                if rng.random::<f64>() < *tail_weight {
                    tail.sample(rng)
                } else {
                    body.sample(rng)
                }
            }
        }
    }
}

fn clamp_size(raw: f64, max_size: usize) -> u32 {
    let rounded = raw.round();
    if rounded.is_nan() || rounded < 1.0 {
        1
    } else if rounded >= max_size as f64 {
        max_size as u32
    } else {
        rounded as u32
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub arrival: f64,
    pub size: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryTrace {
    pub seed: u64,
    pub lambda: f64,
    /// Absent for traces imported without a `#dist` line.
    pub distribution: Option<SizeDistribution>,
    pub records: Vec<QueryRecord>,
}

/// Generates `n` queries with Exponential(`lambda`) gaps starting at t = 0.
pub fn gen_trace(seed: u64, lambda: f64, dist: &SizeDistribution, n: usize) -> Result<QueryTrace> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "arrival rate must be positive and finite, got {lambda}"
        )));
    }
    assert!(n >= 1, "trace length must be >= 1");
    let sampler = dist.sampler()?;
    let gaps = Exp::new(lambda).map_err(|e| Error::InvalidDistribution(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0f64;
    let records = (0..n)
        .map(|_| {
            t += gaps.sample(&mut rng);
            let size = clamp_size(sampler.draw(&mut rng), dist.max_size);
            QueryRecord { arrival: t, size }
        })
        .collect();
    Ok(QueryTrace {
        seed,
        lambda,
        distribution: Some(dist.clone()),
        records,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceStats {
    pub count: usize,
    pub mean_size: f64,
    pub p50_size: u32,
    pub p95_size: u32,
    pub p99_size: u32,
    pub max_size: u32,
    /// Mean inter-arrival gap; the first gap is measured from t = 0.
    pub mean_gap: f64,
    pub gap_variance: f64,
    /// Size mass carried by the largest quarter of the queries.
    pub top_quartile_work_share: f64,
}

pub fn trace_stats(trace: &QueryTrace) -> TraceStats {
    let recs = &trace.records;
    assert!(!recs.is_empty(), "trace_stats on an empty trace");
    let n = recs.len();

    let mut sizes: Vec<u32> = recs.iter().map(|r| r.size).collect();
    sizes.sort_unstable();
    let total: f64 = sizes.iter().map(|&s| s as f64).sum();

    // The quartile boundary may split one query; count it fractionally so
    // equal sizes give exactly 0.25 for any n.
    let quarter = n as f64 / 4.0;
    let whole = quarter.floor() as usize;
    let frac = quarter - whole as f64;
    let mut top: f64 = sizes.iter().rev().take(whole).map(|&s| s as f64).sum();
    if whole < n {
        top += frac * sizes[n - 1 - whole] as f64;
    }

    let mut gaps = Vec::with_capacity(n);
    let mut prev = 0.0;
    for r in recs {
        gaps.push(r.arrival - prev);
        prev = r.arrival;
    }
    let mean_gap = gaps.iter().sum::<f64>() / n as f64;
    let gap_variance = if n > 1 {
        gaps.iter().map(|g| (g - mean_gap).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };

    TraceStats {
        count: n,
        mean_size: total / n as f64,
        p50_size: percentile_sorted(&sizes, 50.0),
        p95_size: percentile_sorted(&sizes, 95.0),
        p99_size: percentile_sorted(&sizes, 99.0),
        max_size: sizes[n - 1],
        mean_gap,
        gap_variance,
        top_quartile_work_share: top / total,
    }
}

/// Fraction of queries strictly larger than `threshold`.
pub fn survival_fraction(trace: &QueryTrace, threshold: u32) -> f64 {
    let above = trace.records.iter().filter(|r| r.size > threshold).count();
    above as f64 / trace.records.len() as f64
}

pub fn export_trace_string(trace: &QueryTrace) -> String {
    let mut out = String::with_capacity(trace.records.len() * 24 + 64);
    let _ = writeln!(out, "{HEADER_PREFIX} seed={} lambda={}", trace.seed, trace.lambda);
    if let Some(dist) = &trace.distribution {
        let json = serde_json::to_string(dist).expect("distribution serializes");
        let _ = writeln!(out, "{DIST_PREFIX}{json}");
    }
    for r in &trace.records {
        let _ = writeln!(out, "{}\t{}", r.arrival, r.size);
    }
    out
}

pub fn export_trace(trace: &QueryTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, export_trace_string(trace)).map_err(|e| Error::io(path, e))
}

pub fn import_trace(path: impl AsRef<Path>) -> Result<QueryTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text)
}

pub fn parse_trace(text: &str) -> Result<QueryTrace> {
    let err = |line: usize, message: String| Error::Parse { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "missing header line".into()))?;
    let rest = header
        .strip_prefix(HEADER_PREFIX)
        .ok_or_else(|| err(1, format!("expected `{HEADER_PREFIX}` header")))?;
    let mut seed = None;
    let mut lambda = None;
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("seed", v)) => {
                seed = Some(v.parse::<u64>().map_err(|e| err(1, format!("seed: {e}")))?)
            }
            Some(("lambda", v)) => {
                lambda = Some(v.parse::<f64>().map_err(|e| err(1, format!("lambda: {e}")))?)
            }
            _ => return Err(err(1, format!("unexpected header field `{field}`"))),
        }
    }
    let seed = seed.ok_or_else(|| err(1, "header lacks seed=".into()))?;
    let lambda = lambda.ok_or_else(|| err(1, "header lacks lambda=".into()))?;

    let mut distribution: Option<SizeDistribution> = None;
    let mut records = Vec::new();
    let mut last_line = 1;
    let mut prev_arrival = f64::NEG_INFINITY;
    for (no, line) in lines {
        last_line = no;
        if line.is_empty() {
            continue;
        }
        if let Some(json) = line.strip_prefix(DIST_PREFIX) {
            if !records.is_empty() || distribution.is_some() {
                return Err(err(no, "#dist must directly follow the header".into()));
            }
            let d: SizeDistribution =
                serde_json::from_str(json).map_err(|e| err(no, format!("#dist: {e}")))?;
            distribution = Some(d);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let (t, s) = line
            .split_once('\t')
            .ok_or_else(|| err(no, "expected `arrival<TAB>size`".into()))?;
        let arrival: f64 = t.parse().map_err(|e| err(no, format!("arrival `{t}`: {e}")))?;
        let size: u32 = s.parse().map_err(|e| err(no, format!("size `{s}`: {e}")))?;
        if !arrival.is_finite() || arrival < 0.0 {
            return Err(err(no, format!("arrival {arrival} must be finite and >= 0")));
        }
        if arrival < prev_arrival {
            return Err(err(no, "arrival times must be non-decreasing".into()));
        }
        if size == 0 {
            return Err(err(no, "size must be >= 1".into()));
        }
        if let Some(d) = &distribution {
            if size as usize > d.max_size {
                return Err(err(no, format!("size {size} exceeds max_size {}", d.max_size)));
            }
        }
        prev_arrival = arrival;
        records.push(QueryRecord { arrival, size });
    }
    if records.is_empty() {
        return Err(err(last_line + 1, "trace has no records".into()));
    }
    Ok(QueryTrace {
        seed,
        lambda,
        distribution,
        records,
    })
}
