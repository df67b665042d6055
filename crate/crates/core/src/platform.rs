//! Roofline cost and power models for CPU servers and a PCIe accelerator.
//!
//! CPU: each operator category costs `max(compute, memory)`. Compute runs at
//! the per-core peak scaled by a SIMD efficiency that ramps linearly with the
//! batch until it saturates. Memory bandwidth is split evenly between the
//! active cores and further degraded by a linear contention factor.
//!
//! Accelerator: a fixed plus per-byte input transfer followed by a roofline
//! compute phase, with no overlap between the two.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{work, ModelSpec, OpCategory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuPlatformSpec {
    pub name: String,
    pub cores: usize,
    /// Peak flops/s of one core.
    pub flops_per_core_peak: f64,
    /// SIMD efficiency at batch 0 (the ramp's intercept).
    pub simd_eff_floor: f64,
    /// Batch at which SIMD efficiency reaches 1.
    pub simd_saturation_batch: usize,
    /// Socket-wide DRAM bandwidth, bytes/s.
    pub mem_bandwidth_total: f64,
    /// Extra memory slowdown with every core active.
    pub contention_coeff: f64,
    pub tdp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceleratorSpec {
    pub name: String,
    pub flops_peak: f64,
    pub mem_bandwidth: f64,
    /// Per-query transfer setup cost, seconds.
    pub transfer_fixed: f64,
    /// Seconds per input byte moved to the device.
    pub transfer_per_byte: f64,
    pub power: f64,
}

pub const CPU_PLATFORMS: [&str; 2] = ["broadwell", "skylake"];
pub const ACCELERATORS: [&str; 1] = ["default"];

/// Sustained share of the FMA peak for a served model: framework, gather
/// and scheduling overheads leave a few percent of the datasheet rate.
/// Bandwidths are taken at face value.
pub const SUSTAINED_FLOPS_FRACTION: f64 = 0.025;

/// 28 cores at 2.4 GHz, AVX2 (8 fp32 lanes, 2 FMA ports), inclusive L2/L3.
pub fn broadwell() -> CpuPlatformSpec {
    CpuPlatformSpec {
        name: "broadwell".into(),
        cores: 28,
        flops_per_core_peak: 2.4e9 * 2.0 * 8.0 * 2.0 * SUSTAINED_FLOPS_FRACTION,
        simd_eff_floor: 0.4,
        simd_saturation_batch: 32,
        mem_bandwidth_total: 60e9,
        contention_coeff: 0.5,
        tdp: 120.0,
    }
}

/// 40 cores at 2.0 GHz, AVX-512 (16 fp32 lanes, 2 FMA ports), exclusive L2/L3.
pub fn skylake() -> CpuPlatformSpec {
    CpuPlatformSpec {
        name: "skylake".into(),
        cores: 40,
        flops_per_core_peak: 2.0e9 * 2.0 * 16.0 * 2.0 * SUSTAINED_FLOPS_FRACTION,
        simd_eff_floor: 0.25,
        simd_saturation_batch: 128,
        mem_bandwidth_total: 90e9,
        contention_coeff: 0.2,
        tdp: 125.0,
    }
}

/// 1080Ti-class GPU behind a PCIe 3.0 x16 link.
pub fn default_accelerator() -> AcceleratorSpec {
    AcceleratorSpec {
        name: "default".into(),
        flops_peak: 11.3e12 * SUSTAINED_FLOPS_FRACTION,
        mem_bandwidth: 484e9,
        transfer_fixed: 1e-3,
        transfer_per_byte: 1.0 / 15.75e9,
        power: 250.0,
    }
}

pub fn cpu_platform(name: &str) -> Result<CpuPlatformSpec> {
    match name {
        "broadwell" => Ok(broadwell()),
        "skylake" => Ok(skylake()),
        other => Err(Error::UnknownPlatform(other.to_string())),
    }
}

pub fn accelerator(name: &str) -> Result<AcceleratorSpec> {
    match name {
        "default" => Ok(default_accelerator()),
        other => Err(Error::UnknownPlatform(other.to_string())),
    }
}

impl CpuPlatformSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidPlatform(format!("{}: {msg}", self.name)));
        if self.cores == 0 {
            return bad("cores must be >= 1".into());
        }
        if !(self.simd_eff_floor > 0.0 && self.simd_eff_floor <= 1.0) {
            return bad(format!("simd_eff_floor {} outside (0, 1]", self.simd_eff_floor));
        }
        if self.simd_saturation_batch == 0 {
            return bad("simd_saturation_batch must be >= 1".into());
        }
        if !(self.flops_per_core_peak > 0.0 && self.mem_bandwidth_total > 0.0) {
            return bad("peak flops and bandwidth must be positive".into());
        }
        if !(self.contention_coeff >= 0.0) {
            return bad("contention_coeff must be >= 0".into());
        }
        if !(self.tdp > 0.0) {
            return bad("tdp must be positive".into());
        }
        Ok(())
    }

    /// SIMD efficiency at a given batch.
    pub fn simd_efficiency(&self, batch: usize) -> f64 {
        let ramp = batch as f64 / self.simd_saturation_batch as f64;
        (self.simd_eff_floor + (1.0 - self.simd_eff_floor) * ramp).min(1.0)
    }

    /// Memory slowdown factor with `active` cores running.
    pub fn contention(&self, active: usize) -> f64 {
        if self.cores <= 1 {
            return 1.0;
        }
        let active = active.max(1);
        1.0 + self.contention_coeff * (active - 1) as f64 / (self.cores - 1) as f64
    }
}

impl AcceleratorSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.flops_peak,
            self.mem_bandwidth,
            self.transfer_fixed,
            self.transfer_per_byte,
            self.power,
        ];
        if positive.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidPlatform(format!(
                "{}: accelerator parameters must be positive",
                self.name
            )))
        }
    }
}

/// Modeled execution time of one request or query.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ServiceTime {
    pub total: f64,
    pub breakdown: [f64; 7],
    /// Host-to-device transfer; zero on the CPU.
    pub transfer: f64,
}

impl ServiceTime {
    pub fn category(&self, cat: OpCategory) -> f64 {
        self.breakdown[cat.index()]
    }
}

pub fn cpu_service_time(
    model: &ModelSpec,
    batch: usize,
    active_cores: usize,
    cpu: &CpuPlatformSpec,
) -> ServiceTime {
    assert!(batch >= 1, "batch must be >= 1");
    assert!(
        (1..=cpu.cores).contains(&active_cores),
        "active_cores {active_cores} outside 1..={}",
        cpu.cores
    );
    let w = work(model, batch);
    let flops_rate = cpu.flops_per_core_peak * cpu.simd_efficiency(batch);
    let per_core_bw = cpu.mem_bandwidth_total / active_cores as f64;
    let slowdown = cpu.contention(active_cores);

    let mut st = ServiceTime::default();
    for (cat, wk) in w.iter() {
        let compute = wk.flops as f64 / flops_rate;
        let memory = wk.bytes as f64 * slowdown / per_core_bw;
        st.breakdown[cat.index()] = compute.max(memory);
    }
    st.total = st.breakdown.iter().sum();
    st
}

pub fn accel_service_time(model: &ModelSpec, query_size: usize, accel: &AcceleratorSpec) -> ServiceTime {
    assert!(query_size >= 1, "query_size must be >= 1");
    let w = work(model, query_size);
    let mut st = ServiceTime::default();
    for (cat, wk) in w.iter() {
        let compute = wk.flops as f64 / accel.flops_peak;
        let memory = wk.bytes as f64 / accel.mem_bandwidth;
        st.breakdown[cat.index()] = compute.max(memory);
    }
    let total = w.total();
    let compute = (total.flops as f64 / accel.flops_peak).max(total.bytes as f64 / accel.mem_bandwidth);
    let input_bytes = model.input_bytes_per_item() as f64 * query_size as f64;
    st.transfer = accel.transfer_fixed + accel.transfer_per_byte * input_bytes;
    st.total = st.transfer + compute;
    st
}

/// Largest batch probed by [`crossover_batch`].
pub const CROSSOVER_SCAN_MAX: usize = 1024;

/// Smallest batch in `1..=1024` where the accelerator beats one CPU core.
pub fn crossover_batch(
    model: &ModelSpec,
    cpu: &CpuPlatformSpec,
    accel: &AcceleratorSpec,
) -> Option<usize> {
    (1..=CROSSOVER_SCAN_MAX).find(|&b| {
        accel_service_time(model, b, accel).total < cpu_service_time(model, b, 1, cpu).total
    })
}

/// Provisioned power in watts; independent of utilization.
pub fn power(cpu: &CpuPlatformSpec, accel: Option<&AcceleratorSpec>) -> f64 {
    cpu.tdp + accel.map_or(0.0, |a| a.power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, EmbeddingConfig, LayerStack, Pooling, ZOO};

    fn pure_fc() -> ModelSpec {
        // Dense stack only; zero embedding tables. Activation bytes are
        // nonzero so the test zeroes them out via infinite bandwidth below.
        ModelSpec {
            name: "fc".into(),
            dense_fc: Some(LayerStack::new(vec![64, 64]).unwrap()),
            predict_fc: LayerStack::new(vec![1]).unwrap(),
            num_parallel_predict_stacks: 1,
            embeddings: EmbeddingConfig {
                num_tables: 0,
                lookups_per_table: 0,
                embedding_dim: 32,
                pooling: Pooling::Sum,
            },
            dense_input_dim: 128,
            recurrent_hidden_dim: None,
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
    }

    #[test]
    fn default_platform_constants() {
        let b = broadwell();
        let s = skylake();
        b.validate().unwrap();
        s.validate().unwrap();
        default_accelerator().validate().unwrap();
        assert!(close(b.flops_per_core_peak, 1.92e9));
        assert!(close(s.flops_per_core_peak, 3.2e9));
        assert!(close(b.mem_bandwidth_total, 60e9));
        assert!(close(s.mem_bandwidth_total, 90e9));
        assert_eq!((b.cores, s.cores), (28, 40));
    }

    #[test]
    fn saturated_compute_bound_time_is_flops_over_peak() {
        let mut cpu = skylake();
        cpu.mem_bandwidth_total = f64::INFINITY;
        let m = pure_fc();
        for batch in [128, 200, 1000] {
            let flops = work(&m, batch).total().flops as f64;
            let st = cpu_service_time(&m, batch, 1, &cpu);
            assert!(close(st.total, flops / cpu.flops_per_core_peak));
        }
    }

    #[test]
    fn no_contention_single_core_uses_full_bandwidth() {
        let mut cpu = broadwell();
        cpu.contention_coeff = 0.0;
        cpu.flops_per_core_peak = f64::INFINITY;
        let m = builtin_model("DLRM-RMC1").unwrap();
        let st = cpu_service_time(&m, 8, 1, &cpu);
        let bytes = work(&m, 8).total().bytes as f64;
        assert!(close(st.total, bytes / cpu.mem_bandwidth_total));
    }

    /// Spreadsheet-style recomputation of the RMC1 roofline at batch 64.
    #[test]
    fn rmc1_one_vs_all_cores_matches_hand_evaluation() {
        let cpu = broadwell();
        let m = builtin_model("DLRM-RMC1").unwrap();
        // (flops, bytes) per item, derived by hand from the layer widths:
        // dense 256->256->128->32, interaction 32+10*32=352,
        // predict 352->256->64->1, 10 tables x 80 lookups x 32 dims.
        let per_item: [(f64, f64); 4] = [
            (204_800.0, 4_224.0),  // DenseFC
            (213_120.0, 3_972.0),  // PredictFC
            (0.0, 102_400.0),      // EmbeddingLookup
            (25_600.0, 0.0),       // Pooling (fused sum)
        ];
        let interaction = (352.0, 2_816.0);
        let eval = |active: f64| {
            let b = 64.0;
            let rate = 1.92e9; // e(64) = 1 on Broadwell
            let c = 1.0 + 0.5 * (active - 1.0) / 27.0;
            let bw = 60e9 / active;
            per_item
                .iter()
                .chain(std::iter::once(&interaction))
                .map(|(f, by)| (f * b / rate).max(by * b * c / bw))
                .sum::<f64>()
        };
        let one = cpu_service_time(&m, 64, 1, &cpu).total;
        let all = cpu_service_time(&m, 64, 28, &cpu).total;
        assert!((one - eval(1.0)).abs() / one < 1e-12, "{one} vs {}", eval(1.0));
        assert!((all - eval(28.0)).abs() / all < 1e-12);
        let ratio = all / one;
        assert!((ratio - eval(28.0) / eval(1.0)).abs() < 1e-9);
        assert!(ratio > 1.0);
    }

    #[test]
    fn cpu_time_is_monotone() {
        for cpu in [broadwell(), skylake()] {
            for name in ZOO {
                let m = builtin_model(name).unwrap();
                let mut prev = 0.0;
                for b in 1..=300 {
                    let t = cpu_service_time(&m, b, 4, &cpu).total;
                    assert!(t >= prev, "{name} batch {b}");
                    prev = t;
                }
                let mut prev = 0.0;
                for a in 1..=cpu.cores {
                    let t = cpu_service_time(&m, 16, a, &cpu).total;
                    assert!(t >= prev, "{name} active {a}");
                    prev = t;
                }
            }
        }
    }

    #[test]
    fn per_item_time_non_increasing_for_compute_bound() {
        let mut cpu = broadwell();
        cpu.mem_bandwidth_total = f64::INFINITY;
        let m = pure_fc();
        let mut prev = f64::INFINITY;
        for b in 1..=256 {
            let per_item = cpu_service_time(&m, b, 1, &cpu).total / b as f64;
            assert!(per_item <= prev * (1.0 + 1e-12));
            prev = per_item;
        }
    }

    #[test]
    fn contention_hurts_broadwell_more() {
        let m = builtin_model("DLRM-RMC1").unwrap();
        let slowdown = |cpu: &CpuPlatformSpec| {
            cpu_service_time(&m, 64, cpu.cores, cpu).total / cpu_service_time(&m, 64, 1, cpu).total
        };
        let (b, s) = (broadwell(), skylake());
        assert!(b.contention_coeff > s.contention_coeff);
        // Per-core share of bandwidth also shrinks with core count, so compare
        // the contention factor itself and the end-to-end effect.
        assert!(b.contention(b.cores) > s.contention(s.cores));
        assert!(slowdown(&b) / b.cores as f64 > slowdown(&s) / s.cores as f64);
    }

    #[test]
    fn simd_saturates_later_on_skylake() {
        let first_full = |cpu: &CpuPlatformSpec| (1..).find(|&b| cpu.simd_efficiency(b) >= 1.0).unwrap();
        assert_eq!(first_full(&broadwell()), 32);
        assert_eq!(first_full(&skylake()), 128);
    }

    #[test]
    fn accel_has_fixed_cost_floor() {
        let acc = default_accelerator();
        for name in ZOO {
            let st = accel_service_time(&builtin_model(name).unwrap(), 1, &acc);
            assert!(st.total >= acc.transfer_fixed);
            assert!(st.transfer <= st.total);
        }
    }

    fn transfer_share(name: &str) -> f64 {
        let acc = default_accelerator();
        let m = builtin_model(name).unwrap();
        [16, 64, 256, 1024]
            .iter()
            .map(|&q| {
                let st = accel_service_time(&m, q, &acc);
                st.transfer / st.total
            })
            .sum::<f64>()
            / 4.0
    }

    #[test]
    fn rmc1_transfer_share_in_band() {
        let share = transfer_share("DLRM-RMC1");
        assert!((0.6..=0.8).contains(&share), "{share}");
    }

    #[test]
    fn wnd_crosses_over_before_rmc1() {
        let (cpu, acc) = (broadwell(), default_accelerator());
        let wnd = crossover_batch(&builtin_model("WND").unwrap(), &cpu, &acc).unwrap();
        let rmc1 = crossover_batch(&builtin_model("DLRM-RMC1").unwrap(), &cpu, &acc).unwrap();
        assert!(wnd < rmc1, "WND {wnd} vs RMC1 {rmc1}");
    }

    #[test]
    fn crossover_edge_cases() {
        let cpu = broadwell();
        let m = builtin_model("DLRM-RMC3").unwrap();
        let dominant = AcceleratorSpec {
            name: "dominant".into(),
            flops_peak: 10.0 * cpu.flops_per_core_peak,
            mem_bandwidth: 10.0 * cpu.mem_bandwidth_total,
            transfer_fixed: 0.0,
            transfer_per_byte: 0.0,
            power: 1.0,
        };
        assert_eq!(crossover_batch(&m, &cpu, &dominant), Some(1));

        let mut slow = default_accelerator();
        slow.transfer_fixed = 2.0 * cpu_service_time(&m, 1024, 1, &cpu).total;
        assert_eq!(crossover_batch(&m, &cpu, &slow), None);
    }

    #[test]
    fn power_accounting() {
        let acc = default_accelerator();
        assert_eq!(power(&broadwell(), None), 120.0);
        assert_eq!(power(&skylake(), None), 125.0);
        assert_eq!(power(&skylake(), Some(&acc)), 375.0);
    }

    #[test]
    fn lookup_by_name() {
        assert_eq!(cpu_platform("skylake").unwrap(), skylake());
        assert!(matches!(cpu_platform("zen4"), Err(Error::UnknownPlatform(_))));
        assert!(accelerator("default").is_ok());
    }
}
