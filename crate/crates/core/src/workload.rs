//! Query workloads and the strategy comparisons run over them.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::device::{Device, OpShape};
use crate::error::{Error, Result};
use crate::gate::{
    decide, execute_with, GateConfig, GateDecision, HostClock, Path, Query, Strategy,
};
use crate::stats::{compute_stats, LatencyStats};
use crate::store::{generate_table, DEFAULT_PAYLOAD_BYTES};

pub const DEFAULT_N_GRID: [u64; 7] = [
    1_000, 10_000, 20_000, 100_000, 500_000, 1_000_000, 3_000_000,
];
pub const DEFAULT_K: usize = 100;
pub const DEFAULT_REPEATS: usize = 31;

/// A weighted draw over the size grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMix {
    /// One nonnegative weight per grid entry.
    pub weights: Vec<f64>,
    /// Number of queries drawn.
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub n_grid: Vec<u64>,
    pub k: usize,
    pub repeats: usize,
    pub payload_bytes: u32,
    /// When present, queries are drawn from the grid by weight instead of
    /// running `repeats` queries per size.
    pub mix: Option<QueryMix>,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            n_grid: DEFAULT_N_GRID.to_vec(),
            k: DEFAULT_K,
            repeats: DEFAULT_REPEATS,
            payload_bytes: DEFAULT_PAYLOAD_BYTES,
            mix: None,
            seed: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(Error::InvalidConfig("n_grid must not be empty"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("n_grid must be strictly increasing"));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::ZeroK);
        }
        if self.payload_bytes == 0 {
            return Err(Error::ZeroPayloadWidth);
        }
        if let Some(mix) = &self.mix {
            if mix.weights.len() != self.n_grid.len() {
                return Err(Error::InvalidConfig("mix needs one weight per grid size"));
            }
            if mix.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
                || !(mix.weights.iter().sum::<f64>() > 0.0)
            {
                return Err(Error::InvalidConfig(
                    "mix weights must be nonnegative with a positive sum",
                ));
            }
            if mix.queries == 0 {
                return Err(Error::InvalidConfig("mix must draw at least one query"));
            }
        }
        Ok(())
    }

    /// Normalized weight of each grid entry.
    pub fn grid_weights(&self) -> Vec<f64> {
        match &self.mix {
            Some(mix) => {
                let total: f64 = mix.weights.iter().sum();
                mix.weights.iter().map(|w| w / total).collect()
            }
            None => alloc::vec![1.0 / self.n_grid.len() as f64; self.n_grid.len()],
        }
    }

    /// Sizes of the measured queries, in draw order.
    pub fn query_sizes(&self) -> Vec<u64> {
        match &self.mix {
            None => self
                .n_grid
                .iter()
                .flat_map(|&n| core::iter::repeat_n(n, self.repeats))
                .collect(),
            Some(mix) => {
                let weights = self.grid_weights();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                (0..mix.queries)
                    .map(|_| {
                        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                        let mut acc = 0.0;
                        for (&n, w) in self.n_grid.iter().zip(&weights) {
                            acc += w;
                            if u < acc {
                                return n;
                            }
                        }
                        // rounding left u above the last cumulative weight
                        self.n_grid[weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)]
                    })
                    .collect()
            }
        }
    }

    /// Seed of the table generated for size `n`.
    pub fn table_seed(&self, n: u64) -> u64 {
        self.seed ^ n.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub per_n: BTreeMap<u64, LatencyStats>,
    /// Over every measured query.
    pub overall: LatencyStats,
    /// Fraction of measured queries that ran on the device.
    pub offload_rate: f64,
    /// The gate's verdict for every measured query, in execution order.
    pub decisions: Vec<GateDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub host_only: StrategyRun,
    pub device_always: StrategyRun,
    pub gated: StrategyRun,
}

impl StrategyComparison {
    pub fn runs(&self) -> [&StrategyRun; 3] {
        [&self.host_only, &self.device_always, &self.gated]
    }
}

#[derive(Default)]
struct Collector {
    per_n: BTreeMap<u64, Vec<f64>>,
    all: Vec<f64>,
    on_device: usize,
    decisions: Vec<GateDecision>,
}

impl Collector {
    fn finish(self, strategy: Strategy) -> Result<StrategyRun> {
        let per_n = self
            .per_n
            .into_iter()
            .map(|(n, s)| Ok((n, compute_stats(&s)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(StrategyRun {
            strategy,
            per_n,
            offload_rate: self.on_device as f64 / self.all.len() as f64,
            overall: compute_stats(&self.all)?,
            decisions: self.decisions,
        })
    }
}

/// Runs the same Top-K query sequence under host-only, always-device and
/// gated dispatch.
///
/// Queries are grouped by size: one table per size, one unmeasured warmup
/// execution per strategy, then the measured executions. Every execution's
/// answer is compared across the three strategies; any disagreement aborts
/// with [`Error::ResultMismatch`].
pub fn run_strategy_comparison<D: Device, C: HostClock>(
    spec: &WorkloadSpec,
    config: &GateConfig,
    device: &D,
    clock: &C,
) -> Result<StrategyComparison> {
    spec.validate()?;
    config.validate()?;
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for n in spec.query_sizes() {
        *counts.entry(n).or_default() += 1;
    }

    let mut collectors: [Collector; 3] = Default::default();
    for (&n, &count) in &counts {
        let table = generate_table(n, spec.payload_bytes, spec.table_seed(n))?;
        let query = Query::TopK {
            table: &table,
            k: spec.k,
        };
        for round in 0..=count {
            let mut reference = None;
            for (strategy, collector) in Strategy::ALL.into_iter().zip(collectors.iter_mut()) {
                let exec = execute_with(strategy, query, config, device, clock)?;
                match &reference {
                    None => reference = Some(exec.output.clone()),
                    Some(r) if *r != exec.output => return Err(Error::ResultMismatch { n }),
                    Some(_) => {}
                }
                if round == 0 {
                    continue; // warmup
                }
                collector
                    .per_n
                    .entry(n)
                    .or_default()
                    .push(exec.observed_latency);
                collector.all.push(exec.observed_latency);
                collector.on_device += usize::from(exec.path == Path::Device);
                collector.decisions.push(exec.decision);
            }
        }
    }

    let [host_only, device_always, gated] = collectors;
    Ok(StrategyComparison {
        host_only: host_only.finish(Strategy::HostOnly)?,
        device_always: device_always.finish(Strategy::DeviceAlways)?,
        gated: gated.finish(Strategy::Gated)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub margin: f64,
    /// Weighted fraction of grid sizes dispatched to the device.
    pub offload_rate: f64,
    /// Smallest grid size dispatched to the device.
    pub switch_n: Option<u64>,
}

/// Evaluates the gate over the Top-K size grid at each margin. Pure; nothing
/// is executed.
pub fn run_margin_sweep(
    spec: &WorkloadSpec,
    config: &GateConfig,
    margins: &[f64],
) -> Result<Vec<MarginRow>> {
    spec.validate()?;
    config.validate()?;
    let weights = spec.grid_weights();
    margins
        .iter()
        .map(|&margin| {
            let cfg = GateConfig { margin, ..*config };
            cfg.validate()?;
            let mut offload_rate = 0.0;
            let mut switch_n = None;
            for (&n, w) in spec.n_grid.iter().zip(&weights) {
                let shape = OpShape::TopK {
                    n,
                    k: spec.k as u64,
                };
                if decide(&cfg, shape, spec.payload_bytes).path == Path::Device {
                    offload_rate += w;
                    switch_n.get_or_insert(n);
                }
            }
            Ok(MarginRow {
                margin,
                offload_rate,
                switch_n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::ModeledDevice;
    use crate::gate::VirtualClock;

    fn small_spec(grid: &[u64]) -> WorkloadSpec {
        WorkloadSpec {
            n_grid: grid.to_vec(),
            repeats: 3,
            payload_bytes: 8,
            ..WorkloadSpec::default()
        }
    }

    #[test]
    fn validation() {
        assert!(WorkloadSpec::default().validate().is_ok());
        assert!(small_spec(&[]).validate().is_err());
        assert!(small_spec(&[10, 10]).validate().is_err());
        assert!(small_spec(&[10, 5]).validate().is_err());
        let mut s = small_spec(&[10]);
        s.repeats = 0;
        assert!(s.validate().is_err());
        let mut s = small_spec(&[10, 20]);
        s.mix = Some(QueryMix {
            weights: alloc::vec![1.0],
            queries: 5,
        });
        assert!(s.validate().is_err());
        s.mix = Some(QueryMix {
            weights: alloc::vec![0.0, 0.0],
            queries: 5,
        });
        assert!(s.validate().is_err());
    }

    #[test]
    fn mixed_sizes_follow_weights() {
        let mut s = small_spec(&[10, 20, 30]);
        s.mix = Some(QueryMix {
            weights: alloc::vec![8.0, 0.0, 2.0],
            queries: 5000,
        });
        let sizes = s.query_sizes();
        assert_eq!(sizes.len(), 5000);
        assert!(!sizes.contains(&20));
        let small = sizes.iter().filter(|&&n| n == 10).count() as f64 / 5000.0;
        assert!((small - 0.8).abs() < 0.03);
        assert_eq!(sizes, s.query_sizes());
    }

    #[test]
    fn fixed_sizes_repeat() {
        assert_eq!(small_spec(&[5, 7]).query_sizes(), [5, 5, 5, 7, 7, 7]);
    }

    #[test]
    fn comparison_shapes() {
        let cfg = GateConfig::default();
        let device = ModeledDevice::new(cfg.profile).unwrap();
        let clock = VirtualClock::new(cfg.cpu_model);
        let spec = small_spec(&[1000, 200_000]);
        let cmp = run_strategy_comparison(&spec, &cfg, &device, &clock).unwrap();
        assert_eq!(cmp.host_only.offload_rate, 0.0);
        assert_eq!(cmp.device_always.offload_rate, 1.0);
        assert_eq!(cmp.gated.offload_rate, 0.5);
        for run in cmp.runs() {
            assert_eq!(run.overall.samples.len(), 6);
            assert_eq!(run.decisions.len(), 6);
            assert_eq!(run.per_n.len(), 2);
        }
    }

    #[test]
    fn margin_sweep_extremes() {
        let spec = small_spec(&DEFAULT_N_GRID);
        let rows = run_margin_sweep(&spec, &GateConfig::default(), &[0.0, 1e9]).unwrap();
        assert!(rows[0].offload_rate > 0.0);
        assert_eq!(rows[1].offload_rate, 0.0);
        assert_eq!(rows[1].switch_n, None);
        assert!(run_margin_sweep(&spec, &GateConfig::default(), &[-1.0]).is_err());
    }
}
