//! Benchmark drivers behind the figure data.
//!
//! Every driver executes queries one at a time and drops the first execution
//! of each cell as warmup. The same functions serve both worlds: with a
//! [`ModeledDevice`] and a [`VirtualClock`] every number is computed, with a
//! [`ProxyDevice`] and a [`WallClock`] every number is measured.

use std::hint::black_box;

use golp_core::fit::{geometric_grid, DeviceTerms};
use golp_core::workload::{run_margin_sweep, run_strategy_comparison, StrategyComparison};
use golp_core::{
    calibrate_cpu_model, calibrate_profile, compute_stats, execute_with, extract_keys,
    generate_table, host_full_sort, host_topk, solve_break_even, Backend, BreakEven, CpuCostModel,
    CpuOp, CpuSample, Device, DeviceOp, DeviceProfile, Error, FitResult, GateConfig, HostCharge,
    HostClock, LatencyStats, MarginRow, ModeledDevice, OpShape, ProfileSample, Query, Result,
    Strategy, SweepPoint, TransferLedger, TransferMode, VirtualClock, WorkloadSpec,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::proxy::{repeats_for_resolution, timer_resolution, ProxyDevice, WallClock};

/// Grid step of the break-even sweep when the backend can price points.
pub const PRICED_SWEEP_STEP: f64 = 0.01;
/// Grid step of the break-even sweep when every point must be measured.
pub const MEASURED_SWEEP_STEP: f64 = 0.25;
/// Repeats per point of a measured break-even sweep.
pub const MEASURED_SWEEP_REPEATS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n: u64,
    pub op: CpuOp,
    pub stats: LatencyStats,
}

/// Host full sort and host Top-K over the size grid.
pub fn run_scaling_baseline<C: HostClock>(
    spec: &WorkloadSpec,
    clock: &C,
) -> Result<Vec<ScalingRow>> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(2 * spec.n_grid.len());
    for &n in &spec.n_grid {
        let table = generate_table(n, spec.payload_bytes, spec.table_seed(n))?;
        let keys = extract_keys(&table);
        drop(table);
        let sort_charge = HostCharge::Primitive {
            op: CpuOp::FullSort,
            n,
            k: 0,
        };
        let topk_charge = HostCharge::Primitive {
            op: CpuOp::TopK,
            n,
            k: spec.k as u64,
        };
        let mut sort = Vec::with_capacity(spec.repeats);
        let mut topk = Vec::with_capacity(spec.repeats);
        for round in 0..=spec.repeats {
            let (_, t_sort) =
                clock.time(sort_charge, || black_box(host_full_sort(black_box(&keys))));
            let (r, t_topk) = clock.time(topk_charge, || {
                black_box(host_topk(black_box(&keys), spec.k))
            });
            r?;
            if round > 0 {
                sort.push(t_sort);
                topk.push(t_topk);
            }
        }
        rows.push(ScalingRow {
            n,
            op: CpuOp::FullSort,
            stats: compute_stats(&sort)?,
        });
        rows.push(ScalingRow {
            n,
            op: CpuOp::TopK,
            stats: compute_stats(&topk)?,
        });
    }
    Ok(rows)
}

/// Per-phase medians of a set of ledgers. Phases are summarized
/// independently, so `total` is the median total, not the sum of medians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseMedians {
    pub t_h2d: f64,
    pub t_kernel: f64,
    pub t_d2h: f64,
    pub t_post: f64,
    pub total: f64,
}

impl PhaseMedians {
    fn of(ledgers: &[TransferLedger]) -> Result<Self> {
        let median = |f: fn(&TransferLedger) -> f64| -> Result<f64> {
            Ok(compute_stats(&ledgers.iter().map(f).collect::<Vec<_>>())?.median)
        };
        Ok(Self {
            t_h2d: median(|l| l.t_h2d)?,
            t_kernel: median(|l| l.t_kernel)?,
            t_d2h: median(|l| l.t_d2h)?,
            t_post: median(|l| l.t_post)?,
            total: median(|l| l.total)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferRow {
    pub n: u64,
    pub mode: TransferMode,
    pub h2d_bytes: u64,
    pub d2h_bytes: u64,
    pub phases: PhaseMedians,
    /// Median of `t_h2d + t_d2h` per call.
    pub transfer: f64,
    /// End-to-end latency of the device path, late materialization included.
    pub e2e: LatencyStats,
    #[serde(skip)]
    pub ledgers: Vec<TransferLedger>,
}

impl TransferRow {
    pub fn profile_samples(&self) -> impl Iterator<Item = ProfileSample> + '_ {
        self.ledgers.iter().map(|&ledger| ProfileSample {
            op: DeviceOp::TopK,
            mode: self.mode,
            n: self.n,
            ledger,
        })
    }
}

/// Device-path Top-K in full-row and key-only mode over the size grid.
///
/// Both modes must return the same answer; a difference aborts with
/// [`Error::ResultMismatch`].
pub fn run_payload_comparison<D: Device, C: HostClock>(
    spec: &WorkloadSpec,
    gate: &GateConfig,
    device: &D,
    clock: &C,
) -> Result<Vec<TransferRow>> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(2 * spec.n_grid.len());
    for &n in &spec.n_grid {
        let table = generate_table(n, spec.payload_bytes, spec.table_seed(n))?;
        let query = Query::TopK {
            table: &table,
            k: spec.k,
        };
        let mut reference = None;
        for mode in [TransferMode::FullRow, TransferMode::KeyOnly] {
            let cfg = GateConfig { mode, ..*gate };
            let mut ledgers = Vec::with_capacity(spec.repeats);
            let mut e2e = Vec::with_capacity(spec.repeats);
            for round in 0..=spec.repeats {
                let exec = execute_with(Strategy::DeviceAlways, query, &cfg, device, clock)?;
                match &reference {
                    None => reference = Some(exec.output.clone()),
                    Some(r) if *r != exec.output => return Err(Error::ResultMismatch { n }),
                    Some(_) => {}
                }
                if round > 0 {
                    ledgers.push(exec.ledger.expect("device path records a ledger"));
                    e2e.push(exec.observed_latency);
                }
            }
            let shape = OpShape::TopK {
                n,
                k: spec.k as u64,
            };
            let transfer: Vec<f64> = ledgers.iter().map(TransferLedger::transfer).collect();
            rows.push(TransferRow {
                n,
                mode,
                h2d_bytes: shape.h2d_bytes(mode, spec.payload_bytes),
                d2h_bytes: shape.d2h_bytes(),
                phases: PhaseMedians::of(&ledgers)?,
                transfer: compute_stats(&transfer)?.median,
                e2e: compute_stats(&e2e)?,
                ledgers,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakEvenReport {
    /// `(n, seconds)` behind the host curve: full-sort medians.
    pub cpu_points: Vec<(f64, f64)>,
    /// `(n, seconds)` behind the transfer curve: key-only `t_h2d + t_d2h` medians.
    pub tx_points: Vec<(f64, f64)>,
    pub fit: FitResult,
    pub terms: DeviceTerms,
    /// `None` when the fitted curves never cross.
    pub break_even: Option<BreakEven>,
    pub sweep: Vec<SweepPoint>,
}

impl BreakEvenReport {
    pub fn n_star(&self) -> Option<f64> {
        self.break_even.map(|b| b.n_star)
    }

    pub fn relative_error(&self) -> Option<f64> {
        self.break_even.and_then(|b| b.relative_error)
    }
}

/// Fits the host and transfer curves, solves for the crossover and checks it
/// against a sweep of host full sort versus key-only device Top-K.
///
/// The sweep is priced on a 1% grid when both the clock and the device can
/// price work, and measured on a coarser grid otherwise.
pub fn run_break_even<D: Device, C: HostClock>(
    spec: &WorkloadSpec,
    gate: &GateConfig,
    scaling: &[ScalingRow],
    transfers: &[TransferRow],
    device: &D,
    clock: &C,
) -> Result<BreakEvenReport> {
    let cpu_points: Vec<(f64, f64)> = scaling
        .iter()
        .filter(|r| r.op == CpuOp::FullSort)
        .map(|r| (r.n as f64, r.stats.median))
        .collect();
    let tx_points: Vec<(f64, f64)> = transfers
        .iter()
        .filter(|r| r.mode == TransferMode::KeyOnly)
        .map(|r| (r.n as f64, r.transfer))
        .collect();
    let fit = FitResult::fit(&cpu_points, &tx_points)?;
    let terms = DeviceTerms::topk(&gate.profile, spec.k as u64);
    let sweep = break_even_sweep(spec, gate, device, clock)?;
    let break_even = match solve_break_even(&fit, &terms) {
        Ok(b) => Some(b.validated(&sweep).unwrap_or(b)),
        Err(Error::NoCrossing) => None,
        Err(e) => return Err(e),
    };
    Ok(BreakEvenReport {
        cpu_points,
        tx_points,
        fit,
        terms,
        break_even,
        sweep,
    })
}

fn break_even_sweep<D: Device, C: HostClock>(
    spec: &WorkloadSpec,
    gate: &GateConfig,
    device: &D,
    clock: &C,
) -> Result<Vec<SweepPoint>> {
    let (lo, hi) = (spec.n_grid[0], *spec.n_grid.last().unwrap());
    let k = spec.k as u64;
    let priced = |n: u64| -> Option<SweepPoint> {
        let host = clock.price(HostCharge::Primitive {
            op: CpuOp::FullSort,
            n,
            k: 0,
        })?;
        let dev = device.price(
            OpShape::TopK { n, k },
            TransferMode::KeyOnly,
            spec.payload_bytes,
        )?;
        Some(SweepPoint {
            n: n as f64,
            host_seconds: host,
            device_seconds: dev.total,
        })
    };
    if priced(lo).is_some() {
        return Ok(geometric_grid(lo, hi, PRICED_SWEEP_STEP)
            .into_iter()
            .filter_map(priced)
            .collect());
    }

    let cfg = GateConfig {
        mode: TransferMode::KeyOnly,
        ..*gate
    };
    let repeats = spec.repeats.min(MEASURED_SWEEP_REPEATS);
    let mut points = Vec::new();
    for n in geometric_grid(lo, hi, MEASURED_SWEEP_STEP) {
        let table = generate_table(n, spec.payload_bytes, spec.table_seed(n))?;
        let keys = extract_keys(&table);
        let charge = HostCharge::Primitive {
            op: CpuOp::FullSort,
            n,
            k: 0,
        };
        let query = Query::TopK {
            table: &table,
            k: spec.k,
        };
        let mut host = Vec::with_capacity(repeats);
        let mut dev = Vec::with_capacity(repeats);
        for round in 0..=repeats {
            let (_, t) = clock.time(charge, || black_box(host_full_sort(black_box(&keys))));
            let exec = execute_with(Strategy::DeviceAlways, query, &cfg, device, clock)?;
            if round > 0 {
                host.push(t);
                dev.push(exec.observed_latency);
            }
        }
        points.push(SweepPoint {
            n: n as f64,
            host_seconds: compute_stats(&host)?.median,
            device_seconds: compute_stats(&dev)?.median,
        });
    }
    Ok(points)
}

/// Per-size gated offload rate, derived from the (pure) gate decision.
pub fn gated_offload_at(gate: &GateConfig, spec: &WorkloadSpec, n: u64) -> f64 {
    let shape = OpShape::TopK {
        n,
        k: spec.k as u64,
    };
    let d = golp_core::decide(gate, shape, spec.payload_bytes);
    f64::from(u8::from(d.path == golp_core::Path::Device))
}

/// Everything one benchmark run produces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub backend: Backend,
    pub workload: WorkloadSpec,
    /// Gate used for strategies and the margin sweep; calibrated on proxy runs.
    pub gate: GateConfig,
    pub scaling: Vec<ScalingRow>,
    pub transfers: Vec<TransferRow>,
    pub break_even: Option<BreakEvenReport>,
    pub strategies: Option<StrategyComparison>,
    pub margins: Vec<MarginRow>,
}

impl BenchReport {
    /// A report with no measurements, for exporting header-only files.
    pub fn empty(backend: Backend, workload: WorkloadSpec, gate: GateConfig) -> Self {
        Self {
            backend,
            workload,
            gate,
            scaling: Vec::new(),
            transfers: Vec::new(),
            break_even: None,
            strategies: None,
            margins: Vec::new(),
        }
    }
}

/// Full pipeline on one backend: scaling, payload comparison, break-even,
/// strategy comparison and margin sweep.
pub fn run_bench_with<D: Device, C: HostClock>(
    backend: Backend,
    workload: &WorkloadSpec,
    gate: &GateConfig,
    margins: &[f64],
    device: &D,
    clock: &C,
) -> Result<BenchReport> {
    let scaling = run_scaling_baseline(workload, clock)?;
    let transfers = run_payload_comparison(workload, gate, device, clock)?;

    let gate = if backend == Backend::Proxy {
        calibrated_gate(gate, workload, &scaling, &transfers)?
    } else {
        *gate
    };
    let break_even = run_break_even(workload, &gate, &scaling, &transfers, device, clock)?;
    let strategies = run_strategy_comparison(workload, &gate, device, clock)?;
    let margins = run_margin_sweep(workload, &gate, margins)?;
    Ok(BenchReport {
        backend,
        workload: workload.clone(),
        gate,
        scaling,
        transfers,
        break_even: Some(break_even),
        strategies: Some(strategies),
        margins,
    })
}

/// Gate whose cost model and profile are fitted to measured timings: the
/// host model from Top-K medians, the profile from the device ledgers taken
/// in the gate's transfer mode.
pub fn calibrated_gate(
    gate: &GateConfig,
    spec: &WorkloadSpec,
    scaling: &[ScalingRow],
    transfers: &[TransferRow],
) -> Result<GateConfig> {
    let samples: Vec<CpuSample> = scaling
        .iter()
        .filter(|r| r.op == CpuOp::TopK)
        .map(|r| CpuSample {
            op: CpuOp::TopK,
            n: r.n,
            k: spec.k as u64,
            seconds: r.stats.median,
        })
        .collect();
    let cpu_model: CpuCostModel = calibrate_cpu_model(&samples)?;
    let profiles: Vec<ProfileSample> = transfers
        .iter()
        .filter(|r| r.mode == gate.mode)
        .flat_map(TransferRow::profile_samples)
        .collect();
    let profile: DeviceProfile = calibrate_profile(&profiles)?;
    Ok(GateConfig {
        cpu_model,
        profile,
        ..*gate
    })
}

/// Runs `config` on its backend.
pub fn run_bench(config: &RunConfig) -> crate::Result<BenchReport> {
    config.validate()?;
    match config.backend {
        Backend::Modeled => {
            let device = ModeledDevice::new(config.gate.profile)?;
            let clock = VirtualClock::new(config.gate.cpu_model);
            Ok(run_bench_with(
                Backend::Modeled,
                &config.workload,
                &config.gate,
                &config.margins,
                &device,
                &clock,
            )?)
        }
        Backend::Proxy => {
            let device = ProxyDevice::new(config.workers.unwrap_or(0))?;
            let mut workload = config.workload.clone();
            workload.repeats = repeats_for_resolution(workload.repeats, timer_resolution());
            Ok(run_bench_with(
                Backend::Proxy,
                &workload,
                &config.gate,
                &config.margins,
                &device,
                &WallClock,
            )?)
        }
    }
}
