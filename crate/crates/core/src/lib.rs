//! Hybrid host/coprocessor execution kernel for two OLAP primitives:
//! Top-K selection and key-based join probe.
//!
//! * [`store`] holds the columnar table, extracts `(key, row)` vectors and
//!   materializes result rows late.
//! * [`host`] has the host baselines (full sort, bounded-heap Top-K, key-only
//!   hash build and probe).
//! * [`device`] abstracts the coprocessor: phase-accounted transfers, the
//!   device kernels, and a modeled backend driven by a [`DeviceProfile`].
//! * [`gate`] is the dispatch policy comparing estimated host and device
//!   costs under a margin and an optional small-input guard.
//! * [`fit`] fits measured cost curves and solves for the break-even size.
//! * [`workload`] and [`stats`] drive strategy comparisons and summarize
//!   latency with nearest-rank percentiles.
//!
//! The crate is `no_std` and needs only `alloc`. Wall-clock timing, the
//! thread-parallel proxy device, file formats and the CLI live in the `golp`
//! crate.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is how NaN gets rejected alongside the range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod device;
pub mod error;
pub mod fit;
pub mod gate;
pub mod host;
pub mod stats;
pub mod store;
pub mod workload;

pub use device::{
    calibrate_profile, device_probe, device_topk, estimate_device_cost, Backend, Device,
    DeviceCallResult, DeviceOp, DeviceProfile, ModeledDevice, OpShape, ProfileSample,
    TransferLedger, TransferMode,
};
pub use error::{Error, Result};
pub use fit::{
    fit_linear, fit_nlogn, solve_break_even, validate_break_even, BreakEven, DeviceTerms,
    FitResult, LinearFit, SweepPoint,
};
pub use gate::{
    calibrate_cpu_model, decide, estimate_cpu_cost, execute_gated, execute_with, CpuCostModel,
    CpuOp, CpuSample, Execution, GateConfig, GateDecision, HostCharge, HostClock, Path, Query,
    QueryOutput, Strategy, VirtualClock,
};
pub use host::{
    host_full_sort, host_hash_build, host_hash_probe, host_topk, KeyHashTable, MatchPair,
    ProbeResult, TopKResult,
};
pub use stats::{compute_stats, LatencyStats};
pub use store::{
    extract_keys, full_row_bytes, generate_table, materialize, ColumnTable, KeyEntry, KeyVector,
    MaterializedResult, RowId, TableSpec,
};
pub use workload::{
    run_margin_sweep, run_strategy_comparison, MarginRow, QueryMix, StrategyRun, WorkloadSpec,
};
