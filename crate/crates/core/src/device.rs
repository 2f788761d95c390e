//! Coprocessor abstraction: phase-accounted transfers, device-side Top-K and
//! probe kernels, and the modeled (virtual clock) backend.
//!
//! Every device call returns a [`TransferLedger`] splitting its latency into
//! host-to-device transfer, kernel, device-to-host transfer and host
//! post-processing. Byte counts are always computed, never measured, so any
//! two backends agree on them exactly.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit;
use crate::host::{self, KeyHashTable, MatchPair, ProbeResult, TopKResult};
use crate::store::{
    full_row_bytes_for, key_only_bytes_for, KeyEntry, KeyVector, DEFAULT_MEMORY_BUDGET,
    ROW_ID_BYTES,
};

/// Bytes returned per Top-K row: one row identifier.
pub const TOPK_RESULT_BYTES: u64 = ROW_ID_BYTES;
/// Bytes returned per join match: probe and build row identifiers.
pub const MATCH_RESULT_BYTES: u64 = 2 * ROW_ID_BYTES;

/// Rows per chunk for the chunked selection kernel.
pub const KERNEL_CHUNK_ROWS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    #[default]
    KeyOnly,
    FullRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Modeled,
    Proxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceOp {
    TopK,
    Probe,
}

/// The size parameters of one device call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpShape {
    TopK {
        n: u64,
        k: u64,
    },
    Probe {
        build_n: u64,
        probe_n: u64,
        matches: u64,
    },
}

impl OpShape {
    pub fn op(&self) -> DeviceOp {
        match self {
            OpShape::TopK { .. } => DeviceOp::TopK,
            OpShape::Probe { .. } => DeviceOp::Probe,
        }
    }

    /// Rows that pass through the kernel.
    pub fn input_rows(&self) -> u64 {
        match *self {
            OpShape::TopK { n, .. } => n,
            OpShape::Probe {
                build_n, probe_n, ..
            } => build_n + probe_n,
        }
    }

    /// Rows handed back to the host.
    pub fn result_rows(&self) -> u64 {
        match *self {
            OpShape::TopK { n, k } => n.min(k),
            OpShape::Probe { matches, .. } => matches,
        }
    }

    pub fn h2d_bytes(&self, mode: TransferMode, payload_bytes: u32) -> u64 {
        let rows = self.input_rows();
        match mode {
            TransferMode::KeyOnly => key_only_bytes_for(rows),
            TransferMode::FullRow => full_row_bytes_for(rows, payload_bytes),
        }
    }

    pub fn d2h_bytes(&self) -> u64 {
        match self {
            OpShape::TopK { .. } => TOPK_RESULT_BYTES * self.result_rows(),
            OpShape::Probe { .. } => MATCH_RESULT_BYTES * self.result_rows(),
        }
    }
}

/// Bandwidths in bytes/s, everything else in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceProfile {
    pub h2d_bandwidth: f64,
    pub d2h_bandwidth: f64,
    /// Per kernel invocation.
    pub launch_overhead: f64,
    /// Per input row.
    pub kernel_rate_topk: f64,
    /// Per build or probe row.
    pub kernel_rate_probe: f64,
    /// Per returned row, spent on the host re-reading columns.
    pub post_rate: f64,
}

impl Default for DeviceProfile {
    /// An effective 2 GB/s staged link with a 2 ms fixed offload cost.
    fn default() -> Self {
        Self {
            h2d_bandwidth: 2.0e9,
            d2h_bandwidth: 2.0e9,
            launch_overhead: 2.0e-3,
            kernel_rate_topk: 2.0e-10,
            kernel_rate_probe: 5.0e-10,
            post_rate: 1.0e-6,
        }
    }
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            (
                self.h2d_bandwidth,
                "h2d_bandwidth must be positive and finite",
            ),
            (
                self.d2h_bandwidth,
                "d2h_bandwidth must be positive and finite",
            ),
            (
                self.launch_overhead,
                "launch_overhead must be positive and finite",
            ),
            (
                self.kernel_rate_topk,
                "kernel_rate_topk must be positive and finite",
            ),
            (
                self.kernel_rate_probe,
                "kernel_rate_probe must be positive and finite",
            ),
            (self.post_rate, "post_rate must be positive and finite"),
        ];
        for (value, msg) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidProfile(msg));
            }
        }
        Ok(())
    }

    pub fn kernel_rate(&self, op: DeviceOp) -> f64 {
        match op {
            DeviceOp::TopK => self.kernel_rate_topk,
            DeviceOp::Probe => self.kernel_rate_probe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransferLedger {
    pub h2d_bytes: u64,
    pub d2h_bytes: u64,
    pub t_h2d: f64,
    pub t_kernel: f64,
    pub t_d2h: f64,
    pub t_post: f64,
    pub total: f64,
}

impl TransferLedger {
    pub fn from_phases(
        h2d_bytes: u64,
        d2h_bytes: u64,
        t_h2d: f64,
        t_kernel: f64,
        t_d2h: f64,
        t_post: f64,
    ) -> Self {
        Self {
            h2d_bytes,
            d2h_bytes,
            t_h2d,
            t_kernel,
            t_d2h,
            t_post,
            total: t_h2d + t_kernel + t_d2h + t_post,
        }
    }

    /// Charges extra host post-processing (late materialization) to this call.
    pub fn add_post(&mut self, seconds: f64) {
        self.t_post += seconds;
        self.total = self.t_h2d + self.t_kernel + self.t_d2h + self.t_post;
    }

    /// Host-device transfer time, both directions.
    pub fn transfer(&self) -> f64 {
        self.t_h2d + self.t_d2h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCallResult<T> {
    pub payload: T,
    pub ledger: TransferLedger,
    pub backend: Backend,
}

/// A coprocessor able to run the two offloadable primitives.
///
/// Implementations must return exactly what [`host::host_topk`] and
/// [`host::host_hash_probe`] would, order included.
pub trait Device {
    fn backend(&self) -> Backend;

    fn topk(
        &self,
        keys: &KeyVector,
        k: usize,
        mode: TransferMode,
        payload_bytes: u32,
    ) -> Result<DeviceCallResult<TopKResult>>;

    fn probe(
        &self,
        build: &KeyVector,
        probe: &KeyVector,
        mode: TransferMode,
        payload_bytes: u32,
    ) -> Result<DeviceCallResult<ProbeResult>>;

    /// Cost of a call without running it, for backends that can price work
    /// exactly. Measuring backends return `None`.
    fn price(
        &self,
        _shape: OpShape,
        _mode: TransferMode,
        _payload_bytes: u32,
    ) -> Option<TransferLedger> {
        None
    }
}

/// Full-row transfers need a payload width to size the rows.
pub fn check_mode(mode: TransferMode, payload_bytes: u32) -> Result<()> {
    if mode == TransferMode::FullRow && payload_bytes == 0 {
        return Err(Error::InvalidConfig(
            "full-row transfers need a payload width",
        ));
    }
    Ok(())
}

/// Phase costs of a call under `profile`.
///
/// Full-row calls ship every column, so they need no late materialization
/// and carry `t_post == 0`.
pub fn estimate_device_cost(
    shape: OpShape,
    mode: TransferMode,
    payload_bytes: u32,
    profile: &DeviceProfile,
) -> TransferLedger {
    let h2d_bytes = shape.h2d_bytes(mode, payload_bytes);
    let d2h_bytes = shape.d2h_bytes();
    let t_h2d = h2d_bytes as f64 / profile.h2d_bandwidth;
    let t_kernel =
        profile.launch_overhead + profile.kernel_rate(shape.op()) * shape.input_rows() as f64;
    let t_d2h = d2h_bytes as f64 / profile.d2h_bandwidth;
    let t_post = match mode {
        TransferMode::KeyOnly => profile.post_rate * shape.result_rows() as f64,
        TransferMode::FullRow => 0.0,
    };
    TransferLedger::from_phases(h2d_bytes, d2h_bytes, t_h2d, t_kernel, t_d2h, t_post)
}

/// Per-chunk Top-K followed by a merge of the chunk winners. Every global
/// winner is a winner of its own chunk, so the merge is exact.
pub fn chunked_topk(entries: &[KeyEntry], k: usize, chunk_rows: usize) -> Vec<KeyEntry> {
    let chunk_rows = chunk_rows.max(1);
    let candidates: Vec<KeyEntry> = entries
        .chunks(chunk_rows)
        .flat_map(|chunk| host::top_entries(chunk, k))
        .collect();
    merge_topk(&candidates, k)
}

pub fn merge_topk(candidates: &[KeyEntry], k: usize) -> Vec<KeyEntry> {
    host::top_entries(candidates, k)
}

/// Virtual-clock device: runs the kernels for their answers and computes
/// every phase time from a [`DeviceProfile`]. Never sleeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeledDevice {
    profile: DeviceProfile,
}

impl ModeledDevice {
    pub fn new(profile: DeviceProfile) -> Result<Self> {
        profile.validate()?;
        Ok(Self { profile })
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.profile
    }
}

impl Device for ModeledDevice {
    fn backend(&self) -> Backend {
        Backend::Modeled
    }

    fn topk(
        &self,
        keys: &KeyVector,
        k: usize,
        mode: TransferMode,
        payload_bytes: u32,
    ) -> Result<DeviceCallResult<TopKResult>> {
        if k == 0 {
            return Err(Error::ZeroK);
        }
        check_mode(mode, payload_bytes)?;
        let winners = chunked_topk(keys.entries(), k, KERNEL_CHUNK_ROWS);
        let shape = OpShape::TopK {
            n: keys.source_rows() as u64,
            k: k as u64,
        };
        Ok(DeviceCallResult {
            payload: TopKResult {
                rows: winners.into_iter().map(|e| e.row).collect(),
                k_requested: k,
            },
            ledger: estimate_device_cost(shape, mode, payload_bytes, &self.profile),
            backend: Backend::Modeled,
        })
    }

    fn probe(
        &self,
        build: &KeyVector,
        probe: &KeyVector,
        mode: TransferMode,
        payload_bytes: u32,
    ) -> Result<DeviceCallResult<ProbeResult>> {
        check_mode(mode, payload_bytes)?;
        let table = KeyHashTable::build(build.entries(), DEFAULT_MEMORY_BUDGET)?;
        let mut matches: Vec<MatchPair> = Vec::new();
        for chunk in probe.entries().chunks(KERNEL_CHUNK_ROWS) {
            host::probe_into(&table, chunk, &mut matches);
        }
        let shape = OpShape::Probe {
            build_n: build.source_rows() as u64,
            probe_n: probe.source_rows() as u64,
            matches: matches.len() as u64,
        };
        Ok(DeviceCallResult {
            payload: ProbeResult {
                matches,
                probe_count: probe.source_rows(),
            },
            ledger: estimate_device_cost(shape, mode, payload_bytes, &self.profile),
            backend: Backend::Modeled,
        })
    }

    fn price(
        &self,
        shape: OpShape,
        mode: TransferMode,
        payload_bytes: u32,
    ) -> Option<TransferLedger> {
        Some(estimate_device_cost(
            shape,
            mode,
            payload_bytes,
            &self.profile,
        ))
    }
}

/// Modeled-backend Top-K under `profile`.
pub fn device_topk(
    keys: &KeyVector,
    k: usize,
    profile: &DeviceProfile,
    mode: TransferMode,
    payload_bytes: u32,
) -> Result<DeviceCallResult<TopKResult>> {
    ModeledDevice::new(*profile)?.topk(keys, k, mode, payload_bytes)
}

/// Modeled-backend join probe under `profile`.
pub fn device_probe(
    build: &KeyVector,
    probe: &KeyVector,
    profile: &DeviceProfile,
    mode: TransferMode,
    payload_bytes: u32,
) -> Result<DeviceCallResult<ProbeResult>> {
    ModeledDevice::new(*profile)?.probe(build, probe, mode, payload_bytes)
}

/// One observed device call, as input to [`calibrate_profile`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub op: DeviceOp,
    pub mode: TransferMode,
    /// Rows through the kernel (`N` for Top-K, build plus probe rows for a join).
    pub n: u64,
    pub ledger: TransferLedger,
}

impl ProfileSample {
    fn result_rows(&self) -> u64 {
        match self.op {
            DeviceOp::TopK => self.ledger.d2h_bytes / TOPK_RESULT_BYTES,
            DeviceOp::Probe => self.ledger.d2h_bytes / MATCH_RESULT_BYTES,
        }
    }
}

/// Smallest rate or overhead a calibration may report; keeps the profile
/// strictly positive when measured intercepts come out at or below zero.
pub const CALIBRATION_FLOOR: f64 = 1e-15;

/// Least-squares fit of a [`DeviceProfile`] from observed phase timings.
///
/// Bandwidths come from `t = bytes / bandwidth` fits through the origin, the
/// launch overhead and Top-K rate from a `t_kernel = launch + rate * n`
/// regression over Top-K samples, the probe rate from the same regression
/// over probe samples (falling back to the Top-K rate when fewer than three
/// probe sizes were observed), and the post rate from key-only samples.
/// Every fit minimizes relative residuals, so small calls weigh as much as
/// large ones.
pub fn calibrate_profile(samples: &[ProfileSample]) -> Result<DeviceProfile> {
    let topk: Vec<&ProfileSample> = samples.iter().filter(|s| s.op == DeviceOp::TopK).collect();
    if distinct(topk.iter().map(|s| s.n)) < 3 {
        return Err(Error::DegenerateFit(
            "need Top-K samples at three or more distinct sizes",
        ));
    }

    let h2d: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.ledger.h2d_bytes > 0)
        .map(|s| (s.ledger.h2d_bytes as f64, s.ledger.t_h2d))
        .collect();
    let d2h: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.ledger.d2h_bytes > 0)
        .map(|s| (s.ledger.d2h_bytes as f64, s.ledger.t_d2h))
        .collect();
    let h2d_secs_per_byte = fit::slope_through_origin_relative(&h2d)?;
    let d2h_secs_per_byte = fit::slope_through_origin_relative(&d2h)?;
    if h2d_secs_per_byte <= 0.0 || d2h_secs_per_byte <= 0.0 {
        return Err(Error::DegenerateFit(
            "transfer times do not grow with bytes",
        ));
    }

    let kernel_topk: Vec<(f64, f64)> = topk
        .iter()
        .map(|s| (s.n as f64, s.ledger.t_kernel))
        .collect();
    let (mut rate_topk, mut launch) = fit::least_squares_relative(&kernel_topk)?;
    if launch <= 0.0 {
        // launch cost is nonnegative; refit the rate alone
        rate_topk = fit::slope_through_origin_relative(&kernel_topk)?;
        launch = 0.0;
    }

    let probe: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.op == DeviceOp::Probe)
        .map(|s| (s.n as f64, s.ledger.t_kernel))
        .collect();
    let rate_probe = if distinct(probe.iter().map(|p| p.0.to_bits())) >= 3 {
        fit::least_squares_relative(&probe)?.0
    } else {
        rate_topk
    };

    let post: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.mode == TransferMode::KeyOnly && s.result_rows() > 0)
        .map(|s| (s.result_rows() as f64, s.ledger.t_post))
        .collect();
    let post_rate = fit::slope_through_origin_relative(&post)?;

    let profile = DeviceProfile {
        h2d_bandwidth: 1.0 / h2d_secs_per_byte,
        d2h_bandwidth: 1.0 / d2h_secs_per_byte,
        launch_overhead: launch.max(CALIBRATION_FLOOR),
        kernel_rate_topk: rate_topk.max(CALIBRATION_FLOOR),
        kernel_rate_probe: rate_probe.max(CALIBRATION_FLOOR),
        post_rate: post_rate.max(CALIBRATION_FLOOR),
    };
    profile.validate()?;
    Ok(profile)
}

fn distinct<I: Iterator<Item = u64>>(values: I) -> usize {
    let mut v: Vec<u64> = values.collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}
