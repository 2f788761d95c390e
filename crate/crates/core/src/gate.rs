//! The dispatch policy ("risky gate") and gated execution.
//!
//! A query goes to the device only when no small-input guard applies and the
//! estimated host cost exceeds the estimated end-to-end device cost by more
//! than the configured margin. Ties go to the host.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::device::{estimate_device_cost, Device, OpShape, TransferLedger, TransferMode};
use crate::error::{Error, Result};
use crate::fit::{self, n_log2_n};
use crate::host::{host_hash_build, host_hash_probe, host_topk, ProbeResult};
use crate::store::{extract_keys, materialize, ColumnTable, MaterializedResult, RowId};

/// Host cost coefficients, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpuCostModel {
    /// Per `n * log2(n)` unit.
    pub alpha_sort: f64,
    pub beta_sort: f64,
    /// Per `n * k` unit.
    pub alpha_match: f64,
    pub beta_match: f64,
}

impl Default for CpuCostModel {
    fn default() -> Self {
        Self {
            alpha_sort: 1.0e-9,
            beta_sort: 5.0e-5,
            alpha_match: 2.0e-9,
            beta_match: 5.0e-5,
        }
    }
}

impl CpuCostModel {
    pub fn validate(&self) -> Result<()> {
        let coeffs = [
            self.alpha_sort,
            self.beta_sort,
            self.alpha_match,
            self.beta_match,
        ];
        if coeffs.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidConfig(
                "cpu cost coefficients must be finite and nonnegative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpuOp {
    FullSort,
    TopK,
    Probe,
}

/// `alpha_sort * n * log2(max(n, 2)) + beta_sort` for the sort family,
/// `alpha_match * n * k + beta_match` for probes (`k` is the per-row
/// candidate factor, at least 1).
pub fn estimate_cpu_cost(model: &CpuCostModel, op: CpuOp, n: u64, k: u64) -> f64 {
    match op {
        CpuOp::FullSort | CpuOp::TopK => model.alpha_sort * n_log2_n(n as f64) + model.beta_sort,
        CpuOp::Probe => model.alpha_match * n as f64 * k.max(1) as f64 + model.beta_match,
    }
}

/// Host cost-model inputs for a device-shaped query. For a probe, `n` is
/// build plus probe rows and `k` is matches per probe row, rounded up.
pub fn cpu_terms(shape: OpShape) -> (CpuOp, u64, u64) {
    match shape {
        OpShape::TopK { n, k } => (CpuOp::TopK, n, k),
        OpShape::Probe {
            build_n,
            probe_n,
            matches,
        } => {
            let factor = if probe_n == 0 {
                1
            } else {
                matches.div_ceil(probe_n).max(1)
            };
            (CpuOp::Probe, build_n + probe_n, factor)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpuSample {
    pub op: CpuOp,
    pub n: u64,
    pub k: u64,
    pub seconds: f64,
}

/// Fits a [`CpuCostModel`] from timings. The sort family (full sort and
/// Top-K) uses basis `{n log2 n, 1}`, the match family `{n k, 1}`; both keep
/// nonnegative coefficients. A family without samples gets zero coefficients.
pub fn calibrate_cpu_model(samples: &[CpuSample]) -> Result<CpuCostModel> {
    let sort: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| matches!(s.op, CpuOp::FullSort | CpuOp::TopK))
        .map(|s| (s.n as f64, s.seconds))
        .collect();
    let matching: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.op == CpuOp::Probe)
        .map(|s| (s.n as f64 * s.k.max(1) as f64, s.seconds))
        .collect();
    if sort.is_empty() && matching.is_empty() {
        return Err(Error::DegenerateFit("no samples"));
    }
    let family = |points: &[(f64, f64)], basis: fn(f64) -> f64| -> Result<(f64, f64)> {
        if points.is_empty() {
            return Ok((0.0, 0.0));
        }
        if distinct(points) < 3 {
            return Err(Error::DegenerateFit(
                "need three or more distinct sizes per family",
            ));
        }
        let f = fit::fit_basis_nonneg(points, basis)?;
        Ok((f.slope, f.intercept))
    };
    let (alpha_sort, beta_sort) = family(&sort, n_log2_n)?;
    let (alpha_match, beta_match) = family(&matching, |x| x)?;
    if !(alpha_sort > 0.0 || alpha_match > 0.0) {
        return Err(Error::DegenerateFit("timings do not grow with input size"));
    }
    Ok(CpuCostModel {
        alpha_sort,
        beta_sort,
        alpha_match,
        beta_match,
    })
}

fn distinct(points: &[(f64, f64)]) -> usize {
    let mut xs: Vec<u64> = points.iter().map(|p| p.0.to_bits()).collect();
    xs.sort_unstable();
    xs.dedup();
    xs.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    /// Seconds of estimated gain required before offloading.
    #[serde(rename = "margin_s")]
    pub margin: f64,
    /// Inputs smaller than this always stay on the host.
    pub min_n_guard: Option<u64>,
    pub cpu_model: CpuCostModel,
    pub profile: crate::device::DeviceProfile,
    pub mode: TransferMode,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            margin: 0.0,
            min_n_guard: None,
            cpu_model: CpuCostModel::default(),
            profile: crate::device::DeviceProfile::default(),
            mode: TransferMode::KeyOnly,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::InvalidConfig("margin must be nonnegative"));
        }
        self.cpu_model.validate()?;
        self.profile.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Path {
    Host,
    Device,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub path: Path,
    pub c_cpu_est: f64,
    pub c_gpu_est: f64,
    /// `c_cpu_est - c_gpu_est`.
    pub gain: f64,
    pub guard_triggered: bool,
    pub margin_used: f64,
}

pub fn decide(config: &GateConfig, shape: OpShape, payload_bytes: u32) -> GateDecision {
    let (op, n, k) = cpu_terms(shape);
    let c_cpu_est = estimate_cpu_cost(&config.cpu_model, op, n, k);
    let c_gpu_est = estimate_device_cost(shape, config.mode, payload_bytes, &config.profile).total;
    let gain = c_cpu_est - c_gpu_est;
    let guard_triggered = config.min_n_guard.is_some_and(|g| shape.input_rows() < g);
    let path = if !guard_triggered && gain > config.margin {
        Path::Device
    } else {
        Path::Host
    };
    GateDecision {
        path,
        c_cpu_est,
        c_gpu_est,
        gain,
        guard_triggered,
        margin_used: config.margin,
    }
}

/// What a host-side step costs, for clocks that charge rather than measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostCharge {
    Primitive { op: CpuOp, n: u64, k: u64 },
    KeyExtraction { rows: u64 },
    Materialize { rows: u64 },
}

/// Times host-side work.
pub trait HostClock {
    /// Runs `f` and reports its latency in seconds on this clock.
    fn time<R>(&self, charge: HostCharge, f: impl FnOnce() -> R) -> (R, f64);

    /// The latency of `charge` without running anything, if this clock can
    /// price work.
    fn price(&self, _charge: HostCharge) -> Option<f64> {
        None
    }
}

/// Host clock of the modeled world: primitives cost exactly what `model`
/// predicts. Key extraction is free (the key column is already contiguous)
/// and late materialization is charged inside the device ledger's `t_post`,
/// so both are zero here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualClock {
    pub model: CpuCostModel,
}

impl VirtualClock {
    pub fn new(model: CpuCostModel) -> Self {
        Self { model }
    }

    fn charge(&self, charge: HostCharge) -> f64 {
        match charge {
            HostCharge::Primitive { op, n, k } => estimate_cpu_cost(&self.model, op, n, k),
            HostCharge::KeyExtraction { .. } | HostCharge::Materialize { .. } => 0.0,
        }
    }
}

impl HostClock for VirtualClock {
    fn time<R>(&self, charge: HostCharge, f: impl FnOnce() -> R) -> (R, f64) {
        (f(), self.charge(charge))
    }

    fn price(&self, charge: HostCharge) -> Option<f64> {
        Some(self.charge(charge))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    HostOnly,
    DeviceAlways,
    Gated,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::HostOnly, Strategy::DeviceAlways, Strategy::Gated];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::HostOnly => "host_only",
            Strategy::DeviceAlways => "device_always",
            Strategy::Gated => "gated",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    TopK {
        table: &'a ColumnTable,
        k: usize,
    },
    /// `candidates` is the expected matches per probe row, used only for the
    /// gate's estimate.
    Probe {
        build: &'a ColumnTable,
        probe: &'a ColumnTable,
        candidates: u64,
    },
}

impl Query<'_> {
    /// The shape the gate prices this query at.
    pub fn estimated_shape(&self) -> OpShape {
        match *self {
            Query::TopK { table, k } => OpShape::TopK {
                n: table.row_count() as u64,
                k: k as u64,
            },
            Query::Probe {
                build,
                probe,
                candidates,
            } => OpShape::Probe {
                build_n: build.row_count() as u64,
                probe_n: probe.row_count() as u64,
                matches: probe.row_count() as u64 * candidates,
            },
        }
    }

    fn payload_bytes(&self) -> u32 {
        match *self {
            Query::TopK { table, .. } => table.payload_bytes(),
            Query::Probe { build, .. } => build.payload_bytes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryOutput {
    /// Winning rows, largest key first, with key and payload.
    TopK(MaterializedResult),
    /// Match pairs plus the build-side rows of each match, in match order.
    Probe {
        matches: ProbeResult,
        build_rows: MaterializedResult,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub output: QueryOutput,
    /// The gate's verdict, computed for every strategy.
    pub decision: GateDecision,
    /// Where the query actually ran.
    pub path: Path,
    pub observed_latency: f64,
    pub ledger: Option<TransferLedger>,
}

/// Runs `query` wherever the gate sends it.
pub fn execute_gated<D: Device, C: HostClock>(
    query: Query<'_>,
    config: &GateConfig,
    device: &D,
    clock: &C,
) -> Result<Execution> {
    execute_with(Strategy::Gated, query, config, device, clock)
}

/// Runs `query` under `strategy`. The host path is primitive then
/// materialize; the device path is key extraction, device call, then
/// materialize, with materialization charged to the ledger's `t_post`.
pub fn execute_with<D: Device, C: HostClock>(
    strategy: Strategy,
    query: Query<'_>,
    config: &GateConfig,
    device: &D,
    clock: &C,
) -> Result<Execution> {
    let decision = decide(config, query.estimated_shape(), query.payload_bytes());
    let path = match strategy {
        Strategy::HostOnly => Path::Host,
        Strategy::DeviceAlways => Path::Device,
        Strategy::Gated => decision.path,
    };
    let (output, observed_latency, ledger) = match path {
        Path::Host => {
            let (output, latency) = run_host(query, clock)?;
            (output, latency, None)
        }
        Path::Device => {
            let (output, latency, ledger) = run_device(query, config.mode, device, clock)?;
            (output, latency, Some(ledger))
        }
    };
    Ok(Execution {
        output,
        decision,
        path,
        observed_latency,
        ledger,
    })
}

fn run_host<C: HostClock>(query: Query<'_>, clock: &C) -> Result<(QueryOutput, f64)> {
    match query {
        Query::TopK { table, k } => {
            let n = table.row_count() as u64;
            let charge = HostCharge::Primitive {
                op: CpuOp::TopK,
                n,
                k: k as u64,
            };
            let (top, t_primitive) = clock.time(charge, || host_topk(&extract_keys(table), k));
            let top = top?;
            let (rows, t_mat) = clock.time(
                HostCharge::Materialize {
                    rows: top.rows.len() as u64,
                },
                || materialize(table, &top.rows),
            );
            Ok((QueryOutput::TopK(rows?), t_primitive + t_mat))
        }
        Query::Probe { build, probe, .. } => {
            let build_keys = extract_keys(build);
            let probe_keys = extract_keys(probe);
            let rows = (build.row_count() + probe.row_count()) as u64;
            let provisional = HostCharge::Primitive {
                op: CpuOp::Probe,
                n: rows,
                k: 1,
            };
            let (result, t_primitive) = clock.time(provisional, || {
                host_hash_build(&build_keys).map(|t| host_hash_probe(&t, &probe_keys))
            });
            let result = result?;
            // pricing clocks charge by the match count actually produced
            let shape = OpShape::Probe {
                build_n: build.row_count() as u64,
                probe_n: probe.row_count() as u64,
                matches: result.matches.len() as u64,
            };
            let (op, n, k) = cpu_terms(shape);
            let t_primitive = clock
                .price(HostCharge::Primitive { op, n, k })
                .unwrap_or(t_primitive);
            let (rows, t_mat) = materialize_build(build, &result, clock);
            Ok((
                QueryOutput::Probe {
                    matches: result,
                    build_rows: rows?,
                },
                t_primitive + t_mat,
            ))
        }
    }
}

fn materialize_build<C: HostClock>(
    build: &ColumnTable,
    result: &ProbeResult,
    clock: &C,
) -> (Result<MaterializedResult>, f64) {
    let ids: Vec<RowId> = result.matches.iter().map(|m| m.build).collect();
    clock.time(
        HostCharge::Materialize {
            rows: ids.len() as u64,
        },
        || materialize(build, &ids),
    )
}

fn run_device<D: Device, C: HostClock>(
    query: Query<'_>,
    mode: TransferMode,
    device: &D,
    clock: &C,
) -> Result<(QueryOutput, f64, TransferLedger)> {
    match query {
        Query::TopK { table, k } => {
            let n = table.row_count() as u64;
            let (keys, t_extract) = clock.time(HostCharge::KeyExtraction { rows: n }, || {
                extract_keys(table)
            });
            let call = device.topk(&keys, k, mode, table.payload_bytes())?;
            let mut ledger = call.ledger;
            let (rows, t_mat) = clock.time(
                HostCharge::Materialize {
                    rows: call.payload.rows.len() as u64,
                },
                || materialize(table, &call.payload.rows),
            );
            // full rows already carry every column; the lookup only rebuilds the answer
            if mode == TransferMode::KeyOnly {
                ledger.add_post(t_mat);
            }
            Ok((QueryOutput::TopK(rows?), t_extract + ledger.total, ledger))
        }
        Query::Probe { build, probe, .. } => {
            let rows = (build.row_count() + probe.row_count()) as u64;
            let ((build_keys, probe_keys), t_extract) = clock
                .time(HostCharge::KeyExtraction { rows }, || {
                    (extract_keys(build), extract_keys(probe))
                });
            let call = device.probe(&build_keys, &probe_keys, mode, build.payload_bytes())?;
            let mut ledger = call.ledger;
            let (rows, t_mat) = materialize_build(build, &call.payload, clock);
            if mode == TransferMode::KeyOnly {
                ledger.add_post(t_mat);
            }
            Ok((
                QueryOutput::Probe {
                    matches: call.payload,
                    build_rows: rows?,
                },
                t_extract + ledger.total,
                ledger,
            ))
        }
    }
}
