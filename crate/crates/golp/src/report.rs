//! Figure CSVs and the summary JSON.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use golp_core::{CpuOp, Strategy, TransferMode};
use serde::Serialize;

use crate::harness::{gated_offload_at, BenchReport};

pub const FIGURE_FILES: [&str; 7] = [
    "fig1_guard.csv",
    "fig2_margin.csv",
    "fig3_scaling.csv",
    "fig4_payload.csv",
    "fig5_breakeven.csv",
    "fig6_transfer.csv",
    "fig7_e2e.csv",
];
pub const FIT_CPU_FILE: &str = "fit_cpu.csv";
pub const FIT_TX_FILE: &str = "fit_tx.csv";
pub const PROFILE_FILE: &str = "profile.json";
pub const SUMMARY_FILE: &str = "summary.json";

pub const FIG1_HEADER: &[&str] = &[
    "n",
    "strategy",
    "median_s",
    "p95_s",
    "p99_s",
    "offload_rate",
];
pub const FIG2_HEADER: &[&str] = &["margin_s", "offload_rate", "switch_n"];
pub const FIG3_HEADER: &[&str] = &["n", "op", "median_s", "p95_s"];
pub const FIG4_HEADER: &[&str] = &["n", "mode", "bytes", "transfer_s"];
pub const FIG5_HEADER: &[&str] = &["n", "host_s", "device_s", "fit_host_s", "fit_device_s"];
pub const FIG6_HEADER: &[&str] = &[
    "n",
    "mode",
    "h2d_bytes",
    "d2h_bytes",
    "t_h2d_s",
    "t_kernel_s",
    "t_d2h_s",
    "t_post_s",
    "total_s",
];
pub const FIG7_HEADER: &[&str] = &["n", "key_only_e2e_s", "full_row_e2e_s", "speedup"];
pub const FIT_HEADER: &[&str] = &["n", "seconds"];

/// Seconds and other reals in every CSV.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.9}")
}

fn mode_name(mode: TransferMode) -> &'static str {
    match mode {
        TransferMode::KeyOnly => "key_only",
        TransferMode::FullRow => "full_row",
    }
}

fn op_name(op: CpuOp) -> &'static str {
    match op {
        CpuOp::FullSort => "full_sort",
        CpuOp::TopK => "topk",
        CpuOp::Probe => "probe",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitSummary {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub r2_cpu: f64,
    pub r2_tx: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrategySummary {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub offload_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub fits: Option<FitSummary>,
    pub n_star: Option<f64>,
    pub breakeven_error: Option<f64>,
    pub strategies: BTreeMap<&'static str, StrategySummary>,
}

impl Summary {
    pub fn of(report: &BenchReport) -> Self {
        let fits = report.break_even.as_ref().map(|b| FitSummary {
            a: b.fit.a,
            b: b.fit.b,
            c: b.fit.c,
            d: b.fit.d,
            r2_cpu: b.fit.r2_cpu,
            r2_tx: b.fit.r2_tx,
        });
        let strategies = report
            .strategies
            .iter()
            .flat_map(|c| c.runs())
            .map(|run| {
                (
                    run.strategy.name(),
                    StrategySummary {
                        p50: run.overall.median,
                        p95: run.overall.p95,
                        p99: run.overall.p99,
                        offload_rate: run.offload_rate,
                    },
                )
            })
            .collect();
        Self {
            fits,
            n_star: report.break_even.as_ref().and_then(|b| b.n_star()),
            breakeven_error: report.break_even.as_ref().and_then(|b| b.relative_error()),
            strategies,
        }
    }
}

fn csv_writer(path: &Path) -> crate::Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> crate::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `(n, seconds)` points in the format `golp fit` reads.
pub fn write_points(path: &Path, points: &[(f64, f64)]) -> crate::Result<()> {
    write_csv(
        path,
        FIT_HEADER,
        points.iter().map(|&(n, s)| vec![fmt_f64(n), fmt_f64(s)]),
    )
}

/// Writes the seven figure CSVs, the fit inputs, the profile used for the
/// break-even terms and `summary.json` into `dir`, creating it if needed.
/// Returns the paths written.
pub fn export_report(report: &BenchReport, dir: &Path) -> crate::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let path = |name: &str| dir.join(name);
    let spec = &report.workload;

    let fig1 = report.strategies.iter().flat_map(|cmp| {
        cmp.runs().into_iter().flat_map(move |run| {
            run.per_n.iter().map(move |(&n, st)| {
                let offload = match run.strategy {
                    Strategy::HostOnly => 0.0,
                    Strategy::DeviceAlways => 1.0,
                    Strategy::Gated => gated_offload_at(&report.gate, spec, n),
                };
                vec![
                    n.to_string(),
                    run.strategy.name().to_string(),
                    fmt_f64(st.median),
                    fmt_f64(st.p95),
                    fmt_f64(st.p99),
                    fmt_f64(offload),
                ]
            })
        })
    });
    write_csv(&path(FIGURE_FILES[0]), FIG1_HEADER, fig1)?;

    let fig2 = report.margins.iter().map(|m| {
        vec![
            fmt_f64(m.margin),
            fmt_f64(m.offload_rate),
            m.switch_n.map(|n| n.to_string()).unwrap_or_default(),
        ]
    });
    write_csv(&path(FIGURE_FILES[1]), FIG2_HEADER, fig2)?;

    let fig3 = report.scaling.iter().map(|r| {
        vec![
            r.n.to_string(),
            op_name(r.op).to_string(),
            fmt_f64(r.stats.median),
            fmt_f64(r.stats.p95),
        ]
    });
    write_csv(&path(FIGURE_FILES[2]), FIG3_HEADER, fig3)?;

    let fig4 = report.transfers.iter().map(|r| {
        vec![
            r.n.to_string(),
            mode_name(r.mode).to_string(),
            r.h2d_bytes.to_string(),
            fmt_f64(r.transfer),
        ]
    });
    write_csv(&path(FIGURE_FILES[3]), FIG4_HEADER, fig4)?;

    let fig5 = report.break_even.iter().flat_map(|b| {
        b.sweep.iter().map(move |p| {
            vec![
                fmt_f64(p.n),
                fmt_f64(p.host_seconds),
                fmt_f64(p.device_seconds),
                fmt_f64(b.fit.host_seconds(p.n)),
                fmt_f64(b.fit.transfer_seconds(p.n) + b.terms.seconds(p.n)),
            ]
        })
    });
    write_csv(&path(FIGURE_FILES[4]), FIG5_HEADER, fig5)?;

    let fig6 = report.transfers.iter().map(|r| {
        vec![
            r.n.to_string(),
            mode_name(r.mode).to_string(),
            r.h2d_bytes.to_string(),
            r.d2h_bytes.to_string(),
            fmt_f64(r.phases.t_h2d),
            fmt_f64(r.phases.t_kernel),
            fmt_f64(r.phases.t_d2h),
            fmt_f64(r.phases.t_post),
            fmt_f64(r.phases.total),
        ]
    });
    write_csv(&path(FIGURE_FILES[5]), FIG6_HEADER, fig6)?;

    let fig7 = spec.n_grid.iter().filter_map(|&n| {
        let e2e = |mode| {
            report
                .transfers
                .iter()
                .find(|r| r.n == n && r.mode == mode)
                .map(|r| r.e2e.median)
        };
        let (key_only, full_row) = (e2e(TransferMode::KeyOnly)?, e2e(TransferMode::FullRow)?);
        Some(vec![
            n.to_string(),
            fmt_f64(key_only),
            fmt_f64(full_row),
            fmt_f64(full_row / key_only),
        ])
    });
    write_csv(&path(FIGURE_FILES[6]), FIG7_HEADER, fig7)?;

    let (cpu, tx) = report
        .break_even
        .as_ref()
        .map(|b| (b.cpu_points.as_slice(), b.tx_points.as_slice()))
        .unwrap_or_default();
    write_points(&path(FIT_CPU_FILE), cpu)?;
    write_points(&path(FIT_TX_FILE), tx)?;

    write_json(&path(PROFILE_FILE), &report.gate.profile)?;
    write_json(&path(SUMMARY_FILE), &Summary::of(report))?;

    let mut written: Vec<PathBuf> = FIGURE_FILES.iter().map(|f| path(f)).collect();
    written.extend([FIT_CPU_FILE, FIT_TX_FILE, PROFILE_FILE, SUMMARY_FILE].map(path));
    Ok(written)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> crate::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
