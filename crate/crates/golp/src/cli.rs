use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use golp_core::fit::DeviceTerms;
use golp_core::{
    decide, generate_table, solve_break_even, validate_break_even, Backend, DeviceProfile,
    FitResult, OpShape, Path as GatePath, SweepPoint,
};
use serde::Serialize;

use crate::config::{RunConfig, DEFAULT_OUTPUT_DIR};
use crate::report::{export_report, fmt_f64, write_json};
use crate::{exit, table_io, Error, Result};

pub const OUT_ENV: &str = "GOLP_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "golp",
    version,
    about = "Hybrid host/coprocessor Top-K and join-probe benchmark kit"
)]
pub struct Cli {
    /// JSON run configuration; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: $GOLP_OUT, else ./golp-out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Proxy worker threads [default: available parallelism].
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Modeled,
    Proxy,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Modeled => Backend::Modeled,
            BackendArg::Proxy => Backend::Proxy,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic table and write its binary dump.
    Gen {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = golp_core::store::DEFAULT_PAYLOAD_BYTES)]
        payload_bytes: u32,
    },
    /// Run every benchmark and write the figure CSVs and summary.json.
    Bench,
    /// Fit host and transfer curves from (n,seconds) CSVs and solve for the break-even size.
    Fit {
        #[arg(long, value_name = "CSV")]
        cpu: PathBuf,
        #[arg(long, value_name = "CSV")]
        tx: PathBuf,
        /// Result rows per query [default: workload k].
        #[arg(long)]
        k: Option<u64>,
        /// Device profile JSON for the kernel and post terms [default: config profile].
        #[arg(long, value_name = "JSON")]
        profile: Option<PathBuf>,
        /// Sweep CSV with columns n, host_s, device_s to validate against.
        #[arg(long, value_name = "CSV")]
        sweep: Option<PathBuf>,
    },
    /// Evaluate the gate over a size grid and margin list without executing anything.
    GateSim {
        #[arg(long, value_delimiter = ',')]
        grid: Vec<u64>,
        /// Margins in seconds.
        #[arg(long, value_delimiter = ',')]
        margins: Vec<f64>,
        #[arg(long)]
        guard: Option<u64>,
    },
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
        }
    };
    match run(cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    match cli.command {
        Command::Gen { n, payload_bytes } => cmd_gen(&config, n, payload_bytes),
        Command::Bench => cmd_bench(&config),
        Command::Fit {
            ref cpu,
            ref tx,
            k,
            ref profile,
            ref sweep,
        } => cmd_fit(&config, cpu, tx, k, profile.as_deref(), sweep.as_deref()),
        Command::GateSim {
            ref grid,
            ref margins,
            guard,
        } => cmd_gate_sim(&config, grid, margins, guard),
    }
}

/// Flags, then the config file, then `$GOLP_OUT` (output directory only),
/// then defaults.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let (mut config, file_sets_out) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::Usage(format!("config {}: {e}", path.display())))?;
            let sets_out = value.get("output_dir").is_some();
            let config: RunConfig = serde_json::from_value(value)
                .map_err(|e| Error::Usage(format!("config {}: {e}", path.display())))?;
            (config, sets_out)
        }
        None => (RunConfig::default(), false),
    };
    if let Some(b) = cli.backend {
        config.backend = b.into();
    }
    if let Some(seed) = cli.seed {
        config.workload.seed = seed;
    }
    if let Some(w) = cli.workers {
        config.workers = Some(w);
    }
    config.output_dir = match (&cli.out, file_sets_out, std::env::var_os(OUT_ENV)) {
        (Some(out), _, _) => out.clone(),
        (None, true, _) => config.output_dir,
        (None, false, Some(env)) if !env.is_empty() => PathBuf::from(env),
        _ => PathBuf::from(DEFAULT_OUTPUT_DIR),
    };
    config.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(config)
}

pub fn table_file_name(n: u64, payload_bytes: u32, seed: u64) -> String {
    format!("table_n{n}_p{payload_bytes}_s{seed}.golp")
}

fn cmd_gen(config: &RunConfig, n: u64, payload_bytes: u32) -> Result<()> {
    if payload_bytes == 0 {
        return Err(Error::Usage("--payload-bytes must be at least 1".into()));
    }
    let seed = config.workload.seed;
    let table = generate_table(n, payload_bytes, seed)?;
    fs::create_dir_all(&config.output_dir)?;
    let path = config
        .output_dir
        .join(table_file_name(n, payload_bytes, seed));
    table_io::save_table(&path, &table, seed)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_bench(config: &RunConfig) -> Result<()> {
    let report = crate::run_bench(config)?;
    let written = export_report(&report, &config.output_dir)?;
    for p in &written {
        println!("{}", p.display());
    }
    if let Some(be) = report.break_even.as_ref().and_then(|b| b.break_even) {
        eprintln!(
            "n_star = {:.1}, measured = {}, error = {}",
            be.n_star,
            be.measured_n_star
                .map_or("n/a".into(), |m| format!("{m:.1}")),
            be.relative_error
                .map_or("n/a".into(), |e| format!("{:.4}%", 100.0 * e)),
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitReport {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub r2_cpu: f64,
    pub r2_tx: f64,
    pub rss_cpu: f64,
    pub rss_tx: f64,
    pub n_star: f64,
    pub terms: DeviceTerms,
    pub measured_n_star: Option<f64>,
    pub relative_error: Option<f64>,
}

pub const FIT_FILE: &str = "fit.json";

/// Reads `(n, seconds)` rows from a CSV with header `n,seconds`.
pub fn read_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Usage(format!("{}: missing column {name}", path.display())))
    };
    let (n_col, s_col) = (col("n")?, col("seconds")?);
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok((parse_f64(path, &rec[n_col])?, parse_f64(path, &rec[s_col])?))
        })
        .collect()
}

/// Reads sweep rows from a CSV carrying `n`, `host_s` and `device_s` columns.
pub fn read_sweep(path: &Path) -> Result<Vec<SweepPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Usage(format!("{}: missing column {name}", path.display())))
    };
    let (n, host, dev) = (col("n")?, col("host_s")?, col("device_s")?);
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(SweepPoint {
                n: parse_f64(path, &rec[n])?,
                host_seconds: parse_f64(path, &rec[host])?,
                device_seconds: parse_f64(path, &rec[dev])?,
            })
        })
        .collect()
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Usage(format!("{}: not a number: {s:?}", path.display())))
}

fn cmd_fit(
    config: &RunConfig,
    cpu: &Path,
    tx: &Path,
    k: Option<u64>,
    profile: Option<&Path>,
    sweep: Option<&Path>,
) -> Result<()> {
    let profile: DeviceProfile = match profile {
        Some(p) => {
            let profile: DeviceProfile = serde_json::from_str(&fs::read_to_string(p)?)
                .map_err(|e| Error::Usage(format!("profile {}: {e}", p.display())))?;
            profile.validate()?;
            profile
        }
        None => config.gate.profile,
    };
    let k = k.unwrap_or(config.workload.k as u64);
    let fit = FitResult::fit(&read_points(cpu)?, &read_points(tx)?)?;
    let be = solve_break_even(&fit, &DeviceTerms::topk(&profile, k))?;
    let check = match sweep {
        Some(p) => Some(validate_break_even(be.n_star, &read_sweep(p)?)?),
        None => None,
    };
    let report = FitReport {
        a: fit.a,
        b: fit.b,
        c: fit.c,
        d: fit.d,
        r2_cpu: fit.r2_cpu,
        r2_tx: fit.r2_tx,
        rss_cpu: fit.rss_cpu,
        rss_tx: fit.rss_tx,
        n_star: be.n_star,
        terms: be.terms,
        measured_n_star: check.map(|c| c.measured_n_star),
        relative_error: check.map(|c| c.relative_error),
    };
    fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join(FIT_FILE);
    write_json(&path, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub const GATE_SIM_FILE: &str = "gate_sim.csv";
pub const GATE_SIM_HEADER: &[&str] = &["n", "margin_s", "path", "c_cpu_est", "c_gpu_est", "gain"];

fn cmd_gate_sim(
    config: &RunConfig,
    grid: &[u64],
    margins: &[f64],
    guard: Option<u64>,
) -> Result<()> {
    let grid = if grid.is_empty() {
        &config.workload.n_grid[..]
    } else {
        grid
    };
    let margins = if margins.is_empty() {
        &config.margins[..]
    } else {
        margins
    };
    let mut gate = config.gate;
    if guard.is_some() {
        gate.min_n_guard = guard;
    }
    if margins.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
        return Err(Error::Usage(
            "margins must be finite and nonnegative".into(),
        ));
    }
    fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join(GATE_SIM_FILE);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&path)?;
    w.write_record(GATE_SIM_HEADER)?;
    for &margin in margins {
        let cfg = golp_core::GateConfig { margin, ..gate };
        for &n in grid {
            let shape = OpShape::TopK {
                n,
                k: config.workload.k as u64,
            };
            let d = decide(&cfg, shape, config.workload.payload_bytes);
            w.write_record([
                n.to_string(),
                fmt_f64(margin),
                match d.path {
                    GatePath::Host => "host",
                    GatePath::Device => "device",
                }
                .to_string(),
                fmt_f64(d.c_cpu_est),
                fmt_f64(d.c_gpu_est),
                fmt_f64(d.gain),
            ])?;
        }
    }
    w.flush()?;
    println!("{}", path.display());
    Ok(())
}
