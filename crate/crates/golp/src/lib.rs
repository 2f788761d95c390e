//! Std companion to `golp-core`: the wall-clock proxy device, the benchmark
//! harness and its CSV/JSON report, the binary table dump, and the `golp`
//! command line.

pub mod cli;
pub mod config;
pub mod harness;
pub mod proxy;
pub mod report;
pub mod table_io;

pub use config::RunConfig;
pub use harness::{run_bench, run_bench_with, BenchReport};
pub use proxy::{ProxyDevice, WallClock};
pub use report::export_report;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] golp_core::Error),
    #[error(transparent)]
    Table(#[from] table_io::TableIoError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const MISMATCH: i32 = 3;
    pub const FIT: i32 = 4;
}

impl Error {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        use golp_core::Error as E;
        match self {
            Error::Usage(_) => exit::USAGE,
            Error::Core(E::ResultMismatch { .. }) => exit::MISMATCH,
            Error::Core(E::DegenerateFit(_) | E::NoCrossing | E::Unbracketed) => exit::FIT,
            Error::Core(
                E::InvalidConfig(_) | E::InvalidProfile(_) | E::ZeroK | E::ZeroPayloadWidth,
            ) => exit::USAGE,
            _ => exit::FAILURE,
        }
    }
}
