use thiserror::Error;

/// Errors raised by the execution kernel.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("key at row {row} is not finite ({value})")]
    NonFiniteKey { row: usize, value: f64 },

    #[error("column length mismatch: {keys} keys but {payload_rows} payload rows")]
    ColumnLength { keys: usize, payload_rows: usize },

    #[error("payload width must be at least one byte")]
    ZeroPayloadWidth,

    #[error("{rows} rows exceed the 4-byte row identifier range")]
    TooManyRows { rows: u64 },

    #[error("capacity exceeded: {requested} bytes requested, budget is {budget} bytes")]
    Capacity { requested: u128, budget: u64 },

    #[error("row identifier {row} out of range for a table of {rows} rows")]
    RowOutOfRange { row: u32, rows: usize },

    #[error("k must be at least 1")]
    ZeroK,

    #[error("invalid device profile: {0}")]
    InvalidProfile(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),

    #[error("degenerate fit: {0}")]
    DegenerateFit(&'static str),

    #[error("cost curves do not cross on the search bracket")]
    NoCrossing,

    #[error("sweep does not bracket a crossover")]
    Unbracketed,

    #[error("cannot compute statistics over an empty sample set")]
    EmptySamples,

    #[error("strategies disagree on the answer for a query of size {n}")]
    ResultMismatch { n: u64 },
}

pub type Result<T> = core::result::Result<T, Error>;
