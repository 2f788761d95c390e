//! Binary table dump.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "GOLP" | u32 version = 1 | u64 n | u32 payload_bytes | u64 seed
//! n × f64 keys
//! n × payload_bytes payload
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use golp_core::ColumnTable;

pub const MAGIC: [u8; 4] = *b"GOLP";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 4 + 4 + 8 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableHeader {
    pub n: u64,
    pub payload_bytes: u32,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum TableIoError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a table dump (bad magic)")]
    BadMagic,
    #[error("unsupported table dump version {0}")]
    Version(u32),
    #[error("table dump is truncated or has trailing bytes")]
    Length,
    #[error(transparent)]
    Table(#[from] golp_core::Error),
}

/// Exact size of a dump holding `n` rows of `payload_bytes` each.
pub fn dump_len(n: u64, payload_bytes: u32) -> u64 {
    HEADER_BYTES as u64 + n * (8 + payload_bytes as u64)
}

pub fn write_table(
    mut out: impl Write,
    table: &ColumnTable,
    seed: u64,
) -> Result<(), TableIoError> {
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(table.row_count() as u64).to_le_bytes())?;
    out.write_all(&table.payload_bytes().to_le_bytes())?;
    out.write_all(&seed.to_le_bytes())?;
    for k in table.keys() {
        out.write_all(&k.to_le_bytes())?;
    }
    out.write_all(table.payload_column())?;
    out.flush()?;
    Ok(())
}

pub fn read_table(mut input: impl Read) -> Result<(TableHeader, ColumnTable), TableIoError> {
    let mut header = [0u8; HEADER_BYTES];
    input.read_exact(&mut header).map_err(eof_as_length)?;
    if header[..4] != MAGIC {
        return Err(TableIoError::BadMagic);
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(TableIoError::Version(version));
    }
    let head = TableHeader {
        n: u64::from_le_bytes(header[8..16].try_into().unwrap()),
        payload_bytes: u32::from_le_bytes(header[16..20].try_into().unwrap()),
        seed: u64::from_le_bytes(header[20..28].try_into().unwrap()),
    };
    let n = usize::try_from(head.n).map_err(|_| TableIoError::Length)?;
    let payload_len = n
        .checked_mul(head.payload_bytes as usize)
        .ok_or(TableIoError::Length)?;

    let mut key_bytes = vec![0u8; n.checked_mul(8).ok_or(TableIoError::Length)?];
    input.read_exact(&mut key_bytes).map_err(eof_as_length)?;
    let keys = key_bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let mut payload = vec![0u8; payload_len];
    input.read_exact(&mut payload).map_err(eof_as_length)?;
    if input.read(&mut [0u8; 1])? != 0 {
        return Err(TableIoError::Length);
    }
    Ok((head, ColumnTable::new(keys, payload, head.payload_bytes)?))
}

fn eof_as_length(e: io::Error) -> TableIoError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        TableIoError::Length
    } else {
        TableIoError::Io(e)
    }
}

pub fn save_table(path: &Path, table: &ColumnTable, seed: u64) -> Result<(), TableIoError> {
    write_table(BufWriter::new(File::create(path)?), table, seed)
}

pub fn load_table(path: &Path) -> Result<(TableHeader, ColumnTable), TableIoError> {
    read_table(BufReader::new(File::open(path)?))
}
