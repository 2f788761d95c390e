//! In-memory columnar relation, key extraction and late materialization.
//!
//! A [`ColumnTable`] holds one ordered `f64` key column and one fixed-width
//! payload column. Only [`KeyVector`]s (key plus 4-byte row identifier) ever
//! leave the host; payload bytes are fetched again by [`materialize`] for the
//! handful of rows that survive a primitive.

use alloc::vec::Vec;
use core::cmp::Ordering;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KEY_BYTES: u64 = 8;
pub const ROW_ID_BYTES: u64 = 4;
/// Serialized width of one `(key, row)` entry.
pub const KEY_ENTRY_BYTES: u64 = KEY_BYTES + ROW_ID_BYTES;

/// Payload width that puts the full-row/key-only ratio at 196/12.
pub const DEFAULT_PAYLOAD_BYTES: u32 = 188;

/// Upper bound on generated table size, in bytes of key and payload data.
pub const DEFAULT_MEMORY_BUDGET: u64 = 8 << 30;

/// Synthetic keys are integers drawn uniformly from `[0, 2^53)`.
pub const SYNTHETIC_KEY_RANGE: f64 = 9_007_199_254_740_992.0;

/// Position of a row inside one [`ColumnTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RowId(pub u32);

impl RowId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Key comparison used by every primitive. Keys are finite, so this is a
/// total order in which `-0.0 == 0.0`.
#[inline]
pub fn cmp_keys(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnTable {
    keys: Vec<f64>,
    payload: Vec<u8>,
    payload_bytes: u32,
}

impl ColumnTable {
    /// Builds a table from a key column and a flat, row-major payload column.
    pub fn new(keys: Vec<f64>, payload: Vec<u8>, payload_bytes: u32) -> Result<Self> {
        if payload_bytes == 0 {
            return Err(Error::ZeroPayloadWidth);
        }
        check_row_count(keys.len() as u64)?;
        let width = payload_bytes as usize;
        if !payload.len().is_multiple_of(width) || payload.len() / width != keys.len() {
            return Err(Error::ColumnLength {
                keys: keys.len(),
                payload_rows: payload.len() / width,
            });
        }
        if let Some((row, &value)) = keys.iter().enumerate().find(|(_, k)| !k.is_finite()) {
            return Err(Error::NonFiniteKey { row, value });
        }
        Ok(Self {
            keys,
            payload,
            payload_bytes,
        })
    }

    pub fn row_count(&self) -> usize {
        self.keys.len()
    }

    pub fn payload_bytes(&self) -> u32 {
        self.payload_bytes
    }

    pub fn keys(&self) -> &[f64] {
        &self.keys
    }

    /// The whole payload column, row-major.
    pub fn payload_column(&self) -> &[u8] {
        &self.payload
    }

    pub fn key(&self, row: RowId) -> Option<f64> {
        self.keys.get(row.index()).copied()
    }

    pub fn payload(&self, row: RowId) -> Option<&[u8]> {
        let width = self.payload_bytes as usize;
        let start = row.index().checked_mul(width)?;
        self.payload.get(start..start + width)
    }
}

fn check_row_count(rows: u64) -> Result<()> {
    if rows > u32::MAX as u64 {
        return Err(Error::TooManyRows { rows });
    }
    Ok(())
}

/// `{n, payload_bytes, seed}` as accepted from the command line or a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub n: u64,
    pub payload_bytes: u32,
    pub seed: u64,
}

impl TableSpec {
    pub fn data_bytes(&self) -> u128 {
        self.n as u128 * (KEY_BYTES as u128 + self.payload_bytes as u128)
    }
}

/// Generates a deterministic synthetic table under [`DEFAULT_MEMORY_BUDGET`].
pub fn generate_table(n: u64, payload_bytes: u32, seed: u64) -> Result<ColumnTable> {
    generate_table_within(
        TableSpec {
            n,
            payload_bytes,
            seed,
        },
        DEFAULT_MEMORY_BUDGET,
    )
}

/// Generates a deterministic synthetic table, refusing anything larger than
/// `budget` bytes of column data.
///
/// Keys are drawn first, then the payload column, from a ChaCha8 stream
/// seeded with `spec.seed`. The key column therefore does not depend on the
/// payload width.
pub fn generate_table_within(spec: TableSpec, budget: u64) -> Result<ColumnTable> {
    if spec.payload_bytes == 0 {
        return Err(Error::ZeroPayloadWidth);
    }
    check_row_count(spec.n)?;
    let requested = spec.data_bytes();
    if requested > budget as u128 {
        return Err(Error::Capacity { requested, budget });
    }

    let n = spec.n as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let keys: Vec<f64> = (0..n).map(|_| (rng.next_u64() >> 11) as f64).collect();
    let mut payload = alloc::vec![0u8; n * spec.payload_bytes as usize];
    rng.fill_bytes(&mut payload);

    Ok(ColumnTable {
        keys,
        payload,
        payload_bytes: spec.payload_bytes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyEntry {
    pub key: f64,
    pub row: RowId,
}

impl KeyEntry {
    pub fn new(key: f64, row: u32) -> Self {
        Self {
            key,
            row: RowId(row),
        }
    }

    pub fn write_le(&self, out: &mut [u8]) {
        out[..8].copy_from_slice(&self.key.to_le_bytes());
        out[8..12].copy_from_slice(&self.row.0.to_le_bytes());
    }

    pub fn read_le(bytes: &[u8]) -> Self {
        let mut key = [0u8; 8];
        let mut row = [0u8; 4];
        key.copy_from_slice(&bytes[..8]);
        row.copy_from_slice(&bytes[8..12]);
        Self {
            key: f64::from_le_bytes(key),
            row: RowId(u32::from_le_bytes(row)),
        }
    }
}

/// Contiguous `(key, row)` pairs: the only data shipped to a coprocessor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyVector {
    entries: Vec<KeyEntry>,
}

impl KeyVector {
    pub fn new(entries: Vec<KeyEntry>) -> Result<Self> {
        check_row_count(entries.len() as u64)?;
        if let Some((row, e)) = entries.iter().enumerate().find(|(_, e)| !e.key.is_finite()) {
            return Err(Error::NonFiniteKey { row, value: e.key });
        }
        Ok(Self { entries })
    }

    /// Convenience constructor from `(key, row)` tuples.
    pub fn from_pairs(pairs: &[(f64, u32)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(k, r)| KeyEntry::new(k, r)).collect())
    }

    pub fn entries(&self) -> &[KeyEntry] {
        &self.entries
    }

    pub fn source_rows(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn serialized_len(&self) -> u64 {
        KEY_ENTRY_BYTES * self.entries.len() as u64
    }

    /// The first `n` entries (all of them if `n` exceeds the length).
    pub fn prefix(&self, n: usize) -> KeyVector {
        let n = n.min(self.entries.len());
        KeyVector {
            entries: self.entries[..n].to_vec(),
        }
    }

    /// Little-endian wire image: 8-byte key then 4-byte row identifier, per entry.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = alloc::vec![0u8; self.serialized_len() as usize];
        for (e, chunk) in self
            .entries
            .iter()
            .zip(out.chunks_exact_mut(KEY_ENTRY_BYTES as usize))
        {
            e.write_le(chunk);
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(KEY_ENTRY_BYTES as usize) {
            return Err(Error::InvalidConfig(
                "key vector image is not a multiple of 12 bytes",
            ));
        }
        Self::new(
            bytes
                .chunks_exact(KEY_ENTRY_BYTES as usize)
                .map(KeyEntry::read_le)
                .collect(),
        )
    }
}

/// `entries[i] = (key_column[i], RowId(i))`.
pub fn extract_keys(table: &ColumnTable) -> KeyVector {
    KeyVector {
        entries: table
            .keys
            .iter()
            .enumerate()
            .map(|(i, &key)| KeyEntry {
                key,
                row: RowId(i as u32),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnSet {
    Key,
    KeyAndPayload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedRow {
    pub row: RowId,
    pub key: f64,
    /// Empty when only the key column was materialized.
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedResult {
    pub rows: Vec<MaterializedRow>,
    pub columns: ColumnSet,
}

/// Re-reads key and payload for `rows`, in request order.
pub fn materialize(table: &ColumnTable, rows: &[RowId]) -> Result<MaterializedResult> {
    materialize_columns(table, rows, ColumnSet::KeyAndPayload)
}

pub fn materialize_columns(
    table: &ColumnTable,
    rows: &[RowId],
    columns: ColumnSet,
) -> Result<MaterializedResult> {
    let out = rows
        .iter()
        .map(|&row| {
            let key = table.key(row).ok_or(Error::RowOutOfRange {
                row: row.0,
                rows: table.row_count(),
            })?;
            let payload = match columns {
                ColumnSet::Key => Vec::new(),
                // key() succeeded, so the payload slice exists
                ColumnSet::KeyAndPayload => table.payload(row).unwrap_or_default().to_vec(),
            };
            Ok(MaterializedRow { row, key, payload })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MaterializedResult { rows: out, columns })
}

/// Bytes a full-row transfer would move: `N * (8 + payload_bytes)`.
pub fn full_row_bytes(table: &ColumnTable) -> u64 {
    full_row_bytes_for(table.row_count() as u64, table.payload_bytes)
}

pub fn full_row_bytes_for(n: u64, payload_bytes: u32) -> u64 {
    n * (KEY_BYTES + payload_bytes as u64)
}

pub fn key_only_bytes_for(n: u64) -> u64 {
    n * KEY_ENTRY_BYTES
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table() {
        let t = generate_table(0, 100, 42).unwrap();
        assert_eq!(t.row_count(), 0);
        assert_eq!(full_row_bytes(&t), 0);
        assert!(extract_keys(&t).is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_table(10, 100, 42).unwrap();
        let b = generate_table(10, 100, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.payload_column(), b.payload_column());
        let c = generate_table(10, 100, 43).unwrap();
        assert_ne!(a.keys(), c.keys());
    }

    #[test]
    fn keys_do_not_depend_on_payload_width() {
        let a = generate_table(50, 1, 9).unwrap();
        let b = generate_table(50, 188, 9).unwrap();
        assert_eq!(a.keys(), b.keys());
    }

    #[test]
    fn synthetic_keys_are_integers_in_range() {
        let t = generate_table(2000, 4, 3).unwrap();
        for &k in t.keys() {
            assert!((0.0..SYNTHETIC_KEY_RANGE).contains(&k));
            assert_eq!(k, libm::trunc(k));
        }
    }

    #[test]
    fn column_sizes() {
        let t = generate_table(1000, 188, 7).unwrap();
        assert_eq!(t.payload_column().len(), 188_000);
        assert_eq!(t.keys().len() * 8, 8000);
        assert_eq!(full_row_bytes(&t), 196_000);
    }

    #[test]
    fn capacity_budget_enforced() {
        let spec = TableSpec {
            n: 1000,
            payload_bytes: 92,
            seed: 0,
        };
        assert!(generate_table_within(spec, 100_000).is_ok());
        assert_eq!(
            generate_table_within(spec, 99_999),
            Err(Error::Capacity {
                requested: 100_000,
                budget: 99_999
            })
        );
        assert_eq!(generate_table(1, 0, 0), Err(Error::ZeroPayloadWidth));
    }

    #[test]
    fn rejects_non_finite_keys() {
        let err = ColumnTable::new(alloc::vec![1.0, f64::NAN], alloc::vec![0; 2], 1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteKey { row: 1, .. }));
        assert!(ColumnTable::new(alloc::vec![f64::INFINITY], alloc::vec![0], 1).is_err());
        assert!(KeyVector::from_pairs(&[(f64::NEG_INFINITY, 0)]).is_err());
    }

    #[test]
    fn rejects_ragged_columns() {
        let err = ColumnTable::new(alloc::vec![1.0, 2.0], alloc::vec![0; 3], 2).unwrap_err();
        assert!(matches!(err, Error::ColumnLength { keys: 2, .. }));
    }

    #[test]
    fn extract_keys_pairs_rows() {
        let t = ColumnTable::new(alloc::vec![3.0, 1.0], alloc::vec![0; 2], 1).unwrap();
        let kv = extract_keys(&t);
        assert_eq!(
            kv.entries(),
            &[KeyEntry::new(3.0, 0), KeyEntry::new(1.0, 1)]
        );
        assert_eq!(kv.serialized_len(), 24);
        assert_eq!(kv.to_le_bytes().len(), 24);
    }

    #[test]
    fn key_only_bytes_at_three_million() {
        assert_eq!(key_only_bytes_for(3_000_000), 36_000_000);
        assert_eq!(full_row_bytes_for(3_000_000, 187), 585_000_000);
    }

    #[test]
    fn wire_image_decodes() {
        let kv = KeyVector::from_pairs(&[(2.5, 7), (-1.0, 0), (1e300, u32::MAX)]).unwrap();
        assert_eq!(KeyVector::from_le_bytes(&kv.to_le_bytes()).unwrap(), kv);
        assert!(KeyVector::from_le_bytes(&[0; 13]).is_err());
    }

    #[test]
    fn materialize_in_request_order() {
        let t = ColumnTable::new(
            alloc::vec![10.0, 20.0, 30.0],
            alloc::vec![1, 1, 2, 2, 3, 3],
            2,
        )
        .unwrap();
        let m = materialize(&t, &[RowId(2), RowId(0)]).unwrap();
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.rows[0].row, RowId(2));
        assert_eq!(m.rows[0].key, 30.0);
        assert_eq!(m.rows[0].payload, [3, 3]);
        assert_eq!(m.rows[1].payload, [1, 1]);

        assert!(materialize(&t, &[]).unwrap().rows.is_empty());
        assert_eq!(
            materialize(&t, &[RowId(5)]),
            Err(Error::RowOutOfRange { row: 5, rows: 3 })
        );

        let keys_only = materialize_columns(&t, &[RowId(1)], ColumnSet::Key).unwrap();
        assert!(keys_only.rows[0].payload.is_empty());
    }

    #[test]
    fn negative_zero_compares_equal() {
        assert_eq!(cmp_keys(-0.0, 0.0), Ordering::Equal);
        assert_eq!(cmp_keys(-1.0, 0.0), Ordering::Less);
    }
}
