//! Host baselines: full sort, bounded-heap Top-K, key-only hash build and probe.
//!
//! Ties are always broken by ascending [`RowId`], so every primitive has a
//! single correct answer that oracles can compare against exactly.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::store::{cmp_keys, KeyEntry, KeyVector, RowId, DEFAULT_MEMORY_BUDGET};

/// Ascending key, then ascending row.
#[inline]
pub fn ascending(a: &KeyEntry, b: &KeyEntry) -> Ordering {
    cmp_keys(a.key, b.key).then(a.row.cmp(&b.row))
}

/// Descending key, then ascending row. `Less` means "ranks earlier".
#[inline]
pub fn descending(a: &KeyEntry, b: &KeyEntry) -> Ordering {
    cmp_keys(b.key, a.key).then(a.row.cmp(&b.row))
}

/// Row identifiers ordered by ascending key.
pub fn host_full_sort(keys: &KeyVector) -> Vec<RowId> {
    let mut entries = keys.entries().to_vec();
    entries.sort_unstable_by(ascending);
    entries.into_iter().map(|e| e.row).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopKResult {
    /// `min(k, N)` rows, largest key first.
    pub rows: Vec<RowId>,
    pub k_requested: usize,
}

/// Heap element whose `Ord` is [`descending`], so the max-heap top is the
/// worst candidate currently kept.
#[derive(Clone, Copy)]
struct Ranked(KeyEntry);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        descending(&self.0, &other.0)
    }
}

/// The `k` best entries of `entries` in rank order, using a bounded heap
/// (`O(N log k)`).
pub fn top_entries<'a, I>(entries: I, k: usize) -> Vec<KeyEntry>
where
    I: IntoIterator<Item = &'a KeyEntry>,
{
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k.min(1 << 16) + 1);
    for &e in entries {
        if heap.len() < k {
            heap.push(Ranked(e));
        } else if let Some(mut worst) = heap.peek_mut() {
            if descending(&e, &worst.0) == Ordering::Less {
                *worst = Ranked(e);
            }
        }
    }
    heap.into_sorted_vec().into_iter().map(|r| r.0).collect()
}

pub fn host_topk(keys: &KeyVector, k: usize) -> Result<TopKResult> {
    if k == 0 {
        return Err(Error::ZeroK);
    }
    Ok(TopKResult {
        rows: top_entries(keys.entries(), k)
            .into_iter()
            .map(|e| e.row)
            .collect(),
        k_requested: k,
    })
}

pub const MAX_LOAD_FACTOR: f64 = 0.7;
const EMPTY: u32 = u32::MAX;
const MIN_SLOTS: usize = 8;

/// Finalizer from MurmurHash3, applied to the key's bit pattern.
#[inline]
pub fn hash_key(key: f64) -> u64 {
    // -0.0 and 0.0 join with each other, so they must hash alike.
    let mut h = if key == 0.0 { 0 } else { key.to_bits() };
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

fn slots_for(entries: usize) -> usize {
    // smallest power of two with entries / slots <= 0.7
    let needed = (entries * 10).div_ceil(7).max(MIN_SLOTS);
    needed.next_power_of_two()
}

/// Open-addressed multimap from key to build-side row, with linear probing.
///
/// Entries live in insertion order; slots hold indices into them. A lookup
/// walks the probe chain from the key's home slot, which visits equal keys in
/// insertion order.
#[derive(Debug, Clone)]
pub struct KeyHashTable {
    entries: Vec<KeyEntry>,
    slots: Vec<u32>,
    budget: u64,
}

impl KeyHashTable {
    pub fn with_capacity(entries: usize, budget: u64) -> Result<Self> {
        let slots = slots_for(entries);
        check_table_budget(entries, slots, budget)?;
        Ok(Self {
            entries: Vec::with_capacity(entries),
            slots: alloc::vec![EMPTY; slots],
            budget,
        })
    }

    pub fn build(entries: &[KeyEntry], budget: u64) -> Result<Self> {
        let mut table = Self::with_capacity(entries.len(), budget)?;
        for &e in entries {
            table.insert(e)?;
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn load_factor(&self) -> f64 {
        self.entries.len() as f64 / self.slots.len() as f64
    }

    pub fn insert(&mut self, entry: KeyEntry) -> Result<()> {
        if self.entries.len() as u64 >= EMPTY as u64 {
            return Err(Error::TooManyRows {
                rows: self.entries.len() as u64 + 1,
            });
        }
        if (self.entries.len() + 1) as f64 > MAX_LOAD_FACTOR * self.slots.len() as f64 {
            self.grow()?;
        }
        let idx = self.entries.len() as u32;
        self.entries.push(entry);
        self.place(idx);
        Ok(())
    }

    fn place(&mut self, idx: u32) {
        let mask = self.slots.len() - 1;
        let mut slot = hash_key(self.entries[idx as usize].key) as usize & mask;
        while self.slots[slot] != EMPTY {
            slot = (slot + 1) & mask;
        }
        self.slots[slot] = idx;
    }

    fn grow(&mut self) -> Result<()> {
        let slots = self.slots.len() * 2;
        check_table_budget(self.entries.len() + 1, slots, self.budget)?;
        self.slots = alloc::vec![EMPTY; slots];
        for idx in 0..self.entries.len() as u32 {
            self.place(idx);
        }
        Ok(())
    }

    /// Build-side rows whose key equals `key`, in insertion order.
    pub fn lookup(&self, key: f64) -> Lookup<'_> {
        let mask = self.slots.len() - 1;
        Lookup {
            table: self,
            key,
            slot: hash_key(key) as usize & mask,
            mask,
        }
    }
}

fn check_table_budget(entries: usize, slots: usize, budget: u64) -> Result<()> {
    let requested = entries as u128 * 12 + slots as u128 * 4;
    if requested > budget as u128 {
        return Err(Error::Capacity { requested, budget });
    }
    Ok(())
}

pub struct Lookup<'a> {
    table: &'a KeyHashTable,
    key: f64,
    slot: usize,
    mask: usize,
}

impl Iterator for Lookup<'_> {
    type Item = RowId;

    fn next(&mut self) -> Option<RowId> {
        loop {
            let idx = self.table.slots[self.slot];
            if idx == EMPTY {
                return None;
            }
            self.slot = (self.slot + 1) & self.mask;
            let e = self.table.entries[idx as usize];
            if e.key == self.key {
                return Some(e.row);
            }
        }
    }
}

pub fn host_hash_build(build_keys: &KeyVector) -> Result<KeyHashTable> {
    KeyHashTable::build(build_keys.entries(), DEFAULT_MEMORY_BUDGET)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchPair {
    pub probe: RowId,
    pub build: RowId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeResult {
    /// Probe order, then build insertion order.
    pub matches: Vec<MatchPair>,
    pub probe_count: usize,
}

/// Appends the matches for `probe` entries to `out`.
pub fn probe_into(table: &KeyHashTable, probe: &[KeyEntry], out: &mut Vec<MatchPair>) {
    for p in probe {
        out.extend(table.lookup(p.key).map(|build| MatchPair {
            probe: p.row,
            build,
        }));
    }
}

pub fn host_hash_probe(table: &KeyHashTable, probe_keys: &KeyVector) -> ProbeResult {
    let mut matches = Vec::new();
    probe_into(table, probe_keys.entries(), &mut matches);
    ProbeResult {
        matches,
        probe_count: probe_keys.source_rows(),
    }
}
