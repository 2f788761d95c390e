//! Wall-clock proxy for the coprocessor: real transfers into a separate
//! buffer and real parallel kernels on a worker pool.
//!
//! Each call stages its input in host memory (untimed), then times four
//! phases: the copy into device memory, the kernel, the copy of the result
//! image into the host receive buffer, and decoding that image. Both buffers
//! persist across calls, as pinned allocations would. Byte counts are computed
//! from the call shape, so they match the modeled backend exactly.

use std::sync::{Mutex, MutexGuard, PoisonError};
use std::time::Instant;

use golp_core::device::{check_mode, KERNEL_CHUNK_ROWS, MATCH_RESULT_BYTES, TOPK_RESULT_BYTES};
use golp_core::host::{probe_into, top_entries};
use golp_core::store::DEFAULT_MEMORY_BUDGET;
use golp_core::{
    Backend, Device, DeviceCallResult, Error, HostCharge, HostClock, KeyEntry, KeyHashTable,
    KeyVector, MatchPair, OpShape, ProbeResult, Result, RowId, TopKResult, TransferLedger,
    TransferMode,
};
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

pub struct ProxyDevice {
    pool: ThreadPool,
    /// Device-side input memory, reused across calls like a pinned allocation.
    device_mem: Mutex<Vec<u8>>,
    /// Host-side receive buffer for results.
    host_mem: Mutex<Vec<u8>>,
}

impl ProxyDevice {
    /// `workers == 0` uses the available hardware parallelism.
    pub fn new(workers: usize) -> std::result::Result<Self, rayon::ThreadPoolBuildError> {
        let pool = ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("golp-proxy-{i}"))
            .build()?;
        Ok(Self {
            pool,
            device_mem: Mutex::new(Vec::new()),
            host_mem: Mutex::new(Vec::new()),
        })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

/// Host-side image of a key vector as it crosses the link.
///
/// Key-only rows are the 12-byte wire entries. Full rows are the 8-byte key
/// followed by `payload_bytes` of payload filler; the proxy only sees the
/// key vector, so payload content is zeros of the right width, and the row
/// identifier of each position stays on the host in `rows`.
struct Staged {
    bytes: Vec<u8>,
    stride: usize,
    mode: TransferMode,
    rows: Vec<RowId>,
}

impl Staged {
    fn new(keys: &KeyVector, mode: TransferMode, payload_bytes: u32) -> Self {
        match mode {
            TransferMode::KeyOnly => Self {
                bytes: keys.to_le_bytes(),
                stride: golp_core::store::KEY_ENTRY_BYTES as usize,
                mode,
                rows: Vec::new(),
            },
            TransferMode::FullRow => {
                let stride = (golp_core::store::KEY_BYTES + u64::from(payload_bytes)) as usize;
                let mut bytes = vec![0u8; stride * keys.entries().len()];
                for (row, e) in bytes.chunks_exact_mut(stride).zip(keys.entries()) {
                    row[..8].copy_from_slice(&e.key.to_le_bytes());
                }
                Self {
                    bytes,
                    stride,
                    mode,
                    rows: keys.entries().iter().map(|e| e.row).collect(),
                }
            }
        }
    }

    /// Entries held in `chunk` of the device buffer, which starts at row `first`.
    fn decode(&self, chunk: &[u8], first: usize) -> Vec<KeyEntry> {
        match self.mode {
            TransferMode::KeyOnly => chunk
                .chunks_exact(self.stride)
                .map(KeyEntry::read_le)
                .collect(),
            TransferMode::FullRow => chunk
                .chunks_exact(self.stride)
                .enumerate()
                .map(|(i, row)| KeyEntry {
                    key: f64::from_le_bytes(row[..8].try_into().unwrap()),
                    row: self.rows[first + i],
                })
                .collect(),
        }
    }
}

fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Grows `buf` to at least `len` bytes. New bytes are written here, outside
/// any timed region, so timed copies never fault pages in.
fn reserve(buf: &Mutex<Vec<u8>>, len: usize) -> MutexGuard<'_, Vec<u8>> {
    let mut guard = buf.lock().unwrap_or_else(PoisonError::into_inner);
    if guard.len() < len {
        guard.resize(len, 0);
    }
    guard
}

/// Copies `parts` back to back into the front of `dst`; only the copies are timed.
fn copy_timed(dst: &mut [u8], parts: &[&[u8]]) -> f64 {
    let ((), t) = timed(|| {
        let mut at = 0;
        for p in parts {
            dst[at..at + p.len()].copy_from_slice(p);
            at += p.len();
        }
    });
    t
}

impl ProxyDevice {
    fn chunked_winners(&self, staged: &Staged, device: &[u8], k: usize) -> Vec<KeyEntry> {
        let chunk_bytes = KERNEL_CHUNK_ROWS * staged.stride;
        self.pool.install(|| {
            let candidates: Vec<KeyEntry> = device
                .par_chunks(chunk_bytes)
                .enumerate()
                .flat_map_iter(|(c, chunk)| {
                    top_entries(&staged.decode(chunk, c * KERNEL_CHUNK_ROWS), k)
                })
                .collect();
            top_entries(&candidates, k)
        })
    }

    fn probe_matches(
        &self,
        build: &Staged,
        build_dev: &[u8],
        probe: &Staged,
        probe_dev: &[u8],
    ) -> Result<Vec<u8>> {
        let build_entries = build.decode(build_dev, 0);
        let table = KeyHashTable::build(&build_entries, DEFAULT_MEMORY_BUDGET)?;
        let chunk_bytes = KERNEL_CHUNK_ROWS * probe.stride;
        let parts: Vec<Vec<MatchPair>> = self.pool.install(|| {
            probe_dev
                .par_chunks(chunk_bytes)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut out = Vec::new();
                    probe_into(
                        &table,
                        &probe.decode(chunk, c * KERNEL_CHUNK_ROWS),
                        &mut out,
                    );
                    out
                })
                .collect()
        });
        let total: usize = parts.iter().map(Vec::len).sum();
        let mut image = Vec::with_capacity(total * MATCH_RESULT_BYTES as usize);
        for m in parts.iter().flatten() {
            image.extend_from_slice(&m.probe.0.to_le_bytes());
            image.extend_from_slice(&m.build.0.to_le_bytes());
        }
        Ok(image)
    }
}

impl Device for ProxyDevice {
    fn backend(&self) -> Backend {
        Backend::Proxy
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
        let staged = Staged::new(keys, mode, payload_bytes);
        let len = staged.bytes.len();
        let mut device = reserve(&self.device_mem, len);
        let t_h2d = copy_timed(&mut device, &[&staged.bytes]);

        let (image, t_kernel) = timed(|| {
            let winners = self.chunked_winners(&staged, &device[..len], k);
            let mut image = Vec::with_capacity(winners.len() * TOPK_RESULT_BYTES as usize);
            for e in &winners {
                image.extend_from_slice(&e.row.0.to_le_bytes());
            }
            image
        });
        drop(device);

        let mut host = reserve(&self.host_mem, image.len());
        let t_d2h = copy_timed(&mut host, &[&image]);
        let (rows, t_post) = timed(|| {
            host[..image.len()]
                .chunks_exact(4)
                .map(|b| RowId(u32::from_le_bytes(b.try_into().unwrap())))
                .collect::<Vec<_>>()
        });
        drop(host);

        let shape = OpShape::TopK {
            n: keys.source_rows() as u64,
            k: k as u64,
        };
        Ok(DeviceCallResult {
            payload: TopKResult {
                rows,
                k_requested: k,
            },
            ledger: TransferLedger::from_phases(
                shape.h2d_bytes(mode, payload_bytes),
                shape.d2h_bytes(),
                t_h2d,
                t_kernel,
                t_d2h,
                t_post,
            ),
            backend: Backend::Proxy,
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
        let build_staged = Staged::new(build, mode, payload_bytes);
        let probe_staged = Staged::new(probe, mode, payload_bytes);
        let (build_len, probe_len) = (build_staged.bytes.len(), probe_staged.bytes.len());
        let mut device = reserve(&self.device_mem, build_len + probe_len);
        let t_h2d = copy_timed(&mut device, &[&build_staged.bytes, &probe_staged.bytes]);

        let (image, t_kernel) = timed(|| {
            let (build_dev, rest) = device.split_at(build_len);
            self.probe_matches(&build_staged, build_dev, &probe_staged, &rest[..probe_len])
        });
        let image = image?;
        drop(device);

        let mut host = reserve(&self.host_mem, image.len());
        let t_d2h = copy_timed(&mut host, &[&image]);
        let (matches, t_post) = timed(|| {
            host[..image.len()]
                .chunks_exact(MATCH_RESULT_BYTES as usize)
                .map(|b| MatchPair {
                    probe: RowId(u32::from_le_bytes(b[..4].try_into().unwrap())),
                    build: RowId(u32::from_le_bytes(b[4..].try_into().unwrap())),
                })
                .collect::<Vec<_>>()
        });
        drop(host);

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
            ledger: TransferLedger::from_phases(
                shape.h2d_bytes(mode, payload_bytes),
                shape.d2h_bytes(),
                t_h2d,
                t_kernel,
                t_d2h,
                t_post,
            ),
            backend: Backend::Proxy,
        })
    }
}

/// Monotonic wall clock for host-side work.
#[derive(Debug, Clone, Copy, Default)]
pub struct WallClock;

impl HostClock for WallClock {
    fn time<R>(&self, _charge: HostCharge, f: impl FnOnce() -> R) -> (R, f64) {
        timed(f)
    }
}

/// Smallest nonzero step observed between consecutive clock reads.
pub fn timer_resolution() -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..64 {
        let start = Instant::now();
        let mut now = Instant::now();
        while now == start {
            now = Instant::now();
        }
        best = best.min((now - start).as_secs_f64());
    }
    best
}

/// Repeats needed so that a clock of `resolution` seconds still delivers
/// microsecond-grade medians: scaled up by the resolution in microseconds.
pub fn repeats_for_resolution(repeats: usize, resolution: f64) -> usize {
    const TARGET: f64 = 1e-6;
    if resolution <= TARGET {
        repeats
    } else {
        repeats.saturating_mul((resolution / TARGET).ceil() as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use golp_core::{host_hash_build, host_hash_probe, host_topk};

    fn keys(pairs: &[(f64, u32)]) -> KeyVector {
        KeyVector::from_pairs(pairs).unwrap()
    }

    #[test]
    fn topk_matches_host_in_both_modes() {
        let kv = keys(&[(3.0, 0), (9.0, 1), (3.0, 2), (-1.0, 3), (9.0, 4)]);
        let dev = ProxyDevice::new(2).unwrap();
        let want = host_topk(&kv, 3).unwrap();
        for mode in [TransferMode::KeyOnly, TransferMode::FullRow] {
            let got = dev.topk(&kv, 3, mode, 20).unwrap();
            assert_eq!(got.payload, want);
            assert_eq!(got.backend, Backend::Proxy);
        }
    }

    #[test]
    fn ledger_bytes_are_computed() {
        let kv = keys(&[(1.0, 0), (2.0, 1), (3.0, 2)]);
        let dev = ProxyDevice::new(1).unwrap();
        let key_only = dev.topk(&kv, 2, TransferMode::KeyOnly, 188).unwrap().ledger;
        assert_eq!((key_only.h2d_bytes, key_only.d2h_bytes), (36, 8));
        let full = dev.topk(&kv, 2, TransferMode::FullRow, 188).unwrap().ledger;
        assert_eq!(full.h2d_bytes, 3 * 196);
        let sum = full.t_h2d + full.t_kernel + full.t_d2h + full.t_post;
        assert!((full.total - sum).abs() <= 1e-15);
    }

    #[test]
    fn probe_matches_host() {
        let build = keys(&[(1.0, 0), (2.0, 1), (1.0, 2)]);
        let probe = keys(&[(1.0, 0), (5.0, 1), (2.0, 2)]);
        let want = host_hash_probe(&host_hash_build(&build).unwrap(), &probe);
        let dev = ProxyDevice::new(2).unwrap();
        for mode in [TransferMode::KeyOnly, TransferMode::FullRow] {
            let got = dev.probe(&build, &probe, mode, 8).unwrap();
            assert_eq!(got.payload, want);
            assert_eq!(got.ledger.d2h_bytes, 8 * want.matches.len() as u64);
        }
    }

    #[test]
    fn full_row_without_width_is_rejected() {
        let dev = ProxyDevice::new(1).unwrap();
        assert!(dev
            .topk(&keys(&[(1.0, 0)]), 1, TransferMode::FullRow, 0)
            .is_err());
        assert_eq!(
            dev.topk(&keys(&[(1.0, 0)]), 0, TransferMode::KeyOnly, 0),
            Err(Error::ZeroK)
        );
    }

    #[test]
    fn resolution_scaling() {
        assert_eq!(repeats_for_resolution(31, 1e-9), 31);
        assert_eq!(repeats_for_resolution(31, 4e-6), 124);
        assert!(timer_resolution() > 0.0);
    }
}
