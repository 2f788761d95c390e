//! The proxy device returns exactly what the host primitives return.

use golp::ProxyDevice;
use golp_core::{
    host_hash_build, host_hash_probe, host_topk, Device, KeyEntry, KeyVector, MatchPair, RowId,
    TransferMode,
};
use proptest::prelude::*;

fn entries(max_len: usize) -> impl Strategy<Value = Vec<KeyEntry>> {
    let key_range = prop_oneof![Just(6i64), Just(10_000i64), Just(1i64 << 52)];
    (key_range, 0..=max_len).prop_flat_map(|(range, len)| {
        prop::collection::vec(-range..range, len).prop_map(|keys| {
            keys.into_iter()
                .enumerate()
                .map(|(i, k)| KeyEntry::new(k as f64, i as u32))
                .collect()
        })
    })
}

fn oracle_topk(e: &[KeyEntry], k: usize) -> Vec<RowId> {
    let mut v = e.to_vec();
    v.sort_by(|a, b| b.key.partial_cmp(&a.key).unwrap().then(a.row.cmp(&b.row)));
    v.into_iter().take(k).map(|e| e.row).collect()
}

fn oracle_join(build: &[KeyEntry], probe: &[KeyEntry]) -> Vec<MatchPair> {
    probe
        .iter()
        .flat_map(|p| {
            build
                .iter()
                .filter(move |b| b.key == p.key)
                .map(move |b| MatchPair {
                    probe: p.row,
                    build: b.row,
                })
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn topk_equals_oracle(e in entries(200_000), k in 1usize..500, workers in 1usize..4) {
        let dev = ProxyDevice::new(workers).unwrap();
        let kv = KeyVector::new(e.clone()).unwrap();
        let want = oracle_topk(&e, k);
        prop_assert_eq!(&host_topk(&kv, k).unwrap().rows, &want);
        for mode in [TransferMode::KeyOnly, TransferMode::FullRow] {
            let got = dev.topk(&kv, k, mode, 24).unwrap();
            prop_assert_eq!(&got.payload.rows, &want);
            prop_assert_eq!(got.ledger.d2h_bytes, 4 * want.len() as u64);
        }
    }

    #[test]
    fn probe_equals_oracle(build in entries(2_000), probe in entries(2_000), workers in 1usize..4) {
        let dev = ProxyDevice::new(workers).unwrap();
        let want = oracle_join(&build, &probe);
        let bk = KeyVector::new(build).unwrap();
        let pk = KeyVector::new(probe).unwrap();
        prop_assert_eq!(&host_hash_probe(&host_hash_build(&bk).unwrap(), &pk).matches, &want);
        for mode in [TransferMode::KeyOnly, TransferMode::FullRow] {
            let got = dev.probe(&bk, &pk, mode, 24).unwrap();
            prop_assert_eq!(&got.payload.matches, &want);
            prop_assert_eq!(got.ledger.h2d_bytes, match mode {
                TransferMode::KeyOnly => 12 * (bk.source_rows() + pk.source_rows()) as u64,
                TransferMode::FullRow => 32 * (bk.source_rows() + pk.source_rows()) as u64,
            });
        }
    }
}

#[test]
fn rows_spanning_many_chunks() {
    // three kernel chunks with the winners in the last one and ties across chunks
    let n = 3 * 65_536 + 17;
    let e: Vec<KeyEntry> = (0..n as u32)
        .map(|i| KeyEntry::new(f64::from(i % 1000), i))
        .collect();
    let kv = KeyVector::new(e.clone()).unwrap();
    let dev = ProxyDevice::new(3).unwrap();
    for mode in [TransferMode::KeyOnly, TransferMode::FullRow] {
        assert_eq!(
            dev.topk(&kv, 250, mode, 8).unwrap().payload.rows,
            oracle_topk(&e, 250)
        );
    }
}

#[test]
fn buffers_are_reused_across_shrinking_calls() {
    let dev = ProxyDevice::new(2).unwrap();
    let big: Vec<KeyEntry> = (0..50_000u32)
        .map(|i| KeyEntry::new(f64::from(i), i))
        .collect();
    let small: Vec<KeyEntry> = (0..10u32)
        .map(|i| KeyEntry::new(-f64::from(i), i))
        .collect();
    dev.topk(&KeyVector::new(big).unwrap(), 5, TransferMode::FullRow, 64)
        .unwrap();
    let got = dev
        .topk(
            &KeyVector::new(small.clone()).unwrap(),
            3,
            TransferMode::KeyOnly,
            64,
        )
        .unwrap();
    assert_eq!(got.payload.rows, oracle_topk(&small, 3));
}
