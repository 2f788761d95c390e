//! Wall-clock calibration on the proxy device. Timing tests share a lock so
//! they never compete for cores.

use std::hint::black_box;
use std::sync::Mutex;
use std::time::Instant;

use golp::harness::run_scaling_baseline;
use golp::{ProxyDevice, WallClock};
use golp_core::{
    calibrate_cpu_model, calibrate_profile, estimate_cpu_cost, estimate_device_cost, extract_keys,
    generate_table, host_full_sort, CpuOp, CpuSample, Device, DeviceOp, KeyVector, OpShape,
    ProfileSample, TransferMode, WorkloadSpec,
};

static TIMING: Mutex<()> = Mutex::new(());

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// The profile has one kernel rate for both transfer modes, while the proxy
/// kernel reads strided keys in full-row mode, so calibration and the check
/// use key-only calls, the mode the gate offloads with. Rounds visit every
/// size in turn so machine drift does not line up with `n`.
#[test]
fn profile_repredicts_key_only_calls() {
    let _g = TIMING.lock().unwrap_or_else(|e| e.into_inner());
    const SIZES: [u64; 4] = [100_000, 500_000, 1_000_000, 3_000_000];
    const ROUNDS: usize = 9;
    let device = ProxyDevice::new(0).unwrap();
    let keys: Vec<KeyVector> = SIZES
        .iter()
        .map(|&n| extract_keys(&generate_table(n, 16, n).unwrap()))
        .collect();
    let mut samples = Vec::new();
    for round in 0..=ROUNDS {
        for (kv, &n) in keys.iter().zip(&SIZES) {
            let call = device.topk(kv, 100, TransferMode::KeyOnly, 16).unwrap();
            if round > 0 {
                samples.push(ProfileSample {
                    op: DeviceOp::TopK,
                    mode: TransferMode::KeyOnly,
                    n,
                    ledger: call.ledger,
                });
            }
        }
    }
    let profile = calibrate_profile(&samples).unwrap();
    let errors: Vec<f64> = SIZES
        .iter()
        .map(|&n| {
            let measured = median(
                samples
                    .iter()
                    .filter(|s| s.n == n)
                    .map(|s| s.ledger.total)
                    .collect(),
            );
            let predicted = estimate_device_cost(
                OpShape::TopK { n, k: 100 },
                TransferMode::KeyOnly,
                16,
                &profile,
            )
            .total;
            (predicted - measured).abs() / measured
        })
        .collect();
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let err = (sorted[1] + sorted[2]) / 2.0;
    assert!(err <= 0.15, "median relative error {err:.3} ({errors:?})");
    assert!(errors[2] <= 0.15, "n=1e6 relative error {:.3}", errors[2]);
}

/// Training and held-out sizes are timed in the same interleaved rounds.
#[test]
fn cpu_model_fits_and_predicts_held_out_sizes() {
    let _g = TIMING.lock().unwrap_or_else(|e| e.into_inner());
    const TRAIN: [u64; 4] = [10_000, 100_000, 500_000, 1_000_000];
    const HELD: [u64; 3] = [20_000, 200_000, 2_000_000];
    const ROUNDS: usize = 9;
    let sizes: Vec<u64> = TRAIN.iter().chain(&HELD).copied().collect();
    let keys: Vec<KeyVector> = sizes
        .iter()
        .map(|&n| extract_keys(&generate_table(n, 8, n).unwrap()))
        .collect();
    let mut times = vec![Vec::new(); sizes.len()];
    for round in 0..=ROUNDS {
        for (i, kv) in keys.iter().enumerate() {
            let start = Instant::now();
            black_box(host_full_sort(black_box(kv)));
            if round > 0 {
                times[i].push(start.elapsed().as_secs_f64());
            }
        }
    }
    let sample = |n: u64| CpuSample {
        op: CpuOp::FullSort,
        n,
        k: 0,
        seconds: median(times[sizes.iter().position(|&s| s == n).unwrap()].clone()),
    };
    let train: Vec<CpuSample> = TRAIN.iter().map(|&n| sample(n)).collect();
    let pts: Vec<(f64, f64)> = train.iter().map(|s| (s.n as f64, s.seconds)).collect();
    let r2 = golp_core::fit_nlogn(&pts).unwrap().r2;
    assert!(r2 >= 0.95, "r2 {r2}");

    let model = calibrate_cpu_model(&train).unwrap();
    let errors: Vec<f64> = HELD
        .iter()
        .map(|&n| {
            let s = sample(n);
            (estimate_cpu_cost(&model, CpuOp::FullSort, n, 0) - s.seconds).abs() / s.seconds
        })
        .collect();
    let err = median(errors.clone());
    assert!(
        err <= 0.20,
        "held-out median relative error {err:.3} ({errors:?})"
    );
}

#[test]
fn topk_grows_slower_than_full_sort() {
    let _g = TIMING.lock().unwrap_or_else(|e| e.into_inner());
    let rows = run_scaling_baseline(
        &WorkloadSpec {
            n_grid: vec![10_000, 1_000_000],
            repeats: 9,
            ..WorkloadSpec::default()
        },
        &WallClock,
    )
    .unwrap();
    let at = |n: u64, op: CpuOp| {
        rows.iter()
            .find(|r| r.n == n && r.op == op)
            .unwrap()
            .stats
            .median
    };
    let sort_growth = at(1_000_000, CpuOp::FullSort) / at(10_000, CpuOp::FullSort);
    let topk_growth = at(1_000_000, CpuOp::TopK) / at(10_000, CpuOp::TopK);
    assert!(
        sort_growth > topk_growth,
        "sort x{sort_growth:.1}, top-k x{topk_growth:.1}"
    );
    // n log n from 1e4 to 1e6 is 150x; a full sort should land well past linear
    assert!(sort_growth > 100.0, "sort x{sort_growth:.1}");
}
