//! Latency summaries using nearest-rank percentiles.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Sorted ascending.
    pub samples: Vec<f64>,
    pub median: f64,
    pub p95: f64,
    pub p99: f64,
    pub mean: f64,
}

/// The order statistic at 1-based rank `ceil(percent / 100 * len)`.
///
/// `sorted` must be nonempty and ascending.
pub fn nearest_rank(sorted: &[f64], percent: u32) -> f64 {
    let len = sorted.len();
    let rank = (percent as usize * len).div_ceil(100).clamp(1, len);
    sorted[rank - 1]
}

pub fn compute_stats(samples: &[f64]) -> Result<LatencyStats> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(LatencyStats {
        median: nearest_rank(&sorted, 50),
        p95: nearest_rank(&sorted, 95),
        p99: nearest_rank(&sorted, 99),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        samples: sorted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_to_hundred() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        let st = compute_stats(&s).unwrap();
        assert_eq!(st.median, 50.0);
        assert_eq!(st.p95, 95.0);
        assert_eq!(st.p99, 99.0);
        assert_eq!(st.mean, 50.5);
    }

    #[test]
    fn single_sample() {
        let st = compute_stats(&[0.25]).unwrap();
        assert_eq!((st.median, st.p95, st.p99), (0.25, 0.25, 0.25));
    }

    #[test]
    fn unsorted_three() {
        assert_eq!(compute_stats(&[5.0, 1.0, 3.0]).unwrap().median, 3.0);
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(compute_stats(&[]), Err(Error::EmptySamples));
    }

    /// Brute force: the smallest sample with at least p% of samples at or below it.
    fn brute(samples: &[f64], percent: u32) -> f64 {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        *sorted
            .iter()
            .find(|&&v| {
                let at_or_below = samples.iter().filter(|&&s| s <= v).count();
                at_or_below as f64 * 100.0 >= percent as f64 * samples.len() as f64
            })
            .unwrap()
    }

    proptest! {
        #[test]
        fn matches_brute_force(samples in prop::collection::vec(0u32..50, 1..300)) {
            let samples: Vec<f64> = samples.into_iter().map(f64::from).collect();
            let st = compute_stats(&samples).unwrap();
            prop_assert_eq!(st.median, brute(&samples, 50));
            prop_assert_eq!(st.p95, brute(&samples, 95));
            prop_assert_eq!(st.p99, brute(&samples, 99));
        }
    }
}
