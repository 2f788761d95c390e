//! Least-squares cost curves and the host/device crossover size.
//!
//! The host curve is `a * n * log2(n) + b`, the key-only transfer curve
//! `c * n + d`. The device's remaining terms (launch, kernel, post-processing)
//! come from a [`DeviceProfile`]. The break-even size is the smallest `n`
//! where the two end-to-end curves meet.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::device::DeviceProfile;
use crate::error::{Error, Result};

/// `n * log2(max(n, 2))`, the sort-family basis.
#[inline]
pub fn n_log2_n(n: f64) -> f64 {
    n * libm::log2(n.max(2.0))
}

/// Unconstrained ordinary least squares for `y = slope * x + intercept`.
pub(crate) fn least_squares(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points"));
    }
    let len = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / len;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / len;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("all abscissae are equal"));
    }
    let slope = sxy / sxx;
    Ok((slope, mean_y - slope * mean_x))
}

/// Least squares for `y = slope * x`.
pub(crate) fn slope_through_origin(points: &[(f64, f64)]) -> Result<f64> {
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("no nonzero abscissae"));
    }
    Ok(points.iter().map(|p| p.0 * p.1).sum::<f64>() / sxx)
}

/// Weighted least squares for `y = slope * x + intercept` with weights
/// `1 / y^2`, i.e. minimizing relative residuals. Points with `y <= 0` are
/// skipped.
pub(crate) fn least_squares_relative(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let (mut sw, mut swx, mut swy) = (0.0, 0.0, 0.0);
    let mut used = 0usize;
    for &(x, y) in points.iter().filter(|p| p.1 > 0.0) {
        let w = 1.0 / (y * y);
        sw += w;
        swx += w * x;
        swy += w * y;
        used += 1;
    }
    if used < 2 {
        return Err(Error::DegenerateFit("need at least two positive points"));
    }
    let (mean_x, mean_y) = (swx / sw, swy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points.iter().filter(|p| p.1 > 0.0) {
        let w = 1.0 / (y * y);
        let dx = x - mean_x;
        sxx += w * dx * dx;
        sxy += w * dx * (y - mean_y);
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("all abscissae are equal"));
    }
    let slope = sxy / sxx;
    Ok((slope, mean_y - slope * mean_x))
}

/// `y = slope * x` minimizing relative residuals; points with `y <= 0` are
/// skipped.
pub(crate) fn slope_through_origin_relative(points: &[(f64, f64)]) -> Result<f64> {
    let (mut s1, mut s2) = (0.0, 0.0);
    for &(x, y) in points.iter().filter(|p| p.1 > 0.0) {
        let r = x / y;
        s1 += r;
        s2 += r * r;
    }
    if !(s2 > 0.0) {
        return Err(Error::DegenerateFit("no nonzero abscissae"));
    }
    Ok(s1 / s2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Residual sum of squares.
    pub rss: f64,
    /// Coefficient of determination.
    pub r2: f64,
}

impl LinearFit {
    fn scored(points: &[(f64, f64)], slope: f64, intercept: f64) -> Self {
        let len = points.len() as f64;
        let mean_y = points.iter().map(|p| p.1).sum::<f64>() / len;
        let (mut rss, mut tss) = (0.0, 0.0);
        for &(x, y) in points {
            let r = y - (slope * x + intercept);
            rss += r * r;
            tss += (y - mean_y) * (y - mean_y);
        }
        let r2 = if tss > 0.0 {
            1.0 - rss / tss
        } else if rss == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        };
        Self {
            slope,
            intercept,
            rss,
            r2,
        }
    }
}

/// Fits `seconds = slope * basis(n) + intercept`; a negative slope is clamped
/// to zero and the intercept refitted as the mean.
pub fn fit_basis(points: &[(f64, f64)], basis: impl Fn(f64) -> f64) -> Result<LinearFit> {
    let xy: Vec<(f64, f64)> = points.iter().map(|&(n, y)| (basis(n), y)).collect();
    if distinct_x(points) < 2 {
        return Err(Error::DegenerateFit("need at least two distinct sizes"));
    }
    let first = xy[0].1;
    let (slope, intercept) = if xy.iter().all(|p| p.1 == first) {
        (0.0, first)
    } else {
        let (slope, intercept) = least_squares(&xy)?;
        if slope < 0.0 {
            (0.0, xy.iter().map(|p| p.1).sum::<f64>() / xy.len() as f64)
        } else {
            (slope, intercept)
        }
    };
    Ok(LinearFit::scored(&xy, slope, intercept))
}

/// Like [`fit_basis`] but with both coefficients held nonnegative.
pub fn fit_basis_nonneg(points: &[(f64, f64)], basis: impl Fn(f64) -> f64) -> Result<LinearFit> {
    let fit = fit_basis(points, &basis)?;
    if fit.intercept >= 0.0 {
        return Ok(fit);
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|&(n, y)| (basis(n), y)).collect();
    let slope = slope_through_origin(&xy)?.max(0.0);
    Ok(LinearFit::scored(&xy, slope, 0.0))
}

fn distinct_x(points: &[(f64, f64)]) -> usize {
    let mut xs: Vec<u64> = points.iter().map(|p| p.0.to_bits()).collect();
    xs.sort_unstable();
    xs.dedup();
    xs.len()
}

/// `seconds = a * n * log2(n) + b` over points with `n >= 2`.
pub fn fit_nlogn(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.iter().any(|p| !(p.0 >= 2.0)) {
        return Err(Error::DegenerateFit("n log n fits need n >= 2"));
    }
    fit_basis(points, n_log2_n)
}

/// `seconds = c * n + d`.
pub fn fit_linear(points: &[(f64, f64)]) -> Result<LinearFit> {
    fit_basis(points, |n| n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub rss_cpu: f64,
    pub rss_tx: f64,
    pub r2_cpu: f64,
    pub r2_tx: f64,
}

impl FitResult {
    pub fn from_fits(cpu: LinearFit, tx: LinearFit) -> Self {
        Self {
            a: cpu.slope,
            b: cpu.intercept,
            c: tx.slope,
            d: tx.intercept,
            rss_cpu: cpu.rss,
            rss_tx: tx.rss,
            r2_cpu: cpu.r2,
            r2_tx: tx.r2,
        }
    }

    /// Fits both curves from `(n, seconds)` points.
    pub fn fit(cpu: &[(f64, f64)], tx: &[(f64, f64)]) -> Result<Self> {
        Ok(Self::from_fits(fit_nlogn(cpu)?, fit_linear(tx)?))
    }

    pub fn host_seconds(&self, n: f64) -> f64 {
        self.a * n_log2_n(n) + self.b
    }

    pub fn transfer_seconds(&self, n: f64) -> f64 {
        self.c * n + self.d
    }
}

/// The non-transfer part of the device curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceTerms {
    pub launch: f64,
    pub kernel_rate: f64,
    pub post_rate: f64,
    pub k: f64,
}

impl DeviceTerms {
    pub fn topk(profile: &DeviceProfile, k: u64) -> Self {
        Self {
            launch: profile.launch_overhead,
            kernel_rate: profile.kernel_rate_topk,
            post_rate: profile.post_rate,
            k: k as f64,
        }
    }

    pub fn seconds(&self, n: f64) -> f64 {
        self.launch + self.kernel_rate * n + self.post_rate * self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakEven {
    pub n_star: f64,
    pub fit: FitResult,
    pub terms: DeviceTerms,
    pub measured_n_star: Option<f64>,
    pub relative_error: Option<f64>,
}

impl BreakEven {
    pub fn device_seconds(&self, n: f64) -> f64 {
        device_curve(&self.fit, &self.terms, n)
    }

    /// Records the crossover observed in `sweep`.
    pub fn validated(mut self, sweep: &[SweepPoint]) -> Result<Self> {
        let check = validate_break_even(self.n_star, sweep)?;
        self.measured_n_star = Some(check.measured_n_star);
        self.relative_error = Some(check.relative_error);
        Ok(self)
    }
}

fn device_curve(fit: &FitResult, terms: &DeviceTerms, n: f64) -> f64 {
    fit.transfer_seconds(n) + terms.seconds(n)
}

pub const SOLVE_LOWER: f64 = 2.0;
pub const SOLVE_UPPER: f64 = 1_099_511_627_776.0; // 2^40
const SCAN_POINTS: usize = 4096;

/// Smallest `n` in `[2, 2^40]` where the host curve meets the device curve.
///
/// A geometric scan locates the first sign change of `host - device`, then
/// bisection narrows it until the curves agree to 1e-9 relative.
pub fn solve_break_even(fit: &FitResult, terms: &DeviceTerms) -> Result<BreakEven> {
    if !(fit.a > 0.0) {
        return Err(Error::NoCrossing);
    }
    let diff = |n: f64| fit.host_seconds(n) - device_curve(fit, terms, n);

    let ratio = libm::pow(SOLVE_UPPER / SOLVE_LOWER, 1.0 / (SCAN_POINTS - 1) as f64);
    let mut lo = SOLVE_LOWER;
    let mut f_lo = diff(lo);
    let mut bracket = None;
    if f_lo == 0.0 {
        bracket = Some((lo, lo));
    }
    for i in 1..SCAN_POINTS {
        if bracket.is_some() {
            break;
        }
        let hi = if i == SCAN_POINTS - 1 {
            SOLVE_UPPER
        } else {
            SOLVE_LOWER * libm::pow(ratio, i as f64)
        };
        let f_hi = diff(hi);
        if f_hi == 0.0 {
            bracket = Some((hi, hi));
        } else if (f_hi > 0.0) != (f_lo > 0.0) {
            bracket = Some((lo, hi));
        }
        lo = hi;
        f_lo = f_hi;
    }
    let (mut lo, mut hi) = bracket.ok_or(Error::NoCrossing)?;

    let lo_positive = diff(lo) > 0.0;
    for _ in 0..200 {
        if hi - lo <= lo * 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f_mid = diff(mid);
        if f_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if (f_mid > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BreakEven {
        n_star: 0.5 * (lo + hi),
        fit: *fit,
        terms: *terms,
        measured_n_star: None,
        relative_error: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: f64,
    pub host_seconds: f64,
    pub device_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossoverCheck {
    pub measured_n_star: f64,
    pub relative_error: f64,
}

/// Compares a predicted crossover with the first point of `sweep` at which
/// the device is strictly cheaper, interpolating linearly between that point
/// and its predecessor.
pub fn validate_break_even(n_star: f64, sweep: &[SweepPoint]) -> Result<CrossoverCheck> {
    let first = sweep
        .iter()
        .position(|p| p.device_seconds < p.host_seconds)
        .ok_or(Error::Unbracketed)?;
    if first == 0 {
        return Err(Error::Unbracketed);
    }
    let (p0, p1) = (sweep[first - 1], sweep[first]);
    let d0 = p0.host_seconds - p0.device_seconds; // <= 0
    let d1 = p1.host_seconds - p1.device_seconds; // > 0
    let measured = p0.n + (p1.n - p0.n) * (-d0 / (d1 - d0));
    Ok(CrossoverCheck {
        measured_n_star: measured,
        relative_error: (n_star - measured).abs() / measured,
    })
}

/// Sizes from `lo` to `hi` growing by `step` (a fraction) each time; both
/// ends included, duplicates removed.
pub fn geometric_grid(lo: u64, hi: u64, step: f64) -> Vec<u64> {
    let mut out = Vec::new();
    if lo > hi {
        return out;
    }
    let mut x = lo.max(1) as f64;
    while x < hi as f64 {
        let n = libm::round(x) as u64;
        if out.last() != Some(&n) {
            out.push(n);
        }
        x *= 1.0 + step;
    }
    if out.last() != Some(&hi) {
        out.push(hi);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn synth(points: &[f64], f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        points.iter().map(|&n| (n, f(n))).collect()
    }

    const GRID: [f64; 6] = [1e3, 1e4, 1e5, 5e5, 1e6, 3e6];

    #[test]
    fn nlogn_exact_recovery() {
        let pts = synth(&GRID, |n| 2e-9 * n_log2_n(n) + 1e-4);
        let f = fit_nlogn(&pts).unwrap();
        assert!((f.slope - 2e-9).abs() < 1e-12);
        assert!((f.intercept - 1e-4).abs() < 1e-12);
        assert!(f.r2 > 1.0 - 1e-12);
    }

    #[test]
    fn two_points_interpolate() {
        let f = fit_nlogn(&[(16.0, 3.0), (1024.0, 7.0)]).unwrap();
        assert!(f.rss < 1e-24);
        assert!((f.slope * n_log2_n(16.0) + f.intercept - 3.0).abs() < 1e-12);
    }

    #[test]
    fn linear_exact_recovery() {
        let f = fit_linear(&synth(&GRID, |n| 5e-9 * n + 2e-5)).unwrap();
        assert!(((f.slope - 5e-9) / 5e-9).abs() < 1e-12);
        assert!(((f.intercept - 2e-5) / 2e-5).abs() < 1e-9);
    }

    #[test]
    fn constant_data_clamps_slope() {
        let f = fit_linear(&synth(&GRID, |_| 0.1)).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.intercept, 0.1);
        assert_eq!(f.r2, 1.0);
        let f = fit_linear(&synth(&GRID, |n| 1.0 - 1e-9 * n)).unwrap();
        assert_eq!(f.slope, 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(fit_nlogn(&[(100.0, 1.0), (100.0, 2.0)]).is_err());
        assert!(fit_nlogn(&[(100.0, 1.0)]).is_err());
        assert!(fit_nlogn(&[(1.0, 1.0), (100.0, 2.0)]).is_err());
        assert!(fit_linear(&[]).is_err());
    }

    #[test]
    fn nonneg_fit_moves_to_origin() {
        let pts = synth(&GRID, |n| 1e-9 * n - 1e-3);
        let f = fit_basis_nonneg(&pts, |n| n).unwrap();
        assert_eq!(f.intercept, 0.0);
        assert!(f.slope > 0.0);
    }

    #[test]
    fn analytic_break_even() {
        let fit = FitResult {
            a: 2e-9,
            b: 0.0,
            c: 4e-8,
            d: 0.0,
            rss_cpu: 0.0,
            rss_tx: 0.0,
            r2_cpu: 1.0,
            r2_tx: 1.0,
        };
        let terms = DeviceTerms {
            launch: 0.0,
            kernel_rate: 0.0,
            post_rate: 0.0,
            k: 100.0,
        };
        let be = solve_break_even(&fit, &terms).unwrap();
        assert!(((be.n_star - 1_048_576.0) / 1_048_576.0).abs() <= 1e-9);

        let mut split = terms;
        split.kernel_rate = 1e-8;
        let mut fit2 = fit;
        fit2.c = 3e-8;
        let be = solve_break_even(&fit2, &split).unwrap();
        assert!(((be.n_star - 1_048_576.0) / 1_048_576.0).abs() <= 1e-9);
    }

    #[test]
    fn zero_slope_host_never_crosses() {
        let mut fit = FitResult::from_fits(
            LinearFit {
                slope: 0.0,
                intercept: 1.0,
                rss: 0.0,
                r2: 1.0,
            },
            LinearFit {
                slope: 1e-9,
                intercept: 0.0,
                rss: 0.0,
                r2: 1.0,
            },
        );
        let terms = DeviceTerms::topk(&DeviceProfile::default(), 100);
        assert_eq!(solve_break_even(&fit, &terms), Err(Error::NoCrossing));
        // host cheaper everywhere on the bracket
        fit.a = 1e-30;
        fit.b = 0.0;
        assert_eq!(solve_break_even(&fit, &terms), Err(Error::NoCrossing));
    }

    fn sweep_from(
        host: impl Fn(f64) -> f64,
        dev: impl Fn(f64) -> f64,
        grid: &[u64],
    ) -> Vec<SweepPoint> {
        grid.iter()
            .map(|&n| SweepPoint {
                n: n as f64,
                host_seconds: host(n as f64),
                device_seconds: dev(n as f64),
            })
            .collect()
    }

    #[test]
    fn self_consistent_sweep_has_small_error() {
        let fit = FitResult::fit(
            &synth(&GRID, |n| 1e-9 * n_log2_n(n) + 5e-5),
            &synth(&GRID, |n| 6e-9 * n + 2e-7),
        )
        .unwrap();
        let terms = DeviceTerms::topk(&DeviceProfile::default(), 100);
        let be = solve_break_even(&fit, &terms).unwrap();
        let sweep = sweep_from(
            |n| fit.host_seconds(n),
            |n| be.device_seconds(n),
            &geometric_grid(1000, 3_000_000, 0.01),
        );
        let be = be.validated(&sweep).unwrap();
        assert!(be.relative_error.unwrap() < 1e-4);
    }

    #[test]
    fn forced_crossover_error() {
        // host - device changes sign at n = 2000; claim 1000
        let sweep = sweep_from(|n| n, |_| 2000.0, &[500, 1500, 2500, 3500]);
        let check = validate_break_even(1000.0, &sweep).unwrap();
        assert!((check.measured_n_star - 2000.0).abs() < 1e-9);
        assert!((check.relative_error - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unbracketed_sweeps() {
        let device_always = sweep_from(|_| 2.0, |_| 1.0, &[1, 2, 3]);
        assert_eq!(
            validate_break_even(1.0, &device_always),
            Err(Error::Unbracketed)
        );
        let host_always = sweep_from(|_| 1.0, |_| 2.0, &[1, 2, 3]);
        assert_eq!(
            validate_break_even(1.0, &host_always),
            Err(Error::Unbracketed)
        );
        assert_eq!(validate_break_even(1.0, &[]), Err(Error::Unbracketed));
    }

    #[test]
    fn geometric_grid_ends() {
        let g = geometric_grid(1000, 2000, 0.01);
        assert_eq!(g.first(), Some(&1000));
        assert_eq!(g.last(), Some(&2000));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g
            .windows(2)
            .all(|w| (w[1] - w[0]) as f64 <= 0.0101 * w[0] as f64 + 1.0));
        assert_eq!(geometric_grid(5, 5, 0.5), vec![5]);
        assert!(geometric_grid(6, 5, 0.5).is_empty());
    }
}
