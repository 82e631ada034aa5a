//! Seasonal-trend decomposition by loess.
//!
//! The classic inner loop: detrend, smooth each cycle-subseries with loess,
//! remove the low-pass leakage, re-center, then re-estimate the trend from
//! the deseasonalized series. Two passes suffice here. The remainder is
//! defined as `series − trend − seasonal`, so additivity is exact by
//! construction, and the seasonal component is re-centered cycle by cycle so
//! every full cycle sums to (numerically) zero.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StlDecomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub remainder: Vec<f64>,
    pub period: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StlOptions {
    /// Loess window (in cycle-subseries points) for seasonal smoothing.
    pub seasonal_smoother: usize,
    /// Loess window for the trend; `None` picks the next odd number
    /// at or above `1.5 × period`.
    pub trend_smoother: Option<usize>,
    pub outer_iterations: usize,
}

impl Default for StlOptions {
    fn default() -> Self {
        StlOptions {
            seasonal_smoother: 7,
            trend_smoother: None,
            outer_iterations: 2,
        }
    }
}

/// Weighted degree-1 loess over an equally spaced series.
///
/// Each point is fit from its `window` nearest neighbours with tricube
/// weights and evaluated at the point itself.
pub(crate) fn loess_smooth(ys: &[f64], window: usize) -> Vec<f64> {
    let n = ys.len();
    if n == 0 {
        return Vec::new();
    }
    let q = window.clamp(2, n);
    let mut out = vec![0.0; n];
    for (i, slot) in out.iter_mut().enumerate() {
        // Contiguous window of q points nearest to i.
        let half = q / 2;
        let start = if i <= half { 0 } else { (i - half).min(n - q) };
        let end = start + q;
        let dmax = (i - start).max(end - 1 - i).max(1) as f64;

        // Weighted least squares for intercept + slope around x = i.
        let (mut sw, mut swx, mut swxx, mut swy, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (j, &y) in ys.iter().enumerate().take(end).skip(start) {
            let d = (j as f64 - i as f64).abs() / dmax;
            let tri = {
                let c = (1.0 - d * d * d).max(0.0);
                c * c * c
            };
            let x = j as f64 - i as f64;
            sw += tri;
            swx += tri * x;
            swxx += tri * x * x;
            swy += tri * y;
            swxy += tri * x * y;
        }
        let det = sw * swxx - swx * swx;
        *slot = if det.abs() > 1e-12 * (sw * swxx).abs().max(1e-300) {
            // Value at x = 0 is the intercept.
            (swxx * swy - swx * swxy) / det
        } else if sw > 0.0 {
            swy / sw
        } else {
            ys[i]
        };
    }
    out
}

/// Centered moving average with truncated windows at the edges.
fn centered_ma(xs: &[f64], window: usize) -> Vec<f64> {
    let n = xs.len();
    let half = window / 2;
    let mut out = vec![0.0; n];
    for (i, slot) in out.iter_mut().enumerate() {
        let start = i.saturating_sub(half);
        let end = (i + half + 1).min(n);
        *slot = xs[start..end].iter().sum::<f64>() / (end - start) as f64;
    }
    out
}

fn next_odd_at_least(x: f64) -> usize {
    let mut v = x.ceil() as usize;
    if v.is_multiple_of(2) {
        v += 1;
    }
    v
}

pub fn stl_decompose(
    series: &[f64],
    period: usize,
    options: &StlOptions,
) -> Result<StlDecomposition> {
    let n = series.len();
    if period < 2 {
        return Err(Error::InvalidArgument(format!(
            "stl period must be at least 2, got {period}"
        )));
    }
    if n < 2 * period {
        return Err(Error::InvalidArgument(format!(
            "stl needs at least two periods ({} points), got {n}",
            2 * period
        )));
    }
    let trend_window = options
        .trend_smoother
        .unwrap_or_else(|| next_odd_at_least(1.5 * period as f64));

    let mut trend = vec![0.0; n];
    let mut seasonal = vec![0.0; n];
    for _ in 0..options.outer_iterations.max(1) {
        // Detrend, then smooth each cycle-subseries.
        let detrended: Vec<f64> = series.iter().zip(&trend).map(|(&y, &t)| y - t).collect();
        let mut cycle = vec![0.0; n];
        let mut sub = Vec::with_capacity(n / period + 1);
        for phase in 0..period {
            sub.clear();
            let mut idx = phase;
            while idx < n {
                sub.push(detrended[idx]);
                idx += period;
            }
            let smoothed = loess_smooth(&sub, options.seasonal_smoother);
            let mut idx = phase;
            for &v in &smoothed {
                cycle[idx] = v;
                idx += period;
            }
        }

        // Low-pass the preliminary seasonal and subtract the leakage.
        let low = {
            let pass1 = centered_ma(&cycle, period);
            let pass2 = centered_ma(&pass1, period);
            let pass3 = centered_ma(&pass2, 3);
            loess_smooth(&pass3, next_odd_at_least(period as f64))
        };
        for i in 0..n {
            seasonal[i] = cycle[i] - low[i];
        }

        // Re-center: every cycle (and the partial tail) sums to zero.
        let mut start = 0;
        while start < n {
            let end = (start + period).min(n);
            let mean = seasonal[start..end].iter().sum::<f64>() / (end - start) as f64;
            for s in &mut seasonal[start..end] {
                *s -= mean;
            }
            start = end;
        }

        // Re-estimate the trend from the deseasonalized series.
        let deseason: Vec<f64> = series.iter().zip(&seasonal).map(|(&y, &s)| y - s).collect();
        trend = loess_smooth(&deseason, trend_window);
    }

    let remainder: Vec<f64> = series
        .iter()
        .zip(trend.iter().zip(&seasonal))
        .map(|(&y, (&t, &s))| y - t - s)
        .collect();
    Ok(StlDecomposition {
        trend,
        seasonal,
        remainder,
        period,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_has_flat_decomposition() {
        let series = vec![5.5; 96];
        let d = stl_decompose(&series, 12, &StlOptions::default()).unwrap();
        for i in 0..96 {
            assert!(
                d.seasonal[i].abs() < 1e-8,
                "seasonal[{i}] = {}",
                d.seasonal[i]
            );
            assert!((d.trend[i] - 5.5).abs() < 1e-8);
            assert!(d.remainder[i].abs() < 1e-8);
        }
    }

    #[test]
    fn sinusoid_plus_constant_recovers_both_parts() {
        let period = 24;
        let n = period * 20;
        let sinusoid: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / period as f64).sin())
            .collect();
        let series: Vec<f64> = sinusoid.iter().map(|s| s + 5.0).collect();
        let d = stl_decompose(&series, period, &StlOptions::default()).unwrap();

        let corr = crate::data::correlation(&d.seasonal, &sinusoid);
        assert!(corr > 0.99, "seasonal correlation {corr}");
        let trend_mean = d.trend.iter().sum::<f64>() / n as f64;
        assert!((trend_mean - 5.0).abs() < 0.05, "trend mean {trend_mean}");
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // walks four parallel component arrays
    fn additivity_is_bit_exact() {
        let series: Vec<f64> = (0..120)
            .map(|t| (t as f64 * 0.37).sin() * 0.3 + 0.01 * t as f64)
            .collect();
        let d = stl_decompose(&series, 12, &StlOptions::default()).unwrap();
        for i in 0..series.len() {
            let rebuilt = d.trend[i] + d.seasonal[i] + d.remainder[i];
            // remainder is defined as the exact difference.
            assert_eq!(
                (series[i] - d.trend[i] - d.seasonal[i]).to_bits(),
                d.remainder[i].to_bits()
            );
            assert!((rebuilt - series[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn seasonal_cycles_are_centered() {
        let period = 16;
        let series: Vec<f64> = (0..period * 8)
            .map(|t| {
                (2.0 * std::f64::consts::PI * t as f64 / period as f64).sin()
                    * (1.0 + t as f64 / 100.0)
            })
            .collect();
        let d = stl_decompose(&series, period, &StlOptions::default()).unwrap();
        for cycle in d.seasonal.chunks(period) {
            let mean = cycle.iter().sum::<f64>() / cycle.len() as f64;
            assert!(mean.abs() < 1e-6, "cycle mean {mean}");
        }
    }

    #[test]
    fn too_short_series_is_rejected() {
        assert!(stl_decompose(&[1.0; 23], 12, &StlOptions::default()).is_err());
    }

    #[test]
    fn loess_of_line_is_the_line() {
        let ys: Vec<f64> = (0..50).map(|i| 2.0 * i as f64 - 7.0).collect();
        let smooth = loess_smooth(&ys, 11);
        for (a, b) in smooth.iter().zip(&ys) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
