//! Nearest-neighbour imputation across the fleet.
//!
//! Neighbours of an inverter are *other inverters*, ranked by the RMS
//! difference of their power over the timesteps where both are observed;
//! fleet coherence means a co-located twin is the best predictor of a gap.
//! A missing `(t, i)` takes the average of the `k` nearest inverters that
//! are observed at `t`; if none qualify, that entry falls back to linear
//! interpolation along time.

use super::{apply_fill, ensure_some_observation, impute_li};
use crate::data::PvFleetSeries;
use crate::{Error, Result};

/// Pairwise inverter distance: RMS over co-observed steps, infinite when
/// the pair shares no observations.
pub(crate) fn inverter_distances(series: &PvFleetSeries) -> Vec<f64> {
    let n = series.n_inverters();
    let steps = series.n_steps();
    let mut sums = vec![0.0; n * n];
    let mut counts = vec![0usize; n * n];
    for t in 0..steps {
        for i in 0..n {
            if !series.is_observed(t, i) {
                continue;
            }
            let vi = series.value(t, i);
            for j in (i + 1)..n {
                if !series.is_observed(t, j) {
                    continue;
                }
                let d = vi - series.value(t, j);
                sums[i * n + j] += d * d;
                counts[i * n + j] += 1;
            }
        }
    }
    let mut dist = vec![f64::INFINITY; n * n];
    for i in 0..n {
        dist[i * n + i] = 0.0;
        for j in (i + 1)..n {
            if counts[i * n + j] > 0 {
                let d = (sums[i * n + j] / counts[i * n + j] as f64).sqrt();
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
    }
    dist
}

/// Fills missing entries by averaging the `k` nearest observed inverters at
/// each timestep.
pub fn impute_knn(series: &PvFleetSeries, k: usize) -> Result<PvFleetSeries> {
    if k == 0 {
        return Err(Error::InvalidArgument("knn needs k >= 1".into()));
    }
    ensure_some_observation(series)?;
    let n = series.n_inverters();
    let steps = series.n_steps();
    let dist = inverter_distances(series);

    // Per inverter: other inverters by ascending distance, ties by index.
    let ranked: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                dist[i * n + a]
                    .partial_cmp(&dist[i * n + b])
                    .expect("distances are not NaN")
                    .then(a.cmp(&b))
            });
            order
        })
        .collect();

    // Fallback for cells with no usable neighbour.
    let li = impute_li(series)?;

    let mut fill = vec![0.0; steps * n];
    for t in 0..steps {
        for i in 0..n {
            if series.is_observed(t, i) {
                continue;
            }
            let mut acc = 0.0;
            let mut used = 0usize;
            for &j in &ranked[i] {
                if used == k {
                    break;
                }
                if dist[i * n + j].is_finite() && series.is_observed(t, j) {
                    acc += series.value(t, j);
                    used += 1;
                }
            }
            fill[t * n + i] = if used > 0 {
                acc / used as f64
            } else {
                li.value(t, i)
            };
        }
    }
    apply_fill(series, &fill)
}
