//! Column-mean and linear-interpolation imputers.

use super::{apply_fill, ensure_some_observation};
use crate::data::PvFleetSeries;
use crate::Result;

/// Fills each missing entry with its inverter's observed mean.
pub fn impute_mean(series: &PvFleetSeries) -> Result<PvFleetSeries> {
    ensure_some_observation(series)?;
    let n = series.n_inverters();
    let steps = series.n_steps();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for t in 0..steps {
        for i in 0..n {
            if series.is_observed(t, i) {
                sums[i] += series.value(t, i);
                counts[i] += 1;
            }
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| s / c as f64)
        .collect();
    let mut fill = vec![0.0; steps * n];
    for t in 0..steps {
        for i in 0..n {
            fill[t * n + i] = means[i];
        }
    }
    apply_fill(series, &fill)
}

/// Linear interpolation along time between the nearest observed values;
/// leading and trailing gaps carry the nearest observed value.
pub fn impute_li(series: &PvFleetSeries) -> Result<PvFleetSeries> {
    ensure_some_observation(series)?;
    let n = series.n_inverters();
    let steps = series.n_steps();
    let mut fill = vec![0.0; steps * n];
    for i in 0..n {
        let observed_steps: Vec<usize> = (0..steps).filter(|&t| series.is_observed(t, i)).collect();
        let mut cursor = 0usize;
        for t in 0..steps {
            if series.is_observed(t, i) {
                continue;
            }
            // First observed step at or after t.
            while cursor < observed_steps.len() && observed_steps[cursor] < t {
                cursor += 1;
            }
            let fill_value = match (
                cursor.checked_sub(1).map(|c| observed_steps[c]),
                observed_steps.get(cursor).copied(),
            ) {
                (Some(before), Some(after)) => {
                    let frac = (t - before) as f64 / (after - before) as f64;
                    let (a, b) = (series.value(before, i), series.value(after, i));
                    a + frac * (b - a)
                }
                (Some(before), None) => series.value(before, i),
                (None, Some(after)) => series.value(after, i),
                (None, None) => unreachable!("ensure_some_observation checked"),
            };
            fill[t * n + i] = fill_value;
        }
    }
    apply_fill(series, &fill)
}

#[cfg(test)]
mod tests {
    use super::super::series_with_gaps;
    use super::*;

    #[test]
    fn mean_fills_with_observed_mean() {
        let series = series_with_gaps(vec![vec![Some(0.0), Some(1.0), None, Some(1.0), Some(0.0)]]);
        let filled = impute_mean(&series).unwrap();
        assert_eq!(filled.value(2, 0), 0.5);
        assert!(filled.is_fully_observed());
    }

    #[test]
    fn mean_of_constant_series_is_constant() {
        let series = series_with_gaps(vec![vec![Some(0.4), None, Some(0.4), None]]);
        let filled = impute_mean(&series).unwrap();
        assert_eq!(filled.value(1, 0), 0.4);
        assert_eq!(filled.value(3, 0), 0.4);
    }

    #[test]
    fn mean_matches_independent_computation() {
        let observed: Vec<f64> = (0..17).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let mut column: Vec<Option<f64>> = observed.iter().copied().map(Some).collect();
        column.insert(5, None);
        column.insert(11, None);
        let series = series_with_gaps(vec![column]);
        let filled = impute_mean(&series).unwrap();
        let oracle = observed.iter().sum::<f64>() / observed.len() as f64;
        assert!((filled.value(5, 0) - oracle).abs() < 1e-12);
    }

    #[test]
    fn li_interpolates_interior_gaps() {
        let series = series_with_gaps(vec![vec![Some(0.4), None, Some(0.6)]]);
        let filled = impute_li(&series).unwrap();
        assert!((filled.value(1, 0) - 0.5).abs() < 1e-15);

        let three_gap = series_with_gaps(vec![vec![Some(0.0), None, None, None, Some(1.0)]]);
        let filled = impute_li(&three_gap).unwrap();
        assert!((filled.value(1, 0) - 0.25).abs() < 1e-15);
        assert!((filled.value(2, 0) - 0.5).abs() < 1e-15);
        assert!((filled.value(3, 0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn li_carries_nearest_value_at_edges() {
        let series = series_with_gaps(vec![vec![None, None, Some(0.7), Some(0.3), None]]);
        let filled = impute_li(&series).unwrap();
        assert_eq!(filled.value(0, 0), 0.7);
        assert_eq!(filled.value(1, 0), 0.7);
        assert_eq!(filled.value(4, 0), 0.3);
    }

    #[test]
    fn li_without_gaps_is_identity() {
        let series = series_with_gaps(vec![vec![Some(0.1), Some(0.2), Some(0.3)]]);
        let filled = impute_li(&series).unwrap();
        assert_eq!(filled, series);
    }

    #[test]
    fn all_missing_inverter_is_an_error_naming_it() {
        let series = series_with_gaps(vec![vec![Some(0.1), Some(0.2)], vec![None, None]]);
        let err = impute_mean(&series).unwrap_err();
        assert!(err.to_string().contains("inv01"));
        assert!(impute_li(&series).is_err());
    }
}
