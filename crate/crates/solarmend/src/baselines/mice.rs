//! Chained-equations imputation over the inverter columns.
//!
//! Single-chain variant: columns are initialized with their observed means,
//! then each sweep regresses every inverter on all the others (least squares
//! over the rows where that inverter is observed) and refreshes its missing
//! entries from the fit. One completed dataset comes out; the pipeline
//! consumes a single imputation, not a pooled ensemble.

use super::{apply_fill, ensure_some_observation};
use crate::data::PvFleetSeries;
use crate::linalg::cholesky_solve;
use crate::{Error, Result};

pub fn impute_mice(series: &PvFleetSeries, iterations: usize) -> Result<PvFleetSeries> {
    if iterations == 0 {
        return Err(Error::InvalidArgument(
            "mice needs at least one iteration".into(),
        ));
    }
    ensure_some_observation(series)?;
    let n = series.n_inverters();
    let steps = series.n_steps();

    // Working matrix, mean-initialized at the gaps.
    let mut work = series.values().to_vec();
    let mut means = vec![0.0; n];
    {
        let mut counts = vec![0usize; n];
        for t in 0..steps {
            for i in 0..n {
                if series.is_observed(t, i) {
                    means[i] += series.value(t, i);
                    counts[i] += 1;
                }
            }
        }
        for i in 0..n {
            means[i] /= counts[i] as f64;
        }
        for t in 0..steps {
            for i in 0..n {
                if !series.is_observed(t, i) {
                    work[t * n + i] = means[i];
                }
            }
        }
    }

    if n == 1 {
        // No other variables to regress on; the mean fill is the answer.
        return apply_fill(series, &work);
    }

    // Predictors per target: the other n−1 columns plus an intercept.
    let p = n;
    for _ in 0..iterations {
        for target in 0..n {
            let rows: Vec<usize> = (0..steps)
                .filter(|&t| series.is_observed(t, target))
                .collect();
            // Normal equations over the observed rows.
            let mut xtx = vec![0.0; p * p];
            let mut xty = vec![0.0; p];
            let mut features = vec![0.0; p];
            for &t in &rows {
                build_features(&work, n, t, target, &mut features);
                let y = work[t * n + target];
                for a in 0..p {
                    xty[a] += features[a] * y;
                    for b in a..p {
                        xtx[a * p + b] += features[a] * features[b];
                    }
                }
            }
            for a in 0..p {
                for b in 0..a {
                    xtx[a * p + b] = xtx[b * p + a];
                }
            }
            let beta = match cholesky_solve(&xtx, p, &xty) {
                Some(beta) => beta,
                None => {
                    // Rank-deficient design: ridge fallback, scaled by the
                    // mean diagonal so the nudge survives large row counts.
                    let diag_mean = (0..p).map(|a| xtx[a * p + a]).sum::<f64>() / p as f64;
                    let ridge = 1e-6 * diag_mean.max(1.0);
                    let mut regularized = xtx.clone();
                    for a in 0..p {
                        regularized[a * p + a] += ridge;
                    }
                    cholesky_solve(&regularized, p, &xty).ok_or_else(|| {
                        Error::Imputation(format!(
                            "mice: singular design for inverter {}",
                            series.inverter_ids()[target]
                        ))
                    })?
                }
            };
            for t in 0..steps {
                if !series.is_observed(t, target) {
                    build_features(&work, n, t, target, &mut features);
                    work[t * n + target] = features.iter().zip(&beta).map(|(&f, &b)| f * b).sum();
                }
            }
        }
    }
    apply_fill(series, &work)
}

/// Feature vector for one row: intercept followed by the other columns.
fn build_features(work: &[f64], n: usize, t: usize, target: usize, out: &mut [f64]) {
    out[0] = 1.0;
    let mut idx = 1;
    for j in 0..n {
        if j != target {
            out[idx] = work[t * n + j];
            idx += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::series_with_gaps;
    use super::*;

    #[test]
    fn recovers_exact_linear_relation() {
        // B = 2·A exactly; B's gaps must come back to machine precision.
        let a: Vec<f64> = (0..40)
            .map(|t| (t as f64 * 0.23).sin() * 0.2 + 0.3)
            .collect();
        let col_a: Vec<Option<f64>> = a.iter().copied().map(Some).collect();
        let mut col_b: Vec<Option<f64>> = a.iter().map(|v| Some(2.0 * v)).collect();
        col_b[7] = None;
        col_b[23] = None;
        let series = series_with_gaps(vec![col_a, col_b]);
        let filled = impute_mice(&series, 3).unwrap();
        assert!((filled.value(7, 1) - 2.0 * a[7]).abs() < 1e-8);
        assert!((filled.value(23, 1) - 2.0 * a[23]).abs() < 1e-8);
    }

    #[test]
    fn complete_data_is_identity() {
        let cols: Vec<Vec<Option<f64>>> = (0..3)
            .map(|i| (0..10).map(|t| Some((t + i) as f64 / 20.0)).collect())
            .collect();
        let series = series_with_gaps(cols);
        let filled = impute_mice(&series, 2).unwrap();
        assert_eq!(filled, series);
    }

    #[test]
    fn zero_iterations_is_rejected() {
        let series = series_with_gaps(vec![vec![Some(0.1), None]]);
        assert!(impute_mice(&series, 0).is_err());
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // the oracle mirrors indexed pseudo-steps
    fn one_iteration_matches_hand_stepped_chain() {
        // 3 inverters × 10 steps with one gap in column 1 and one in column 2.
        let c0: Vec<f64> = (0..10).map(|t| 0.1 + 0.05 * t as f64).collect();
        let c1: Vec<f64> = (0..10).map(|t| 0.9 - 0.06 * t as f64).collect();
        let c2: Vec<f64> = (0..10)
            .map(|t| 0.3 + 0.02 * (t as f64).powi(2) / 10.0)
            .collect();
        let mut col0: Vec<Option<f64>> = c0.iter().copied().map(Some).collect();
        let mut col1: Vec<Option<f64>> = c1.iter().copied().map(Some).collect();
        let col2: Vec<Option<f64>> = c2.iter().copied().map(Some).collect();
        col0[4] = None;
        col1[8] = None;
        let series = series_with_gaps(vec![col0, col1, col2]);
        let filled = impute_mice(&series, 1).unwrap();

        // Hand-stepped oracle: mean-init, then one pass of per-column
        // least squares in column order, refilling as it goes.
        let mut work = [c0.clone(), c1.clone(), c2.clone()];
        let mean0 = (c0.iter().sum::<f64>() - c0[4]) / 9.0;
        let mean1 = (c1.iter().sum::<f64>() - c1[8]) / 9.0;
        work[0][4] = mean0;
        work[1][8] = mean1;
        for target in 0..3 {
            let observed_rows: Vec<usize> = match target {
                0 => (0..10).filter(|&t| t != 4).collect(),
                1 => (0..10).filter(|&t| t != 8).collect(),
                _ => (0..10).collect(),
            };
            // 3-parameter least squares via normal equations.
            let others: Vec<usize> = (0..3).filter(|&j| j != target).collect();
            let mut xtx = [[0.0f64; 3]; 3];
            let mut xty = [0.0f64; 3];
            for &t in &observed_rows {
                let f = [1.0, work[others[0]][t], work[others[1]][t]];
                let y = work[target][t];
                for a in 0..3 {
                    xty[a] += f[a] * y;
                    for b in 0..3 {
                        xtx[a][b] += f[a] * f[b];
                    }
                }
            }
            let flat: Vec<f64> = xtx.iter().flatten().copied().collect();
            let beta = cholesky_solve(&flat, 3, &xty).unwrap();
            for t in 0..10 {
                let missing = matches!((target, t), (0, 4) | (1, 8));
                if missing {
                    let f = [1.0, work[others[0]][t], work[others[1]][t]];
                    work[target][t] = f.iter().zip(&beta).map(|(x, b)| x * b).sum();
                }
            }
        }
        assert!((filled.value(4, 0) - work[0][4]).abs() < 1e-10);
        assert!((filled.value(8, 1) - work[1][8]).abs() < 1e-10);
    }
}
