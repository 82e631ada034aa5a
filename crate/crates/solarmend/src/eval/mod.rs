//! Imputation scoring: error on corrupted entries plus domain metrics.
//!
//! MAE and RMSE are computed over exactly the cells that were corrupted AND
//! have observed ground truth; reconstruction quality elsewhere is not the
//! imputer's business. The domain metrics ask whether an imputation
//! *preserves data character*: the outlier rate of the STL remainder and the
//! seasonal component itself.

mod stl;

pub use stl::{stl_decompose, StlDecomposition, StlOptions};

use crate::data::{CorruptionConfig, MissingMask, PvFleetSeries};
use crate::{Error, Result};

/// Everything one scored scenario produces.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub rmse: f64,
    /// Outlier-percentage difference per inverter (imputed − truth).
    pub per_inverter_od: Vec<f64>,
    /// Mean seasonal-component difference per inverter (imputed − truth).
    pub per_inverter_sd: Vec<f64>,
    /// The corruption that was scored.
    pub scenario: CorruptionConfig,
    /// Number of scored cells.
    pub n_scored: usize,
}

impl EvalReport {
    /// Flat CSV: one row per inverter plus a `fleet` summary row.
    pub fn to_csv(&self, inverter_ids: &[String]) -> String {
        let mut out = String::from("inverter_id,outlier_difference,seasonality_difference\n");
        for (i, id) in inverter_ids.iter().enumerate() {
            out.push_str(&format!(
                "{id},{},{}\n",
                self.per_inverter_od[i], self.per_inverter_sd[i]
            ));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        out.push_str(&format!(
            "fleet,{},{}\n",
            mean(&self.per_inverter_od),
            mean(&self.per_inverter_sd)
        ));
        out.push_str(&format!(
            "# mae,{}\n# rmse,{}\n# n,{}\n",
            self.mae, self.rmse, self.n_scored
        ));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// STL period for the seasonality metric.
    pub period: usize,
    pub stl: StlOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            period: crate::data::STEPS_PER_DAY,
            stl: StlOptions::default(),
        }
    }
}

/// MAE and RMSE restricted to corrupted cells with observed ground truth.
///
/// Returns `(mae, rmse, n_scored)`; cells the mask kept are ignored no
/// matter how much the imputation changed them.
pub fn score(
    imputed: &PvFleetSeries,
    truth: &PvFleetSeries,
    mask: &MissingMask,
) -> Result<(f64, f64, usize)> {
    let steps = truth.n_steps();
    let n = truth.n_inverters();
    if imputed.n_steps() != steps
        || imputed.n_inverters() != n
        || mask.n_steps() != steps
        || mask.n_inverters() != n
    {
        return Err(Error::Evaluation(format!(
            "shape mismatch: imputed {}x{}, truth {steps}x{n}, mask {}x{}",
            imputed.n_steps(),
            imputed.n_inverters(),
            mask.n_steps(),
            mask.n_inverters()
        )));
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for t in 0..steps {
        for i in 0..n {
            if mask.is_kept(t, i) || !truth.is_observed(t, i) {
                continue;
            }
            let d = imputed.value(t, i) - truth.value(t, i);
            abs_sum += d.abs();
            sq_sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Evaluation(
            "empty scoring set: no corrupted cell has observed ground truth".into(),
        ));
    }
    Ok((
        abs_sum / count as f64,
        (sq_sum / count as f64).sqrt(),
        count,
    ))
}

/// Linear-interpolation quantile of sorted data (R type 7).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Fraction of points beyond 1.5 interquartile ranges from the quartiles.
pub fn outlier_percentage(values: &[f64]) -> Result<f64> {
    if values.len() < 4 {
        return Err(Error::Evaluation(format!(
            "outlier rule needs at least 4 points, got {}",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lower = q1 - 1.5 * iqr;
    let upper = q3 + 1.5 * iqr;
    let flagged = values.iter().filter(|&&v| v < lower || v > upper).count();
    Ok(flagged as f64 / values.len() as f64)
}

/// Per-inverter outlier and seasonality recovery.
///
/// For each inverter: `OD = outlier%(remainder of imputed) − outlier%(remainder
/// of truth)` and `SD = mean(seasonal_imputed − seasonal_truth)`, components
/// from [`stl_decompose`] at the configured period. Both series must be fully
/// observed.
pub fn domain_metrics(
    imputed: &PvFleetSeries,
    truth: &PvFleetSeries,
    options: &EvalOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if imputed.n_steps() != truth.n_steps() || imputed.n_inverters() != truth.n_inverters() {
        return Err(Error::Evaluation(
            "imputed and truth series differ in shape".into(),
        ));
    }
    let n = truth.n_inverters();
    let mut od = Vec::with_capacity(n);
    let mut sd = Vec::with_capacity(n);
    for i in 0..n {
        let imp = imputed.inverter_series(i);
        let tru = truth.inverter_series(i);
        let d_imp = stl_decompose(&imp, options.period, &options.stl)?;
        let d_tru = stl_decompose(&tru, options.period, &options.stl)?;
        od.push(outlier_percentage(&d_imp.remainder)? - outlier_percentage(&d_tru.remainder)?);
        let mean_diff = d_imp
            .seasonal
            .iter()
            .zip(&d_tru.seasonal)
            .map(|(&a, &b)| a - b)
            .sum::<f64>()
            / imp.len() as f64;
        sd.push(mean_diff);
    }
    Ok((od, sd))
}

/// Assembles the full report for one imputation run.
pub fn evaluate_run(
    imputed: &PvFleetSeries,
    truth: &PvFleetSeries,
    mask: &MissingMask,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let (mae, rmse, n_scored) = score(imputed, truth, mask)?;
    let (per_inverter_od, per_inverter_sd) = domain_metrics(imputed, truth, options)?;
    Ok(EvalReport {
        mae,
        rmse,
        per_inverter_od,
        per_inverter_sd,
        scenario: *mask.provenance(),
        n_scored,
    })
}
