//! The six reference imputers the autoencoder is compared against.
//!
//! Every imputer consumes a [`PvFleetSeries`] with missing entries and
//! returns a fully observed copy. Observed entries pass through bit-exactly;
//! only missing cells are filled. All imputers are pure functions of their
//! input and spec (seed included), so runs are reproducible.

mod knn;
mod lrtc;
mod mice;
mod mida;
mod simple;

pub use knn::impute_knn;
pub use lrtc::{complete_tensor, impute_lrtc_tnn, LrtcOutcome, LrtcSpec, TensorCompletion};
pub use mice::impute_mice;
pub use mida::{encoder_widths, impute_mida, MidaSpec};
pub use simple::{impute_li, impute_mean};

use crate::data::PvFleetSeries;
use crate::{Error, Result};

/// Which imputer to run, with its parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImputerSpec {
    Mean,
    Li,
    Knn { k: usize },
    Mice { iterations: usize },
    Mida(MidaSpec),
    LrtcTnn(LrtcSpec),
}

impl ImputerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ImputerSpec::Mean => "mean",
            ImputerSpec::Li => "li",
            ImputerSpec::Knn { .. } => "knn",
            ImputerSpec::Mice { .. } => "mice",
            ImputerSpec::Mida(_) => "mida",
            ImputerSpec::LrtcTnn(_) => "lrtc_tnn",
        }
    }

    /// Runs the selected imputer.
    pub fn impute(&self, series: &PvFleetSeries) -> Result<PvFleetSeries> {
        match self {
            ImputerSpec::Mean => impute_mean(series),
            ImputerSpec::Li => impute_li(series),
            ImputerSpec::Knn { k } => impute_knn(series, *k),
            ImputerSpec::Mice { iterations } => impute_mice(series, *iterations),
            ImputerSpec::Mida(spec) => impute_mida(series, spec),
            ImputerSpec::LrtcTnn(spec) => Ok(impute_lrtc_tnn(series, spec)?.series),
        }
    }
}

/// Writes `fill[cell]` into every missing cell, leaving observed cells
/// untouched, and marks the result fully observed.
pub(crate) fn apply_fill(series: &PvFleetSeries, fill: &[f64]) -> Result<PvFleetSeries> {
    debug_assert_eq!(fill.len(), series.values().len());
    let mut out = series.clone();
    for t in 0..series.n_steps() {
        for i in 0..series.n_inverters() {
            let cell = series.cell(t, i);
            if !series.is_observed(t, i) {
                let v = fill[cell];
                if !v.is_finite() {
                    return Err(Error::Imputation(format!(
                        "non-finite fill value {v} at step {t}, inverter {i}"
                    )));
                }
                out.set_cell(t, i, v, true);
            }
        }
    }
    Ok(out)
}

/// Errors when any inverter has zero observed values, naming the first.
pub(crate) fn ensure_some_observation(series: &PvFleetSeries) -> Result<()> {
    for (i, count) in series.observed_counts().iter().enumerate() {
        if *count == 0 {
            return Err(Error::Imputation(format!(
                "inverter {} has no observed values",
                series.inverter_ids()[i]
            )));
        }
    }
    Ok(())
}

/// Builds a small series from per-inverter columns where `None` is a gap.
#[cfg(test)]
pub(crate) fn series_with_gaps(columns: Vec<Vec<Option<f64>>>) -> PvFleetSeries {
    use crate::data::{PhysicsParams, Scaling, STEP_SECONDS};
    let n = columns.len();
    let steps = columns[0].len();
    let mut values = vec![0.0; steps * n];
    let mut observed = vec![false; steps * n];
    for (i, col) in columns.iter().enumerate() {
        for (t, v) in col.iter().enumerate() {
            if let Some(v) = v {
                values[t * n + i] = *v;
                observed[t * n + i] = true;
            }
        }
    }
    PvFleetSeries::from_parts(
        (0..steps as i64).map(|t| t * STEP_SECONDS).collect(),
        (0..n).map(|i| format!("inv{i:02}")).collect(),
        vec!["site0".into(); n],
        vec![(0.0, 0.0); n],
        vec![
            PhysicsParams {
                p_nameplate: 100.0,
                p_norm: 95.0,
                gamma_t: -0.004
            };
            n
        ],
        vec![Scaling::identity(); n],
        values.clone(),
        values,
        observed,
        None,
    )
    .unwrap()
}
