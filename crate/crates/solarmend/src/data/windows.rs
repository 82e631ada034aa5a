//! Daily window slicing for training and inference.

use super::PvFleetSeries;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// One sliding window: `[window × n × 1]` normalized values plus the
/// matching observation flags (row-major `window × n`).
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start_step: usize,
    pub values: Tensor,
    pub observed: Vec<bool>,
}

/// Cuts `floor((T − window)/step) + 1` windows; with `step == window` these
/// are exact non-overlapping daily slices when `window == 288`.
pub fn slide_windows(series: &PvFleetSeries, window: usize, step: usize) -> Result<Vec<Window>> {
    if window == 0 || step == 0 {
        return Err(Error::InvalidArgument(
            "window and step must be positive".into(),
        ));
    }
    if series.n_steps() < window {
        return Err(Error::InvalidArgument(format!(
            "series of {} steps is shorter than the window {window}",
            series.n_steps()
        )));
    }
    let n = series.n_inverters();
    let count = (series.n_steps() - window) / step + 1;
    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * step;
        let cell_range = start * n..(start + window) * n;
        windows.push(Window {
            start_step: start,
            values: Tensor::from_vec(
                vec![window, n, 1],
                series.values()[cell_range.clone()].to_vec(),
            )?,
            observed: series.observed()[cell_range].to_vec(),
        });
    }
    Ok(windows)
}

/// Day ranges for the train/validation/test split.
///
/// Proportions follow the 240/60/60-day split of a 360-day fleet year:
/// two thirds train, one sixth validation, the rest test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DaySplit {
    pub train: std::ops::Range<usize>,
    pub validation: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
}

impl DaySplit {
    pub fn proportional(n_days: usize) -> Result<Self> {
        if n_days < 3 {
            return Err(Error::InvalidArgument(format!(
                "need at least 3 days to split, got {n_days}"
            )));
        }
        let train_end = (n_days * 2) / 3;
        let val_end = train_end + (n_days / 6).max(1);
        if val_end >= n_days {
            return Err(Error::InvalidArgument(format!(
                "split leaves no test days for {n_days} days"
            )));
        }
        Ok(DaySplit {
            train: 0..train_end,
            validation: train_end..val_end,
            test: val_end..n_days,
        })
    }
}
