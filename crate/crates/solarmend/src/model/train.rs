//! Training loop and the imputation pass.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelArchitecture, ModelParams, StdGae};
use crate::data::{validate_value, PvFleetSeries, ValidatorOptions, Window, STEPS_PER_DAY};
use crate::graph::FleetGraph;
use crate::tensor::{AdamState, Tensor};
use crate::{Error, Result};

/// Training hyperparameters. Defaults follow the reference configuration:
/// Chebyshev filter size 3, batch size 2, 50 epochs, learning rate 0.001
/// with inverse-time decay 0.02, window and step of 288, graph sparsity 1.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub cheb_terms: usize,
    pub st_blocks: usize,
    pub hidden: usize,
    pub hidden2: usize,
    pub two_filter_glu: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub decay: f64,
    /// Graph sparsity ε used when the caller builds the fleet graph.
    pub epsilon_graph: f64,
    pub window: usize,
    pub step: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = ModelArchitecture::default();
        TrainConfig {
            cheb_terms: arch.cheb_terms,
            st_blocks: arch.st_blocks,
            hidden: arch.hidden,
            hidden2: arch.hidden2,
            two_filter_glu: arch.two_filter_glu,
            batch_size: 2,
            epochs: 50,
            learning_rate: 0.001,
            decay: 0.02,
            epsilon_graph: 1.0,
            window: STEPS_PER_DAY,
            step: STEPS_PER_DAY,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self) -> ModelArchitecture {
        ModelArchitecture {
            cheb_terms: self.cheb_terms,
            st_blocks: self.st_blocks,
            hidden: self.hidden,
            hidden2: self.hidden2,
            two_filter_glu: self.two_filter_glu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let arch = self.architecture();
        arch.validate()?;
        arch.validate_window(self.window)?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        if self.decay < 0.0 {
            return Err(Error::InvalidArgument("decay must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_graph) {
            return Err(Error::InvalidArgument(
                "epsilon_graph must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch loss trace plus which epoch's parameters were kept.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

/// Which window indices train and which validate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl WindowSplit {
    /// Two thirds train, one sixth validation (the rest is the caller's
    /// held-out test range and must not be passed in here).
    pub fn proportional(n_windows: usize) -> Result<Self> {
        if n_windows < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 windows to split, got {n_windows}"
            )));
        }
        let train_end = ((n_windows * 2) / 3).max(1);
        let val_end = (train_end + (n_windows / 6).max(1)).min(n_windows);
        Ok(WindowSplit {
            train: (0..train_end).collect(),
            validation: (train_end..val_end).collect(),
        })
    }
}

/// Trains with a proportional train/validation split over the given windows.
///
/// `d_a` are the reconstruction targets (augmented, fully observed) and
/// `d_c` the corrupted inputs, aligned index for index. The loss is the
/// mean squared error over *all* window positions, so the model learns the
/// whole spatiotemporal distribution rather than just the corrupted cells.
pub fn train(
    d_a: &[Window],
    d_c: &[Window],
    graph: &FleetGraph,
    config: &TrainConfig,
) -> Result<(StdGae, TrainReport)> {
    let split = WindowSplit::proportional(d_a.len())?;
    train_with_split(d_a, d_c, graph, &split, config)
}

pub fn train_with_split(
    d_a: &[Window],
    d_c: &[Window],
    graph: &FleetGraph,
    split: &WindowSplit,
    config: &TrainConfig,
) -> Result<(StdGae, TrainReport)> {
    config.validate()?;
    if d_a.len() != d_c.len() {
        return Err(Error::InvalidArgument(format!(
            "{} target windows vs {} corrupted windows",
            d_a.len(),
            d_c.len()
        )));
    }
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    for &idx in split.train.iter().chain(&split.validation) {
        if idx >= d_a.len() {
            return Err(Error::InvalidArgument(format!(
                "split index {idx} out of range for {} windows",
                d_a.len()
            )));
        }
    }

    let params = ModelParams::init(&config.architecture(), config.seed)?;
    let mut gae = StdGae::new(params, graph)?;
    let shapes: Vec<Vec<usize>> = gae
        .params()
        .flatten()
        .iter()
        .map(|t| t.shape().to_vec())
        .collect();
    let mut adam = AdamState::new(&shapes, config.learning_rate, config.decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let mut train_loss = Vec::with_capacity(config.epochs);
    let mut validation_loss = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ModelParams, usize)> = None;
    let mut order = split.train.clone();

    for epoch in 0..config.epochs {
        adam.begin_epoch(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let corrupted: Vec<&Tensor> = chunk.iter().map(|&i| &d_c[i].values).collect();
            let targets: Vec<&Tensor> = chunk.iter().map(|&i| &d_a[i].values).collect();
            let (loss, grads) = gae
                .batch_loss_and_gradients(&corrupted, &targets)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {batches}: {e}")))?;
            let mut flat = gae.params().flatten();
            adam.step(&mut flat, &grads)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {batches}: {e}")))?;
            gae.params_mut().assign(&flat)?;
            epoch_loss += loss;
            batches += 1;
        }
        train_loss.push(epoch_loss / batches as f64);

        let val = if split.validation.is_empty() {
            *train_loss.last().expect("pushed above")
        } else {
            let mut acc = 0.0;
            for &i in &split.validation {
                let out = gae.forward(&d_c[i].values)?;
                let n = out.len() as f64;
                acc += out
                    .data()
                    .iter()
                    .zip(d_a[i].values.data())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / n;
            }
            acc / split.validation.len() as f64
        };
        validation_loss.push(val);
        if best.as_ref().is_none_or(|(b, _, _)| val < *b) {
            best = Some((val, gae.params().clone(), epoch));
        }
    }

    let (best_validation_loss, best_params, best_epoch) = best.expect("at least one epoch");
    *gae.params_mut() = best_params;
    Ok((
        gae,
        TrainReport {
            train_loss,
            validation_loss,
            best_epoch,
            best_validation_loss,
        },
    ))
}

/// Reconstructs a series: observed cells pass through untouched, missing
/// cells take the model reconstruction clamped through the physics
/// validator. A trailing partial day is zero-padded for the forward pass
/// and truncated on output.
pub fn impute(
    series: &PvFleetSeries,
    gae: &StdGae,
    validator: &ValidatorOptions,
) -> Result<PvFleetSeries> {
    let n = series.n_inverters();
    if n != gae.basis().node_count() {
        return Err(Error::Shape(format!(
            "series has {n} inverters, model graph has {}",
            gae.basis().node_count()
        )));
    }
    let window = STEPS_PER_DAY;
    gae.params().architecture().validate_window(window)?;

    let steps = series.n_steps();
    let mut out = series.clone();
    let mut start = 0usize;
    while start < steps {
        let end = (start + window).min(steps);
        // Zero-padded input window (missing cells are already zero).
        let mut data = vec![0.0; window * n];
        for t in start..end {
            for i in 0..n {
                data[(t - start) * n + i] = series.value(t, i);
            }
        }
        let input = Tensor::from_vec(vec![window, n, 1], data)?;
        let reconstruction = gae.forward(&input)?;
        for t in start..end {
            for i in 0..n {
                if series.is_observed(t, i) {
                    continue;
                }
                let candidate = reconstruction.data()[(t - start) * n + i];
                let cell = series.cell(t, i);
                let aux = series.aux().map(|a| (a.g_poa[cell], a.t_module[cell]));
                let validated = validate_value(
                    candidate,
                    aux,
                    &series.physics()[i],
                    &series.scaling()[i],
                    validator,
                )?;
                out.set_cell(t, i, validated.value, true);
            }
        }
        start = end;
    }
    Ok(out)
}
