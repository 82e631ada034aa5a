//! Overcomplete denoising autoencoder over per-timestep cross-sections.
//!
//! Each timestep's `n` inverter values form one sample. The encoder widens
//! by 7 units per layer for three layers (the original convention for this
//! architecture), the decoder mirrors back, and training reconstructs
//! mean-initialized data from randomly corrupted copies of itself.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{apply_fill, ensure_some_observation};
use crate::data::PvFleetSeries;
use crate::tensor::{AdamState, NodeId, Tape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MidaSpec {
    pub epochs: usize,
    pub batch_size: usize,
    /// Input corruption rate during training (denoising dropout).
    pub corruption_rate: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MidaSpec {
    fn default() -> Self {
        MidaSpec {
            epochs: 30,
            batch_size: 256,
            corruption_rate: 0.5,
            learning_rate: 0.001,
            seed: 17,
        }
    }
}

/// Encoder widths for `n` input features: `n+7, n+14, n+21`.
pub fn encoder_widths(n: usize) -> [usize; 3] {
    [n + 7, n + 14, n + 21]
}

struct MidaNet {
    // (weight, bias) per layer, encoder then decoder.
    layers: Vec<(Tensor, Tensor)>,
}

impl MidaNet {
    fn init(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let [h1, h2, h3] = encoder_widths(n);
        let dims = [n, h1, h2, h3, h2, h1, n];
        let layers = dims
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = (1.0 / fan_in as f64).sqrt();
                let data: Vec<f64> = (0..fan_in * fan_out)
                    .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
                    .collect();
                (
                    Tensor::from_vec(vec![fan_in, fan_out], data).expect("finite init"),
                    Tensor::zeros(vec![fan_out]),
                )
            })
            .collect();
        MidaNet { layers }
    }

    fn param_tensors(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.clone(), b.clone()])
            .collect()
    }

    fn set_params(&mut self, params: &[Tensor]) {
        for (i, (w, b)) in self.layers.iter_mut().enumerate() {
            *w = params[2 * i].clone();
            *b = params[2 * i + 1].clone();
        }
    }

    /// Forward pass on a tape; tanh on hidden layers, linear output.
    fn forward(&self, tape: &mut Tape, input: NodeId, params: &[NodeId]) -> Result<NodeId> {
        let mut x = input;
        let last = self.layers.len() - 1;
        for i in 0..self.layers.len() {
            let w = params[2 * i];
            let b = params[2 * i + 1];
            let lin = tape.channel_mix(x, w)?;
            let biased = tape.add_bias(lin, b)?;
            x = if i < last {
                tanh(tape, biased)?
            } else {
                biased
            };
        }
        Ok(x)
    }
}

/// `tanh(x) = 2·σ(2x) − 1`, composed from recorded primitives.
fn tanh(tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    let doubled = tape.scale(x, 2.0)?;
    let sig = tape.sigmoid(doubled)?;
    let scaled = tape.scale(sig, 2.0)?;
    let ones = tape.constant(Tensor::from_vec(
        tape.value(scaled).shape().to_vec(),
        vec![1.0; tape.value(scaled).len()],
    )?)?;
    tape.sub(scaled, ones)
}

pub fn impute_mida(series: &PvFleetSeries, spec: &MidaSpec) -> Result<PvFleetSeries> {
    if spec.epochs == 0 || spec.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "mida needs epochs and batch_size >= 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.corruption_rate) {
        return Err(Error::InvalidArgument(format!(
            "mida corruption rate must lie in [0, 1), got {}",
            spec.corruption_rate
        )));
    }
    ensure_some_observation(series)?;
    let n = series.n_inverters();
    let steps = series.n_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Mean-initialized complete matrix: the reconstruction target.
    let target = {
        let mut work = series.values().to_vec();
        let mut means = vec![0.0; n];
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
        work
    };

    let mut net = MidaNet::init(n, &mut rng);
    let mut params = net.param_tensors();
    let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
    let mut adam = AdamState::new(&shapes, spec.learning_rate, 0.0);

    let mut order: Vec<usize> = (0..steps).collect();
    for _epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(spec.batch_size.min(steps)) {
            let rows = chunk.len();
            let mut corrupted = Vec::with_capacity(rows * n);
            let mut clean = Vec::with_capacity(rows * n);
            for &t in chunk {
                for i in 0..n {
                    let v = target[t * n + i];
                    clean.push(v);
                    let dropped = rng.gen::<f64>() < spec.corruption_rate;
                    corrupted.push(if dropped { 0.0 } else { v });
                }
            }
            let mut tape = Tape::new();
            let param_ids: Vec<NodeId> = params
                .iter()
                .map(|p| tape.leaf(p.clone()))
                .collect::<Result<_>>()?;
            let input = tape.constant(Tensor::from_vec(vec![rows, n], corrupted)?)?;
            let truth = tape.constant(Tensor::from_vec(vec![rows, n], clean)?)?;
            let output = net.forward(&mut tape, input, &param_ids)?;
            let loss = tape.mse(output, truth)?;
            if !tape.value(loss).item()?.is_finite() {
                return Err(Error::Training("mida: non-finite loss".into()));
            }
            let grads = tape.backward(loss)?;
            let grad_tensors: Vec<Tensor> = param_ids.iter().map(|&id| grads.dense(id)).collect();
            adam.step(&mut params, &grad_tensors)?;
        }
    }
    net.set_params(&params);

    // Reconstruction pass over the full (uncorrupted) matrix.
    let mut tape = Tape::new();
    let param_ids: Vec<NodeId> = params
        .iter()
        .map(|p| tape.leaf(p.clone()))
        .collect::<Result<_>>()?;
    let input = tape.constant(Tensor::from_vec(vec![steps, n], target.clone())?)?;
    let output = net.forward(&mut tape, input, &param_ids)?;
    apply_fill(series, tape.value(output).data())
}

/// Training loss trace for convergence tests: returns per-epoch mean loss.
#[cfg(test)]
pub(crate) fn training_curve(series: &PvFleetSeries, spec: &MidaSpec) -> Result<Vec<f64>> {
    // Duplicated minimal loop (full batch, no corruption) to observe losses.
    ensure_some_observation(series)?;
    let n = series.n_inverters();
    let steps = series.n_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let target = series.values().to_vec();
    let mut net = MidaNet::init(n, &mut rng);
    let mut params = net.param_tensors();
    let shapes: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
    let mut adam = AdamState::new(&shapes, spec.learning_rate, 0.0);
    let mut curve = Vec::with_capacity(spec.epochs);
    for _ in 0..spec.epochs {
        let mut tape = Tape::new();
        let param_ids: Vec<NodeId> = params
            .iter()
            .map(|p| tape.leaf(p.clone()))
            .collect::<Result<_>>()?;
        let input = tape.constant(Tensor::from_vec(vec![steps, n], target.clone())?)?;
        let truth = tape.constant(Tensor::from_vec(vec![steps, n], target.clone())?)?;
        let output = net.forward(&mut tape, input, &param_ids)?;
        let loss = tape.mse(output, truth)?;
        curve.push(tape.value(loss).item()?);
        let grads = tape.backward(loss)?;
        let grad_tensors: Vec<Tensor> = param_ids.iter().map(|&id| grads.dense(id)).collect();
        adam.step(&mut params, &grad_tensors)?;
    }
    net.set_params(&params);
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::super::series_with_gaps;
    use super::*;

    #[test]
    fn widths_follow_the_plus_seven_rule() {
        assert_eq!(encoder_widths(35), [42, 49, 56]);
        assert_eq!(encoder_widths(4), [11, 18, 25]);
    }

    #[test]
    fn observed_entries_pass_through() {
        let cols: Vec<Vec<Option<f64>>> = (0..3)
            .map(|i| {
                (0..16)
                    .map(|t| {
                        if (t + i) % 5 == 0 {
                            None
                        } else {
                            Some(((t * 3 + i) % 7) as f64 / 7.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let series = series_with_gaps(cols);
        let spec = MidaSpec {
            epochs: 3,
            ..MidaSpec::default()
        };
        let filled = impute_mida(&series, &spec).unwrap();
        assert!(filled.is_fully_observed());
        for t in 0..series.n_steps() {
            for i in 0..series.n_inverters() {
                if series.is_observed(t, i) {
                    assert_eq!(filled.value(t, i).to_bits(), series.value(t, i).to_bits());
                }
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cols: Vec<Vec<Option<f64>>> = (0..2)
            .map(|i| {
                (0..12)
                    .map(|t| {
                        if t == 3 + i {
                            None
                        } else {
                            Some(t as f64 / 12.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let series = series_with_gaps(cols);
        let spec = MidaSpec {
            epochs: 2,
            ..MidaSpec::default()
        };
        let a = impute_mida(&series, &spec).unwrap();
        let b = impute_mida(&series, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overfits_a_toy_cross_section() {
        // 20 timesteps, 3 inverters, fully observed; loss must collapse by
        // three orders of magnitude within 2000 full-batch epochs.
        let cols: Vec<Vec<Option<f64>>> = (0..3)
            .map(|i| {
                (0..20)
                    .map(|t| Some(0.5 + 0.4 * ((t as f64 * 0.7 + i as f64).sin())))
                    .collect()
            })
            .collect();
        let series = series_with_gaps(cols);
        let spec = MidaSpec {
            epochs: 2000,
            learning_rate: 0.003,
            corruption_rate: 0.0,
            ..MidaSpec::default()
        };
        let curve = training_curve(&series, &spec).unwrap();
        let initial = curve[0];
        let best = curve.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(
            best < 1e-3 * initial,
            "loss only fell from {initial} to {best}"
        );
    }
}
