//! The spatiotemporal denoising graph autoencoder.
//!
//! The network is a sandwich per block: a gated temporal convolution that
//! halves the window, a Chebyshev graph convolution that mixes neighbouring
//! inverters at every (reduced) timestep, and a second gated temporal
//! convolution halving again. The decoder mirrors the encoder with
//! transposed convolutions, restoring the original window length, and its
//! final layer is linear; physical plausibility is enforced by the
//! validator at imputation time rather than by squashing the output.
//!
//! Temporal layers act independently per node and spatial layers
//! independently per timestep; stacking them is what couples the two axes.
//! All parameters are channel-space tensors, so one trained model applies
//! to any fleet size whose graph is supplied at inference.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{impute, train, train_with_split, TrainConfig, TrainReport, WindowSplit};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{cheb_conv_tape, ChebBasis, FleetGraph};
use crate::tensor::{Gradients, NodeId, Tape, Tensor};
use crate::{Error, Result};

/// Temporal kernel size, stride, and padding: halves (or doubles) the
/// window length exactly.
pub const TEMPORAL_KERNEL: usize = 4;
pub const TEMPORAL_STRIDE: usize = 2;
pub const TEMPORAL_PADDING: usize = 1;

/// Architecture hyperparameters (the trainable shapes derive from these).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModelArchitecture {
    /// Chebyshev terms `K` (polynomial orders `0..K`).
    pub cheb_terms: usize,
    /// Total ST-Blocks, encoder plus decoder; must be even. The default 2
    /// is one encoder and one decoder block; deeper variants exist for
    /// ablations but degrade accuracy.
    pub st_blocks: usize,
    /// Channels after the first temporal layer.
    pub hidden: usize,
    /// Channels after the second temporal layer.
    pub hidden2: usize,
    /// Use a second, independent filter for the GLU gate instead of the
    /// shared-filter form `(Ω∗x) ⊙ σ(Ω∗x)`.
    pub two_filter_glu: bool,
}

impl Default for ModelArchitecture {
    fn default() -> Self {
        ModelArchitecture {
            cheb_terms: 3,
            st_blocks: 2,
            hidden: 16,
            hidden2: 32,
            two_filter_glu: false,
        }
    }
}

impl ModelArchitecture {
    pub fn encoder_blocks(&self) -> usize {
        self.st_blocks / 2
    }

    /// Channel widths `(input, mid, output)` of encoder block `b`.
    fn block_widths(&self, b: usize) -> (usize, usize, usize) {
        if b == 0 {
            (1, self.hidden, self.hidden2)
        } else {
            // Deeper blocks keep their width through the spatial layer and
            // double on the way out.
            let input = self.hidden2 << (b - 1);
            (input, input, input * 2)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cheb_terms < 1 {
            return Err(Error::InvalidArgument("cheb_terms must be >= 1".into()));
        }
        if self.st_blocks < 2 || !self.st_blocks.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "st_blocks must be an even count >= 2, got {}",
                self.st_blocks
            )));
        }
        if self.hidden == 0 || self.hidden2 == 0 {
            return Err(Error::InvalidArgument(
                "channel widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Window length must survive two halvings per encoder block.
    pub fn validate_window(&self, window: usize) -> Result<()> {
        let halvings = 2 * self.encoder_blocks();
        let divisor = 1usize << halvings;
        if window == 0 || !window.is_multiple_of(divisor) || window / divisor == 0 {
            return Err(Error::InvalidArgument(format!(
                "window {window} is not reducible by {} temporal halvings",
                halvings
            )));
        }
        Ok(())
    }
}

/// One encoder block's trainable tensors.
#[derive(Debug, Clone, PartialEq)]
struct BlockParams {
    /// First temporal kernel.
    t1: Tensor,
    /// Optional gate kernel paired with `t1` (two-filter GLU only).
    t1_gate: Option<Tensor>,
    /// Chebyshev coefficients, one `[c × c]` tensor per term.
    theta: Vec<Tensor>,
    t2: Tensor,
    t2_gate: Option<Tensor>,
}

/// All trainable weights of the autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ModelArchitecture,
    encoder: Vec<BlockParams>,
    decoder: Vec<BlockParams>,
}

fn uniform_kernel(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::from_vec(shape, data).expect("finite init")
}

impl ModelParams {
    /// Seed-controlled uniform initialization in `±sqrt(1/fan_in)`.
    pub fn init(arch: &ModelArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = arch.encoder_blocks();
        let mut encoder = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let (c_in, c_mid, c_out) = arch.block_widths(b);
            let conv_fan = |ci: usize| ci * TEMPORAL_KERNEL;
            let gate = |rng: &mut ChaCha8Rng, shape: Vec<usize>, fan: usize| {
                arch.two_filter_glu.then(|| uniform_kernel(rng, shape, fan))
            };
            encoder.push(BlockParams {
                t1: uniform_kernel(&mut rng, vec![c_mid, c_in, TEMPORAL_KERNEL], conv_fan(c_in)),
                t1_gate: gate(&mut rng, vec![c_mid, c_in, TEMPORAL_KERNEL], conv_fan(c_in)),
                theta: (0..arch.cheb_terms)
                    .map(|_| uniform_kernel(&mut rng, vec![c_mid, c_mid], c_mid * arch.cheb_terms))
                    .collect(),
                t2: uniform_kernel(
                    &mut rng,
                    vec![c_out, c_mid, TEMPORAL_KERNEL],
                    conv_fan(c_mid),
                ),
                t2_gate: gate(
                    &mut rng,
                    vec![c_out, c_mid, TEMPORAL_KERNEL],
                    conv_fan(c_mid),
                ),
            });
        }
        // Decoder mirrors the encoder in reverse; transposed kernels use the
        // `[c_in × c_out × k]` layout.
        let mut decoder = Vec::with_capacity(blocks);
        for b in (0..blocks).rev() {
            let (c_in, c_mid, c_out) = arch.block_widths(b);
            let conv_fan = |ci: usize| ci * TEMPORAL_KERNEL;
            let gate = |rng: &mut ChaCha8Rng, shape: Vec<usize>, fan: usize| {
                arch.two_filter_glu.then(|| uniform_kernel(rng, shape, fan))
            };
            decoder.push(BlockParams {
                t1: uniform_kernel(
                    &mut rng,
                    vec![c_out, c_mid, TEMPORAL_KERNEL],
                    conv_fan(c_out),
                ),
                t1_gate: gate(
                    &mut rng,
                    vec![c_out, c_mid, TEMPORAL_KERNEL],
                    conv_fan(c_out),
                ),
                theta: (0..arch.cheb_terms)
                    .map(|_| uniform_kernel(&mut rng, vec![c_mid, c_mid], c_mid * arch.cheb_terms))
                    .collect(),
                t2: uniform_kernel(
                    &mut rng,
                    vec![c_mid, c_in, TEMPORAL_KERNEL],
                    conv_fan(c_mid),
                ),
                t2_gate: gate(
                    &mut rng,
                    vec![c_mid, c_in, TEMPORAL_KERNEL],
                    conv_fan(c_mid),
                ),
            });
        }
        Ok(ModelParams {
            arch: *arch,
            encoder,
            decoder,
        })
    }

    /// All-zero parameters (useful for the linearity tests: zero weights
    /// and zero input produce zero output).
    pub fn zeros(arch: &ModelArchitecture) -> Result<Self> {
        let mut params = Self::init(arch, 0)?;
        params.for_each_tensor_mut(|t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        Ok(params)
    }

    pub fn architecture(&self) -> &ModelArchitecture {
        &self.arch
    }

    fn for_each_block<'a>(blocks: &'a [BlockParams], mut f: impl FnMut(&'a Tensor)) {
        for block in blocks {
            f(&block.t1);
            if let Some(g) = &block.t1_gate {
                f(g);
            }
            for theta in &block.theta {
                f(theta);
            }
            f(&block.t2);
            if let Some(g) = &block.t2_gate {
                f(g);
            }
        }
    }

    /// Fixed traversal order of every trainable tensor.
    pub fn flatten(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        Self::for_each_block(&self.encoder, |t| out.push(t.clone()));
        Self::for_each_block(&self.decoder, |t| out.push(t.clone()));
        out
    }

    fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        for block in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            f(&mut block.t1);
            if let Some(g) = &mut block.t1_gate {
                f(g);
            }
            for theta in &mut block.theta {
                f(theta);
            }
            f(&mut block.t2);
            if let Some(g) = &mut block.t2_gate {
                f(g);
            }
        }
    }

    /// Writes back tensors produced by [`ModelParams::flatten`].
    pub fn assign(&mut self, tensors: &[Tensor]) -> Result<()> {
        let mut idx = 0;
        let mut failed = None;
        self.for_each_tensor_mut(|slot| {
            if failed.is_some() {
                return;
            }
            match tensors.get(idx) {
                Some(t) if t.shape() == slot.shape() => *slot = t.clone(),
                _ => failed = Some(idx),
            }
            idx += 1;
        });
        if let Some(bad) = failed {
            return Err(Error::Shape(format!(
                "assign: tensor {bad} missing or misshapen"
            )));
        }
        if idx != tensors.len() {
            return Err(Error::Shape(format!(
                "assign: {} tensors for a model with {idx}",
                tensors.len()
            )));
        }
        Ok(())
    }

    /// Named tensors in flatten order, for checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let mut push_blocks = |prefix: &str, blocks: &[BlockParams]| {
            for (b, block) in blocks.iter().enumerate() {
                out.push((format!("{prefix}{b}.t1"), block.t1.clone()));
                if let Some(g) = &block.t1_gate {
                    out.push((format!("{prefix}{b}.t1_gate"), g.clone()));
                }
                for (k, theta) in block.theta.iter().enumerate() {
                    out.push((format!("{prefix}{b}.theta{k}"), theta.clone()));
                }
                out.push((format!("{prefix}{b}.t2"), block.t2.clone()));
                if let Some(g) = &block.t2_gate {
                    out.push((format!("{prefix}{b}.t2_gate"), g.clone()));
                }
            }
        };
        push_blocks("encoder", &self.encoder);
        push_blocks("decoder", &self.decoder);
        out
    }
}

/// Gated temporal convolution: `c ⊙ σ(c)` where `c = Ω ∗ x`.
///
/// One shared filter feeds both the value and the gate; pass `gate_kernel`
/// to use an independent filter for the gate instead. `transpose` selects
/// the length-doubling transposed convolution used by the decoder.
pub fn glu(
    tape: &mut Tape,
    x: NodeId,
    kernel: NodeId,
    gate_kernel: Option<NodeId>,
    stride: usize,
    padding: usize,
    transpose: bool,
) -> Result<NodeId> {
    let conv = |tape: &mut Tape, x, k| {
        if transpose {
            tape.conv1d_transpose(x, k, stride, padding)
        } else {
            tape.conv1d(x, k, stride, padding)
        }
    };
    let value = conv(tape, x, kernel)?;
    let pre_gate = match gate_kernel {
        Some(g) => conv(tape, x, g)?,
        None => value,
    };
    let sig = tape.sigmoid(pre_gate)?;
    tape.hadamard(value, sig)
}

/// A ready-to-run autoencoder: parameters plus the Chebyshev basis of the
/// graph it operates on.
#[derive(Debug, Clone)]
pub struct StdGae {
    params: ModelParams,
    basis: ChebBasis,
}

/// Node ids of the flattened parameters inside one tape.
pub(crate) struct TapeParams {
    pub ids: Vec<NodeId>,
}

impl StdGae {
    pub fn new(params: ModelParams, graph: &FleetGraph) -> Result<Self> {
        let basis = ChebBasis::new(graph, params.arch.cheb_terms)?;
        Ok(StdGae { params, basis })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn basis(&self) -> &ChebBasis {
        &self.basis
    }

    pub(crate) fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    /// Inserts parameters as differentiable leaves.
    pub(crate) fn insert_params(&self, tape: &mut Tape) -> Result<TapeParams> {
        let ids = self
            .params
            .flatten()
            .into_iter()
            .map(|t| tape.leaf(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(TapeParams { ids })
    }

    /// Inserts parameters as constants (inference only, no gradient work).
    fn insert_params_const(&self, tape: &mut Tape) -> Result<TapeParams> {
        let ids = self
            .params
            .flatten()
            .into_iter()
            .map(|t| tape.constant(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(TapeParams { ids })
    }

    /// Builds the full forward computation on a tape. The input must be a
    /// `[window × n × 1]` node already on the tape.
    pub(crate) fn forward_on_tape(
        &self,
        tape: &mut Tape,
        input: NodeId,
        params: &TapeParams,
    ) -> Result<NodeId> {
        let arch = &self.params.arch;
        let shape = tape.value(input).shape().to_vec();
        if shape.len() != 3 || shape[2] != 1 {
            return Err(Error::Shape(format!(
                "model input must be [window, n, 1], got {shape:?}"
            )));
        }
        if shape[1] != self.basis.node_count() {
            return Err(Error::Shape(format!(
                "window has {} nodes, graph has {}",
                shape[1],
                self.basis.node_count()
            )));
        }
        arch.validate_window(shape[0])?;

        let blocks = arch.encoder_blocks();
        let per_block = 2 + arch.cheb_terms + if arch.two_filter_glu { 2 } else { 0 };
        let param_at = |block: usize, off: usize| params.ids[block * per_block + off];
        let dec_base = blocks * per_block;

        let glu =
            |tape: &mut Tape, x: NodeId, kernel: NodeId, gate: Option<NodeId>, transpose: bool| {
                glu(
                    tape,
                    x,
                    kernel,
                    gate,
                    TEMPORAL_STRIDE,
                    TEMPORAL_PADDING,
                    transpose,
                )
            };

        // Offsets inside one block's parameter run.
        let gate_off = usize::from(arch.two_filter_glu);
        let theta_start = 1 + gate_off;
        let t2_off = theta_start + arch.cheb_terms;

        let mut x = input;
        for b in 0..blocks {
            let t1 = param_at(b, 0);
            let t1_gate = arch.two_filter_glu.then(|| param_at(b, 1));
            x = glu(tape, x, t1, t1_gate, false)?;
            let thetas: Vec<NodeId> = (0..arch.cheb_terms)
                .map(|k| param_at(b, theta_start + k))
                .collect();
            x = cheb_conv_tape(tape, &self.basis, x, &thetas)?;
            let t2 = param_at(b, t2_off);
            let t2_gate = arch.two_filter_glu.then(|| param_at(b, t2_off + 1));
            x = glu(tape, x, t2, t2_gate, false)?;
        }
        for b in 0..blocks {
            let base = dec_base + b * per_block;
            let t1 = params.ids[base];
            let t1_gate = arch.two_filter_glu.then(|| params.ids[base + 1]);
            x = glu(tape, x, t1, t1_gate, true)?;
            let thetas: Vec<NodeId> = (0..arch.cheb_terms)
                .map(|k| params.ids[base + theta_start + k])
                .collect();
            x = cheb_conv_tape(tape, &self.basis, x, &thetas)?;
            let t2 = params.ids[base + t2_off];
            let last_block = b == blocks - 1;
            if last_block {
                // Linear output layer.
                x = tape.conv1d_transpose(x, t2, TEMPORAL_STRIDE, TEMPORAL_PADDING)?;
            } else {
                let t2_gate = arch.two_filter_glu.then(|| params.ids[base + t2_off + 1]);
                x = glu(tape, x, t2, t2_gate, true)?;
            }
        }
        Ok(x)
    }

    /// Reconstruction of one `[window × n × 1]` window.
    pub fn forward(&self, window: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.insert_params_const(&mut tape)?;
        let input = tape.constant(window.clone())?;
        let out = self.forward_on_tape(&mut tape, input, &params)?;
        Ok(tape.value(out).clone())
    }

    /// Loss `mse(forward(corrupted), target)` with gradients, for one batch
    /// of aligned window pairs; the loss is the mean over the batch.
    pub fn batch_loss_and_gradients(
        &self,
        corrupted: &[&Tensor],
        targets: &[&Tensor],
    ) -> Result<(f64, Vec<Tensor>)> {
        debug_assert_eq!(corrupted.len(), targets.len());
        let mut tape = Tape::new();
        let params = self.insert_params(&mut tape)?;
        let mut total: Option<NodeId> = None;
        for (c, t) in corrupted.iter().zip(targets) {
            let input = tape.constant((*c).clone())?;
            let target = tape.constant((*t).clone())?;
            let out = self.forward_on_tape(&mut tape, input, &params)?;
            let loss = tape.mse(out, target)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, loss)?,
                None => loss,
            });
        }
        let total = total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let mean = tape.scale(total, 1.0 / corrupted.len() as f64)?;
        let loss_value = tape.value(mean).item()?;
        let grads: Gradients = tape.backward(mean)?;
        let grad_tensors = params.ids.iter().map(|&id| grads.dense(id)).collect();
        Ok((loss_value, grad_tensors))
    }
}
