//! Adam with bias correction and inverse-time learning-rate decay.

use super::Tensor;
use crate::{Error, Result};

/// Optimizer state for one set of parameters.
///
/// The base learning rate is decayed per epoch as `lr / (1 + decay · epoch)`;
/// call [`AdamState::begin_epoch`] at the start of each epoch to apply it.
#[derive(Debug, Clone)]
pub struct AdamState {
    base_lr: f64,
    decay: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    current_lr: f64,
    step: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    /// Fresh state for `shapes.len()` parameters with standard moments
    /// β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(shapes: &[Vec<usize>], learning_rate: f64, decay: f64) -> Self {
        AdamState {
            base_lr: learning_rate,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            current_lr: learning_rate,
            step: 0,
            first_moment: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            second_moment: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::InvalidArgument(format!(
                "adam betas must lie in (0, 1), got {beta1}, {beta2}"
            )));
        }
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.epsilon = epsilon;
        Ok(self)
    }

    /// Sets the effective learning rate for epoch `e` to `lr / (1 + decay·e)`.
    pub fn begin_epoch(&mut self, epoch: usize) {
        self.current_lr = self.base_lr / (1.0 + self.decay * epoch as f64);
    }

    /// Number of completed update steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn effective_lr(&self) -> f64 {
        self.current_lr
    }

    /// One Adam update over aligned parameter and gradient slices.
    ///
    /// Rejects NaN gradients outright (a NaN here means the forward pass or
    /// the loss is already broken) and reports which parameter produced it.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, state tracks {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first_moment[i].shape() {
                return Err(Error::Shape(format!(
                    "adam: parameter {i} shape {:?}, gradient {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.first_moment[i].shape()
                )));
            }
            if let Some(j) = g.data().iter().position(|v| v.is_nan()) {
                return Err(Error::Training(format!(
                    "NaN gradient in parameter {i} at element {j}"
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
        {
            for ((pv, &gv), (mv, vv)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.current_lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut params = vec![Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let grads = vec![Tensor::zeros(vec![3])];
        let mut state = AdamState::new(&[vec![3]], 0.01, 0.0);
        state.step(&mut params, &grads).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn step_counter_increments_once_per_call() {
        let mut params = vec![Tensor::zeros(vec![2])];
        let grads = vec![Tensor::zeros(vec![2])];
        let mut state = AdamState::new(&[vec![2]], 0.01, 0.0);
        for expected in 1..=5 {
            state.step(&mut params, &grads).unwrap();
            assert_eq!(state.step_count(), expected);
        }
    }

    #[test]
    fn minimizes_shifted_quadratic() {
        // f(x) = (x − 3)², ∇f = 2(x − 3); from 0, lr 0.01, < 5000 steps.
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new(&[vec![]], 0.01, 0.0);
        let mut steps = 0;
        while (params[0].data()[0] - 3.0).abs() >= 1e-3 {
            let g = 2.0 * (params[0].data()[0] - 3.0);
            let grads = vec![Tensor::scalar(g)];
            state.step(&mut params, &grads).unwrap();
            steps += 1;
            assert!(steps < 5000, "no convergence after {steps} steps");
        }
    }

    #[test]
    fn nan_gradient_aborts_with_diagnostic() {
        let mut params = vec![Tensor::zeros(vec![2])];
        let grads = vec![Tensor {
            shape: vec![2],
            data: vec![0.0, f64::NAN],
        }];
        let mut state = AdamState::new(&[vec![2]], 0.01, 0.0);
        let err = state.step(&mut params, &grads).unwrap_err();
        assert!(err.to_string().contains("parameter 0"));
    }

    #[test]
    fn decay_schedule_is_inverse_time() {
        let mut state = AdamState::new(&[], 0.001, 0.02);
        state.begin_epoch(0);
        assert_eq!(state.effective_lr(), 0.001);
        state.begin_epoch(10);
        assert!((state.effective_lr() - 0.001 / 1.2).abs() < 1e-15);
    }
}
