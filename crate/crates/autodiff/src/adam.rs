use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Moment estimates and hyperparameters for ADAM with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments shaped after `params`; betas 0.9/0.999, epsilon 1e-8.
    pub fn new(params: &[Tensor<T>], learning_rate: T) -> Self {
        AdamState {
            learning_rate,
            beta1: T::from_f64_lossy(0.9),
            beta2: T::from_f64_lossy(0.999),
            epsilon: T::from_f64_lossy(1e-8),
            step: 0,
            first: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            second: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[T] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[T] {
        &self.second[index]
    }

    /// One update of every parameter from its accumulated gradient.
    ///
    /// Shapes are validated before anything is modified, so a failed call
    /// leaves both the parameters and the state untouched.
    pub fn step(&mut self, params: &mut [Tensor<T>]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(TensorError::Optimizer {
                index: params.len().min(self.first.len()),
                detail: format!("optimizer tracks {} parameters, got {}", self.first.len(), params.len()),
            });
        }
        for (index, p) in params.iter().enumerate() {
            if p.numel() != self.first[index].len() {
                return Err(TensorError::Optimizer {
                    index,
                    detail: format!(
                        "moment length {} does not match parameter shape {:?}",
                        self.first[index].len(),
                        p.shape()
                    ),
                });
            }
            if p.grad().is_none() {
                return Err(TensorError::Optimizer {
                    index,
                    detail: "parameter has no gradient".into(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let one = T::one();
        let (b1, b2) = (self.beta1, self.beta2);
        let correction1 = one - b1.powi(t);
        let correction2 = one - b2.powi(t);
        for (index, p) in params.iter_mut().enumerate() {
            let (values, grad) = p.data_and_grad_mut();
            let grad = grad.expect("checked above");
            let (m, v) = (&mut self.first[index], &mut self.second[index]);
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                values[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
