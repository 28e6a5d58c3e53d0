//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamWConfig<F: Scalar> {
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    pub weight_decay: F,
}

impl<F: Scalar> Default for AdamWConfig<F> {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: F::real(1e-4),
            beta1: F::real(0.9),
            beta2: F::real(0.999),
            epsilon: F::real(1e-8),
            weight_decay: F::real(0.05),
        }
    }
}

/// Per-parameter-set optimizer state. Moment buffers are kept per named
/// parameter so the state survives checkpointing by name.
#[derive(Debug, Clone)]
pub struct AdamWState<F: Scalar> {
    pub step: u64,
    pub config: AdamWConfig<F>,
    pub moments: Vec<(String, Vec<F>, Vec<F>)>,
}

impl<F: Scalar> AdamWState<F> {
    pub fn new(config: AdamWConfig<F>, params: &[(String, usize)]) -> Self {
        AdamWState {
            step: 0,
            config,
            moments: params
                .iter()
                .map(|(name, len)| (name.clone(), vec![F::zero(); *len], vec![F::zero(); *len]))
                .collect(),
        }
    }

    /// One AdamW update over named (param, grad) pairs. Pairs must arrive in
    /// the same order the state was built with.
    pub fn step_update(&mut self, params: &mut [(&str, &mut Tensor<F>)]) -> Result<()> {
        if params.len() != self.moments.len() {
            return Err(Error::Dimension(format!(
                "optimizer has {} parameter sets, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        self.step += 1;
        let c = &self.config;
        let t = F::real(self.step as f64);
        let bc1 = F::one() - c.beta1.powf(t);
        let bc2 = F::one() - c.beta2.powf(t);
        for ((name, m, v), (pname, tensor)) in self.moments.iter_mut().zip(params.iter_mut()) {
            if name != pname {
                return Err(Error::Dimension(format!(
                    "optimizer state for '{}' paired with parameter '{}'",
                    name, pname
                )));
            }
            let grad = tensor.grad.as_ref().ok_or_else(|| {
                Error::Contract(format!("parameter '{}' has no gradient", name))
            })?;
            if grad.len() != m.len() {
                return Err(Error::Dimension(format!(
                    "parameter '{}': state length {}, gradient length {}",
                    name,
                    m.len(),
                    grad.len()
                )));
            }
            let grad = grad.clone();
            for i in 0..grad.len() {
                m[i] = c.beta1 * m[i] + (F::one() - c.beta1) * grad[i];
                v[i] = c.beta2 * v[i] + (F::one() - c.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let p = &mut tensor.data[i];
                *p = *p
                    - c.learning_rate * (m_hat / (v_hat.sqrt() + c.epsilon) + c.weight_decay * *p);
            }
        }
        Ok(())
    }
}
