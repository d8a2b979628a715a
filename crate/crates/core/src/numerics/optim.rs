use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named trainable tensors plus their pending gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    #[serde(skip)]
    grads: Vec<Option<Tensor>>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), grads: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.grads.push(None);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.values[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn grad(&self, i: usize) -> Option<&Tensor> {
        self.grads.get(i).and_then(Option::as_ref)
    }

    pub fn set_grad(&mut self, i: usize, grad: Tensor) -> Result<()> {
        if grad.shape() != self.values[i].shape() {
            return Err(Error::Dimension(format!(
                "gradient {:?} for parameter {} of shape {:?}",
                grad.shape(),
                self.names[i],
                self.values[i].shape()
            )));
        }
        if self.grads.len() < self.values.len() {
            self.grads.resize(self.values.len(), None);
        }
        self.grads[i] = Some(grad);
        Ok(())
    }

    /// Adds `grad` into any existing gradient for parameter `i`.
    pub fn accumulate_grad(&mut self, i: usize, grad: &Tensor) -> Result<()> {
        if self.grads.len() < self.values.len() {
            self.grads.resize(self.values.len(), None);
        }
        match &mut self.grads[i] {
            Some(g) => {
                if g.shape() != grad.shape() {
                    return Err(Error::Dimension("gradient shape mismatch".into()));
                }
                g.data_mut().iter_mut().zip(grad.data()).for_each(|(a, &b)| *a += b);
                Ok(())
            }
            None => self.set_grad(i, grad.clone()),
        }
    }

    pub fn clear_grads(&mut self) {
        self.grads = vec![None; self.values.len()];
    }

    pub fn grad_norm(&self) -> f32 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt() as f32
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f32) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moment buffers for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let first = params.values().iter().map(|t| vec![0.0; t.len()]).collect();
        let second = params.values().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { config, first, second, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update, then zeroes the consumed gradients.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if self.first.len() != params.len() {
            return Err(Error::Contract("optimizer built for a different parameter set".into()));
        }
        for i in 0..params.len() {
            if params.grad(i).is_none() {
                return Err(Error::Contract(format!("parameter {} has no gradient", params.names()[i])));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let grad = params.grads[i].take().expect("checked above");
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let value = params.values[i].data_mut();
            for j in 0..value.len() {
                let g = grad.data()[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                value[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            params.grads[i] = Some(Tensor::zeros(grad.shape()));
        }
        Ok(())
    }
}
