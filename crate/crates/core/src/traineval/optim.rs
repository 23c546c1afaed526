use crate::error::{Error, Result};
use crate::model::OptimizerState;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip: Some(1.0),
        }
    }
}

/// Adaptive moment estimation with bias correction and optional global
/// norm clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: OptimizerState,
}

/// Euclidean norm over every gradient entry.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            state: OptimizerState {
                step: 0,
                m: zeros.clone(),
                v: zeros,
            },
        }
    }

    /// Continues from saved moments; empty moments restart from zero.
    pub fn resume(config: AdamConfig, params: &ParamStore, state: OptimizerState) -> Result<Self> {
        if state.m.is_empty() && state.v.is_empty() {
            let mut adam = Self::new(config, params);
            adam.state.step = state.step;
            return Ok(adam);
        }
        for ((t, m), v) in params.tensors().zip(&state.m).zip(&state.v) {
            if t.shape() != m.shape() || t.shape() != v.shape() {
                return Err(Error::Shape("optimizer moments do not match the parameters".into()));
            }
        }
        if state.m.len() != params.len() || state.v.len() != params.len() {
            return Err(Error::Shape("optimizer moments do not match the parameters".into()));
        }
        Ok(Self { config, state })
    }

    /// Applies one update and returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<f64> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        let c = self.config;
        let norm = global_norm(grads);
        let scale = match c.clip {
            Some(max) if norm > max => max / (norm + 1e-6),
            _ => 1.0,
        };
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for i in 0..grads.len() {
            let theta = params.get_index(i).data();
            let g = grads[i].data();
            let (m_old, v_old) = (self.state.m[i].data(), self.state.v[i].data());
            let n = theta.len();
            let (mut m, mut v, mut out) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for j in 0..n {
                let gj = g[j] * scale + c.weight_decay * theta[j];
                let mj = c.beta1 * m_old[j] + (1.0 - c.beta1) * gj;
                let vj = c.beta2 * v_old[j] + (1.0 - c.beta2) * gj * gj;
                out.push(theta[j] - c.lr * (mj / bc1) / ((vj / bc2).sqrt() + c.eps));
                m.push(mj);
                v.push(vj);
            }
            let shape = grads[i].shape().to_vec();
            self.state.m[i] = Tensor::new(&shape, m)?;
            self.state.v[i] = Tensor::new(&shape, v)?;
            params.set_index(i, Tensor::new(&shape, out)?)?;
        }
        Ok(norm)
    }
}
