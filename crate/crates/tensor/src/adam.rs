//! Adam with coupled (L2-in-gradient) weight decay.

use crate::error::{dim_err, Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment buffers for a fixed, ordered list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first_moment: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        Self {
            config,
            second_moment: first_moment.clone(),
            first_moment,
            step: 0,
        }
    }
}

/// One Adam update over `params` in place.
///
/// Weight decay enters as `g + λ·θ`. The update is rejected, leaving params
/// and state untouched, when any gradient entry is non-finite.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return dim_err(format!(
            "adam_step: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.first_moment.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
            return dim_err(format!(
                "adam_step: tensor {i} param {:?}, grad {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                state.first_moment[i].shape()
            ));
        }
        if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(format!(
                "gradient of tensor {i} has {} at flat index {pos}; update rejected",
                g.data()[pos]
            )));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - (c.beta1 as f64).powi(t);
    let bc2 = 1.0 - (c.beta2 as f64).powi(t);
    let (b1, b2) = (c.beta1 as f64, c.beta2 as f64);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j] as f64 + c.weight_decay as f64 * *theta as f64;
            let mj = b1 * m[j] as f64 + (1.0 - b1) * gj;
            let vj = b2 * v[j] as f64 + (1.0 - b2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let mhat = mj / bc1;
            let vhat = vj / bc2;
            *theta = (*theta as f64 - c.lr as f64 * mhat / (vhat.sqrt() + c.eps as f64)) as f32;
        }
    }
    Ok(())
}
