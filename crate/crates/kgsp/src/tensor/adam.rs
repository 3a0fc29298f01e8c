//! Adam with classic (coupled) L2 weight decay: the decay is added to the
//! gradient before the moment updates, matching the convention of the
//! framework the default hyperparameters come from.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-5,
        }
    }
}

/// First and second moment estimates plus the step counter, one moment pair
/// per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One optimizer step over a flat parameter list.
///
/// `g <- grad + wd * theta`, bias-corrected moments, then
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam_step over {} params, {} grads, {} moment pairs",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::ShapeMismatch(format!(
                "adam_step param {i}: param {:?}, grad {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                state.m[i].shape()
            )));
        }
        if let Some(pos) = g.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of param {i} is {} at flat index {pos}",
                g.values()[pos]
            )));
        }
    }

    state.t += 1;
    let t = state.t as f64;
    let corr1 = 1.0 - hp.beta1.powf(t);
    let corr2 = 1.0 - hp.beta2.powf(t);

    for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].values_mut();
        let v = state.v[i].values_mut();
        let pv = (*param).values_mut();
        for j in 0..pv.len() {
            let g = grad.values()[j] + hp.weight_decay * pv[j];
            m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g;
            v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g * g;
            let m_hat = m[j] / corr1;
            let v_hat = v[j] / corr2;
            pv[j] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
    Ok(())
}
