use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for a fixed set of registered parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    slots: Vec<(ParamId, Vec<f64>, Vec<f64>)>,
    lr_scale: Vec<f64>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, store: &ParamStore, params: &[ParamId]) -> Self {
        let slots: Vec<(ParamId, Vec<f64>, Vec<f64>)> = params
            .iter()
            .map(|&id| {
                let n = store.value(id).len();
                (id, vec![0.0; n], vec![0.0; n])
            })
            .collect();
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step: 0,
            lr_scale: vec![1.0; slots.len()],
            slots,
        }
    }

    /// Multiplies the learning rate of one registered parameter.
    pub fn set_lr_scale(&mut self, id: ParamId, scale: f64) -> Result<()> {
        let i = self
            .slots
            .iter()
            .position(|s| s.0 == id)
            .ok_or_else(|| Error::invalid(format!("parameter {} is not registered", id.index())))?;
        self.lr_scale[i] = scale;
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn registered(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.slots.iter().map(|s| s.0)
    }
}

/// One bias-corrected Adam update of every registered parameter; grads are cleared afterwards.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if let Some((id, _, _)) = state.slots.iter().find(|(id, _, _)| store.get(*id).grad.is_none()) {
        return Err(Error::MissingGrad(store.get(*id).name.clone()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((id, m, v), scale) in state.slots.iter_mut().zip(&state.lr_scale) {
        let lr = state.lr * scale;
        let p = store.get_mut(*id);
        let grad = p.grad.take().expect("checked above");
        for (((w, g), m), v) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    store.zero_grads();
    Ok(())
}
