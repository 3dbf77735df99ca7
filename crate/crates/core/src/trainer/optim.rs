//! Learning-rate schedule and Adam with decoupled weight decay.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::encoders::EncoderParams;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Linear ramp from 0 over `warmup` epochs, then cosine decay from
/// `lr_init` toward 0 at `epochs`.
pub fn lr_schedule(epoch: usize, epochs: usize, warmup: usize, lr_init: f64) -> f64 {
    if epoch < warmup {
        return lr_init * epoch as f64 / warmup as f64;
    }
    let span = epochs.saturating_sub(warmup).max(1) as f64;
    let t = ((epoch - warmup) as f64 / span).min(1.0);
    lr_init * 0.5 * (1.0 + (PI * t).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates this parameter has received.
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub moments: BTreeMap<String, Moments>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            moments: BTreeMap::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update of `data` in place.
    pub fn update(
        &mut self,
        name: &str,
        data: &mut [f64],
        grad: &[f64],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if data.len() != grad.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: vec![data.len()],
                rhs: vec![grad.len()],
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite gradient {} at element {i} of {name}",
                grad[i]
            )));
        }
        let st = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| Moments {
                m: vec![0.0; grad.len()],
                v: vec![0.0; grad.len()],
                step: 0,
            });
        if st.m.len() != grad.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: vec![st.m.len()],
                rhs: vec![grad.len()],
            });
        }
        st.step += 1;
        let c1 = 1.0 - self.beta1.powi(st.step as i32);
        let c2 = 1.0 - self.beta2.powi(st.step as i32);
        for i in 0..data.len() {
            data[i] -= lr * weight_decay * data[i];
            st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * grad[i];
            st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = st.m[i] / c1;
            let v_hat = st.v[i] / c2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Applies one Adam step to every parameter that has a gradient. Parameters
/// missing from `grads` are left untouched, weight decay included.
pub fn adam_step(
    params: &mut EncoderParams<f64>,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    for name in grads.keys() {
        if params.get(name).is_none() {
            return Err(Error::Invalid(format!(
                "gradient for unknown parameter {name}"
            )));
        }
    }
    for (name, t) in params.iter_mut() {
        if let Some(g) = grads.get(name) {
            state.update(name, &mut t.data, g, lr, weight_decay)?;
        }
    }
    Ok(())
}
