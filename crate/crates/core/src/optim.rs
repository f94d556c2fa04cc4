//! Dense Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamHyper {
            learning_rate,
            ..AdamHyper::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "optimizer.learning_rate",
                "must be finite and non-negative",
            ));
        }
        for (field, b) in [
            ("optimizer.beta1", self.beta1),
            ("optimizer.beta2", self.beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, format!("{b} must lie in [0, 1)")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::config("optimizer.epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, params: &Parameters) -> bool {
        self.m.len() == params.tensors().len()
            && self.v.len() == params.tensors().len()
            && params
                .tensors()
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(t, (m, v))| m.len() == t.len() && v.len() == t.len())
    }
}

/// One Adam update over every tensor, including those whose gradient is absent
/// (treated as zero).
///
/// Gradients are checked for finiteness before anything is modified.
pub fn adam_step(
    params: &mut Parameters,
    grads: &Gradients,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    if grads.len() != params.tensors().len() {
        return Err(Error::shape(
            "adam_step gradients",
            params.tensors().len(),
            grads.len(),
        ));
    }
    if !state.matches(params) {
        return Err(Error::shape(
            "adam_step state",
            "buffers matching parameters",
            "mismatch",
        ));
    }
    for (idx, g) in grads.tensors().iter().enumerate() {
        let Some(g) = g else { continue };
        if g.shape() != params.tensor(idx).shape() {
            return Err(Error::shape(
                "adam_step gradient",
                format!("{:?}", params.tensor(idx).shape()),
                format!("{:?}", g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of {}",
                params.layout().specs()[idx].name
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr = hyper.learning_rate;
    let eps = hyper.epsilon;

    for idx in 0..grads.len() {
        let g = grads.tensor(idx).map(|m| m.data());
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let theta = params.tensor_mut(idx).data_mut();
        for i in 0..theta.len() {
            let gi = g.map_or(0.0, |g| g[i]);
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
