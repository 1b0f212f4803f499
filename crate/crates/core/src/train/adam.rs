use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::WeightSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one flat vector per weight tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(weights: &WeightSet) -> Self {
        let zeros: Vec<Vec<f64>> = weights.params().iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Checks that the moments mirror `weights` and are finite.
    pub fn validate(&self, weights: &WeightSet) -> Result<()> {
        let params = weights.params();
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::Config("optimizer state does not match the weight set".into()));
        }
        for ((p, m), v) in params.iter().zip(&self.m).zip(&self.v) {
            if m.len() != p.tensor.len() || v.len() != p.tensor.len() {
                return Err(Error::Config(format!(
                    "optimizer state for {} has the wrong size",
                    p.name
                )));
            }
            if !m.iter().chain(v).all(|x| x.is_finite()) {
                return Err(Error::NonFinite { param: p.name.clone() });
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update. Gradients are checked before anything is
/// modified; updated weights are rounded to single precision so that saved
/// weight files reproduce the in-memory state exactly.
pub fn adam_step(
    weights: &mut WeightSet,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    if grads.len() != weights.len() {
        return Err(Error::shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            weights.len()
        )));
    }
    for (p, g) in weights.params().iter().zip(grads) {
        if g.dims() != p.tensor.dims() {
            return Err(Error::shape(format!(
                "gradient for {} is {:?}, expected {:?}",
                p.name,
                g.dims(),
                p.tensor.dims()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite { param: p.name.clone() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let w = weights.tensor_mut(i).data_mut();
        for (j, &gj) in g.data().iter().enumerate() {
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            w[j] = (w[j] - lr * m_hat / (v_hat.sqrt() + hyper.eps)) as f32 as f64;
        }
    }
    Ok(())
}
