//! Adam with bias correction.

use crate::array::{Array, Real};
use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Array<T>>,
    pub v: Vec<Array<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|(_, _, p)| Array::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|(_, _, p)| Array::zeros(p.shape().to_vec())).collect(),
        }
    }
}

/// One Adam update. Every gradient is checked first; if any is non-finite
/// nothing is modified and the offending parameter is named in the error.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Array<T>],
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Usage(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((_, name, p), g) in params.iter().zip(grads) {
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "gradient for `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for (k, id) in ids.into_iter().enumerate() {
        let g = grads[k].data();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        let p = params.get_mut(id).data_mut();
        for j in 0..p.len() {
            let gj = g[j].as_f64();
            let mj = b1 * m[j].as_f64() + (1.0 - b1) * gj;
            let vj = b2 * v[j].as_f64() + (1.0 - b2) * gj * gj;
            m[j] = T::from_f64(mj);
            v[j] = T::from_f64(vj);
            let update = config.lr * (mj / bc1) / ((vj / bc2).sqrt() + config.eps);
            p[j] = T::from_f64(p[j].as_f64() - update);
        }
    }
    Ok(())
}
