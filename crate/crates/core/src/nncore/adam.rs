use crate::error::{Error, Result};

use super::params::{ParamGrads, ParamStore};
use super::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified when any gradient is
/// non-finite; the error names the first offending parameter.
pub fn adam_step<S: Scalar>(
    store: &mut ParamStore<S>,
    grads: &ParamGrads<S>,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.tensors().len() != store.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.tensors().len(),
            store.len()
        )));
    }
    for id in store.ids() {
        let g = grads.get(id);
        if g.shape() != store.get(id).shape() {
            return Err(Error::Shape(format!(
                "gradient of `{}` is {:?}",
                store.name(id),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(store.name(id).to_string()));
        }
    }
    store.steps += 1;
    let t = store.steps as i32;
    let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
    let c1 = S::one() - S::lit(cfg.beta1.powi(t));
    let c2 = S::one() - S::lit(cfg.beta2.powi(t));
    let (lr, eps) = (S::lit(cfg.lr), S::lit(cfg.eps));
    for id in store.ids() {
        let i = id.index();
        let g = grads.get(id).data();
        let m = store.first_moment[i].data_mut();
        for (mk, &gk) in m.iter_mut().zip(g) {
            *mk = b1 * *mk + (S::one() - b1) * gk;
        }
        let v = store.second_moment[i].data_mut();
        for (vk, &gk) in v.iter_mut().zip(g) {
            *vk = b2 * *vk + (S::one() - b2) * gk * gk;
        }
        let (m, v) = (
            store.first_moment[i].data().to_vec(),
            store.second_moment[i].data().to_vec(),
        );
        for ((w, mk), vk) in store.get_mut(id).data_mut().iter_mut().zip(m).zip(v) {
            *w -= lr * (mk / c1) / ((vk / c2).sqrt() + eps);
        }
    }
    Ok(())
}
