//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::tensor::Tensor;

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
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: ParamStore,
    v: ParamStore,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = |p: &ParamStore| {
            let mut z = ParamStore::new();
            for (name, t) in p.iter() {
                z.insert(name, Tensor::zeros(t.shape()))
                    .expect("names are unique");
            }
            z
        };
        Self {
            m: zeros(params),
            v: zeros(params),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Applies one update to every parameter in lexicographic order.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &ParamStore,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .map_err(|_| Error::MissingGradient(name.to_string()))?;
        if g.shape() != p.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("gradient of {name} has shape {:?}, parameter {:?}", g.shape(), p.shape()),
            ));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let step = (cfg.lr / bc1) as f32;
    let inv_bc2_sqrt = (1.0 / bc2.sqrt()) as f32;
    let eps = cfg.eps as f32;
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        let m = state.m.get_mut(name)?;
        let v = state.v.get_mut(name)?;
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            *pv -= step * *mv / (vv.sqrt() * inv_bc2_sqrt + eps);
        }
    }
    Ok(())
}
