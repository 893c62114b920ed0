use alloc::vec::Vec;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step with decoupled weight decay
/// `p ← p − η·wd·p`. Nothing is modified if any gradient is non-finite.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptState, lr: f64, weight_decay: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Structure("optimizer buffers do not match parameters".into()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(crate::error::dim_err("adam_step", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(alloc::format!("#{i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - libm::pow(b1, t as f64);
    let c2 = 1.0 - libm::pow(b2, t as f64);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for (k, &gk) in g.data().iter().enumerate() {
            md[k] = b1 * md[k] + (1.0 - b1) * gk;
            vd[k] = b2 * vd[k] + (1.0 - b2) * gk * gk;
            let m_hat = md[k] / c1;
            let v_hat = vd[k] / c2;
            let old = pd[k];
            pd[k] = old - lr * m_hat / (libm::sqrt(v_hat) + state.eps) - lr * weight_decay * old;
        }
    }
    Ok(())
}
