//! Minimal reverse-mode differentiable tensor engine.
//!
//! Values are recorded on a [`Tape`] as primitives run; [`Tape::backward`]
//! sweeps the record in reverse. Randomness enters only through
//! [`RngStream`], which keeps every forward pass reproducible.

mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use rng::{purpose, RngStream};
pub use tape::{Gradients, Tape, Unary, Var};
pub use tensor::Tensor;

use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Inverted dropout: in training, zero each entry with probability `rate`
/// and scale survivors by `1/(1-rate)`. Identity otherwise.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, train: bool, rng: &mut RngStream) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(alloc::format!("dropout rate {rate} outside [0, 1)")));
    }
    if !train || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let shape = tape.shape(x).to_vec();
    let n = tape.value(x).numel();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    tape.mul_const(x, Tensor::from_parts(shape, mask))
}

/// Standard-normal draws shaped like `shape`.
pub fn standard_normal(shape: &[usize], rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Reparameterized draw `mu + sqrt(sigma2) ⊙ ε`, `ε ~ N(0, I)`.
pub fn gaussian_sample(tape: &mut Tape, mu: Var, sigma2: Var, rng: &mut RngStream) -> Result<Var> {
    let noise = standard_normal(tape.shape(mu), rng);
    tape.gaussian_reparam(mu, sigma2, noise)
}
