use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is (near) zero are compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(parameter, flat entry)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
    pub passed: bool,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::Evaluation("gradient check needs a scalar function".into()));
    }
    let y = v.data()[0];
    if !y.is_finite() {
        return Err(Error::Evaluation("non-finite function value".into()));
    }
    Ok(y)
}

/// Compares reverse-mode gradients of `f` against central differences
/// `(f(p+eps) - f(p-eps)) / (2 eps)` at every entry of every parameter.
///
/// `f` must be deterministic: any randomness has to come from a stream it
/// recreates on every call.
pub fn grad_check<F>(f: F, params: &[Tensor], cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if cfg.eps <= 0.0 {
        return Err(Error::Config("gradient-check step must be positive".into()));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_finite() {
        return Err(Error::Evaluation("non-finite function value".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.get_or_zeros(*v, p.shape()))
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        entries_checked: 0,
        passed: true,
        analytic: Vec::new(),
        numeric: Vec::new(),
    };
    for pi in 0..params.len() {
        let mut num = Tensor::zeros(params[pi].shape());
        for e in 0..params[pi].numel() {
            let orig = params[pi].data()[e];
            work[pi].data_mut()[e] = orig + cfg.eps;
            let up = evaluate(&f, &work)?;
            work[pi].data_mut()[e] = orig - cfg.eps;
            let down = evaluate(&f, &work)?;
            work[pi].data_mut()[e] = orig;
            let n = (up - down) / (2.0 * cfg.eps);
            num.data_mut()[e] = n;

            let a = analytic[pi].data()[e];
            let abs = libm::fabs(a - n);
            let rel = abs / libm::fabs(a).max(libm::fabs(n)).max(cfg.floor);
            report.entries_checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((pi, e));
            }
        }
        numeric.push(num);
    }
    report.passed = report.max_rel_error < cfg.tol;
    report.analytic = analytic;
    report.numeric = numeric;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let r = grad_check(
            |t, p| t.mul(p[0], p[0]),
            &[Tensor::scalar(3.0)],
            GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(r.analytic[0].data()[0], 6.0);
        assert!((r.numeric[0].data()[0] - 6.0).abs() < 1e-6);
        assert!(r.passed);
    }

    #[test]
    fn constant_function() {
        let r = grad_check(
            |t, _| Ok(t.constant(Tensor::scalar(4.0))),
            &[Tensor::new(&[3], alloc::vec![1., 2., 3.]).unwrap()],
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.analytic[0].data().iter().all(|&v| v == 0.0));
        assert!(r.numeric[0].data().iter().all(|&v| v == 0.0));
        assert!(r.passed);
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let r = grad_check(
            |t, p| t.log(p[0]),
            &[Tensor::scalar(1e-6)],
            GradCheckConfig {
                eps: 1e-5,
                ..Default::default()
            },
        );
        assert!(r.is_err());
    }
}
