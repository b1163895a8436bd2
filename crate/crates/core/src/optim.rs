//! AdamW with decoupled weight decay.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter {index} (max abs {max_abs})")]
    NonFiniteGradient { index: usize, max_abs: f64 },
    #[error("parameter/gradient count mismatch: {params} vs {grads}")]
    CountMismatch { params: usize, grads: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

/// First/second moment buffers, one pair per parameter tensor.
pub struct AdamState<S: Scalar> {
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Tensor<S>]) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        AdamState { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update. Decay is decoupled: it scales the parameter directly and
/// never enters the moment estimates. A non-finite gradient aborts the whole
/// step before any parameter is touched.
pub fn adamw_step<S: Scalar>(
    params: &mut [Tensor<S>],
    grads: &[Tensor<S>],
    state: &mut AdamState<S>,
    cfg: &AdamConfig,
) -> Result<(), OptimError> {
    if params.len() != grads.len() {
        return Err(OptimError::CountMismatch { params: params.len(), grads: grads.len() });
    }
    for (index, g) in grads.iter().enumerate() {
        assert_eq!(
            g.shape(),
            params[index].shape(),
            "gradient shape mismatch at parameter {index}"
        );
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient {
                index,
                max_abs: g.max_abs().as_f64(),
            });
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let b1 = S::cast(cfg.beta1);
    let b2 = S::cast(cfg.beta2);
    let one = S::one();
    let lr = S::cast(cfg.lr);
    let eps = S::cast(cfg.eps);
    let decay = S::cast(cfg.lr * cfg.weight_decay);
    let corr1 = S::cast(1.0 - cfg.beta1.powf(t));
    let corr2 = S::cast(1.0 - cfg.beta2.powf(t));

    for i in 0..params.len() {
        let p = params[i].as_slice_mut();
        let g = grads[i].as_slice();
        let m = state.m[i].as_slice_mut();
        let v = state.v[i].as_slice_mut();
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (one - b1) * g[k];
            v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
            let m_hat = m[k] / corr1;
            let v_hat = v[k] / corr2;
            p[k] = p[k] - lr * m_hat / (v_hat.sqrt() + eps) - decay * p[k];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(x: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::scalar(x)]
    }

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let mut p = one_param(1.5);
        let g = one_param(0.0);
        let mut st = AdamState::new(&p);
        adamw_step(&mut p, &g, &mut st, &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(p[0].item(), 1.5);
    }

    #[test]
    fn unit_grad_moves_by_lr() {
        // bias-corrected m_hat = v_hat = 1 after one step with constant grad 1
        let mut p = one_param(1.0);
        let g = one_param(1.0);
        let mut st = AdamState::new(&p);
        adamw_step(&mut p, &g, &mut st, &AdamConfig::with_lr(0.1)).unwrap();
        let delta = 1.0 - p[0].item();
        assert!((delta - 0.1).abs() < 1e-6, "delta {delta}");
    }

    #[test]
    fn decoupled_decay_scales_param() {
        let mut p = one_param(2.0);
        let g = one_param(0.0);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.1, ..Default::default() };
        adamw_step(&mut p, &g, &mut st, &cfg).unwrap();
        assert!((p[0].item() - 2.0 * (1.0 - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_grad_aborts() {
        let mut p = one_param(1.0);
        let g = one_param(f64::NAN);
        let mut st = AdamState::new(&p);
        let err = adamw_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, OptimError::NonFiniteGradient { index: 0, .. }));
        assert_eq!(p[0].item(), 1.0, "params untouched after abort");
    }
}
