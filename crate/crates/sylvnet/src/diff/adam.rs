//! Adam with decoupled weight decay.

use super::params::ParamSet;
use crate::Mat;
use ndarray::Array2;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay factor; applied as `p <- p - lr * wd * p` before the
    /// Adam delta, only for parameters with `decay = true`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Per-parameter moment estimates, aligned with a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<Mat>,
    second_moment: Vec<Mat>,
    step_count: u64,
    pub cfg: AdamConfig,
}

impl AdamState {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        let zeros = |p: &ParamSet| {
            p.iter().map(|q| Array2::zeros(q.value.raw_dim())).collect::<Vec<_>>()
        };
        Self { first_moment: zeros(params), second_moment: zeros(params), step_count: 0, cfg }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected Adam update. `grads` must be aligned with `params`.
pub fn adam_step(params: &mut ParamSet, grads: &[Mat], state: &mut AdamState) {
    assert_eq!(grads.len(), params.len(), "gradient/parameter count mismatch");
    state.step_count += 1;
    let t = state.step_count as i32;
    let cfg = state.cfg;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for idx in 0..params.len() {
        let p = params.at_mut(idx);
        let g = &grads[idx];
        assert_eq!(g.raw_dim(), p.value.raw_dim(), "gradient shape mismatch for {}", p.name);
        if p.decay && cfg.weight_decay != 0.0 {
            p.value.mapv_inplace(|x| x - cfg.lr * cfg.weight_decay * x);
        }
        let m = &mut state.first_moment[idx];
        let v = &mut state.second_moment[idx];
        ndarray::Zip::from(m.view_mut()).and(g).for_each(|m, &g| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        });
        ndarray::Zip::from(v.view_mut()).and(g).for_each(|v, &g| {
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        });
        ndarray::Zip::from(&mut p.value).and(&*m).and(&*v).for_each(|p, &m, &v| {
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        });
    }
}
