//! diffGrad: an Adam-style optimizer whose per-element step is scaled by a
//! friction coefficient `xi = sigmoid(|g_prev - g|)`. The friction multiplies
//! the bias-corrected first moment; with an unchanged gradient `xi` is
//! exactly 0.5, i.e. half the corresponding Adam step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::param::Parameter;
use crate::scalar::{sc, Scalar};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err("beta1 and beta2 must be in [0, 1)".into());
        }
        if self.lr <= 0.0 || self.eps <= 0.0 {
            return Err("lr and eps must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("optimizer state for `{name}` has {state} elements, parameter has {param}")]
    StateShapeMismatch {
        name: String,
        state: usize,
        param: usize,
    },
}

/// Per-parameter moment buffers. `g_prev` starts at zero, so the first step
/// sees `delta_g = -g` and `xi = sigmoid(|g|)`.
#[derive(Debug, Clone)]
pub struct ParamState<T: Scalar> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub g_prev: Vec<T>,
}

impl<T: Scalar> ParamState<T> {
    fn zeros(n: usize) -> Self {
        ParamState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            g_prev: vec![T::zero(); n],
        }
    }
}

#[derive(Debug)]
pub struct DiffGrad<T: Scalar> {
    pub cfg: OptimConfig,
    pub state: Vec<ParamState<T>>,
    pub t: u64,
}

impl<T: Scalar> DiffGrad<T> {
    pub fn new(cfg: OptimConfig, params: &[Parameter<T>]) -> Self {
        DiffGrad {
            cfg,
            state: params.iter().map(|p| ParamState::zeros(p.numel())).collect(),
            t: 0,
        }
    }

    /// One diffGrad update from the gradients currently held in `params`.
    /// Returns the applied deltas per parameter.
    pub fn step(&mut self, params: &mut [Parameter<T>]) -> Result<Vec<Vec<T>>, OptimError> {
        assert_eq!(params.len(), self.state.len(), "optimizer/parameter list mismatch");
        self.t += 1;
        let lr = sc::<T>(self.cfg.lr);
        let b1 = sc::<T>(self.cfg.beta1);
        let b2 = sc::<T>(self.cfg.beta2);
        let eps = sc::<T>(self.cfg.eps);
        let bc1 = T::one() - sc::<T>(self.cfg.beta1.powi(self.t as i32));
        let bc2 = T::one() - sc::<T>(self.cfg.beta2.powi(self.t as i32));
        let mut all_deltas = Vec::with_capacity(params.len());
        for (p, s) in params.iter_mut().zip(&mut self.state) {
            if s.m.len() != p.numel() {
                return Err(OptimError::StateShapeMismatch {
                    name: p.name.clone(),
                    state: s.m.len(),
                    param: p.numel(),
                });
            }
            let mut deltas = Vec::with_capacity(p.data.len());
            for i in 0..p.data.len() {
                let g = p.grad[i];
                let delta_g = s.g_prev[i] - g;
                let xi = T::one() / (T::one() + (-delta_g.abs()).exp());
                s.m[i] = b1 * s.m[i] + (T::one() - b1) * g;
                s.v[i] = b2 * s.v[i] + (T::one() - b2) * g * g;
                let m_hat = s.m[i] / bc1;
                let v_hat = s.v[i] / bc2;
                let d = -lr * xi * m_hat / (v_hat.sqrt() + eps);
                p.data[i] += d;
                s.g_prev[i] = g;
                deltas.push(d);
            }
            all_deltas.push(deltas);
        }
        Ok(all_deltas)
    }
}

/// Plain Adam with bias correction. Reference implementation used by the
/// diffGrad tests (constant-gradient step must be exactly half of Adam's).
#[derive(Debug)]
pub struct AdamRef<T: Scalar> {
    pub cfg: OptimConfig,
    pub state: Vec<ParamState<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamRef<T> {
    pub fn new(cfg: OptimConfig, params: &[Parameter<T>]) -> Self {
        AdamRef {
            cfg,
            state: params.iter().map(|p| ParamState::zeros(p.numel())).collect(),
            t: 0,
        }
    }

    /// Returns the applied deltas per parameter.
    pub fn step(&mut self, params: &mut [Parameter<T>]) -> Vec<Vec<T>> {
        self.t += 1;
        let lr = sc::<T>(self.cfg.lr);
        let b1 = sc::<T>(self.cfg.beta1);
        let b2 = sc::<T>(self.cfg.beta2);
        let eps = sc::<T>(self.cfg.eps);
        let bc1 = T::one() - sc::<T>(self.cfg.beta1.powi(self.t as i32));
        let bc2 = T::one() - sc::<T>(self.cfg.beta2.powi(self.t as i32));
        params
            .iter_mut()
            .zip(&mut self.state)
            .map(|(p, s)| {
                let mut deltas = Vec::with_capacity(p.data.len());
                for i in 0..p.data.len() {
                    let g = p.grad[i];
                    s.m[i] = b1 * s.m[i] + (T::one() - b1) * g;
                    s.v[i] = b2 * s.v[i] + (T::one() - b2) * g * g;
                    let m_hat = s.m[i] / bc1;
                    let v_hat = s.v[i] / bc2;
                    let d = -lr * m_hat / (v_hat.sqrt() + eps);
                    p.data[i] += d;
                    deltas.push(d);
                }
                deltas
            })
            .collect()
    }
}

/// Zero every gradient buffer. Idempotent.
pub fn zero_grads<T: Scalar>(params: &mut [Parameter<T>]) {
    for p in params {
        p.grad.fill(T::zero());
    }
}
