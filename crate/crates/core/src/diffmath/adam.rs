//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use crate::diffmath::tensor::Tensor;
use crate::error::{Error, Result};

/// Optimizer hyperparameters. Moment decays are fixed at the customary
/// 0.9 / 0.999 and epsilon at 1e-8; only the learning rate varies.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter accumulator state.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Adam over a set of named parameters. State is keyed by name so it can
/// be checkpointed alongside the parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub hp: AdamParams,
    pub states: BTreeMap<String, AdamState>,
}

impl Adam {
    pub fn new(hp: AdamParams) -> Self {
        Adam {
            hp,
            states: BTreeMap::new(),
        }
    }

    /// One bias-corrected update of `param` under `grad`, in place.
    pub fn step_param(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if grad.shape() != param.shape() {
            return Err(Error::Dim(format!(
                "adam: grad shape {:?} does not match param {:?} ({name})",
                grad.shape(),
                param.shape()
            )));
        }
        let state = self
            .states
            .entry(name.to_string())
            .or_insert_with(|| AdamState::new(param.numel()));
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.hp.beta1.powi(t);
        let bc2 = 1.0 - self.hp.beta2.powi(t);
        let g = grad.data();
        let p = param.data_mut();
        for i in 0..g.len() {
            state.m[i] = self.hp.beta1 * state.m[i] + (1.0 - self.hp.beta1) * g[i];
            state.v[i] = self.hp.beta2 * state.v[i] + (1.0 - self.hp.beta2) * g[i] * g[i];
            let m_hat = state.m[i] / bc1;
            let v_hat = state.v[i] / bc2;
            p[i] -= self.hp.lr * m_hat / (v_hat.sqrt() + self.hp.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut adam = Adam::new(AdamParams::with_lr(1e-4));
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.data().to_vec();
        adam.step_param("p", &mut p, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(p.data(), before.as_slice());
    }

    #[test]
    fn first_step_moves_by_lr_for_unit_grad() {
        // fresh state, grad 1: m_hat = 1, v_hat = 1, delta = -lr/(1+eps)
        let mut adam = Adam::new(AdamParams::with_lr(1e-4));
        let mut p = Tensor::scalar(0.0);
        adam.step_param("p", &mut p, &Tensor::scalar(1.0)).unwrap();
        assert!((p.item() + 1e-4).abs() < 1e-9);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut adam = Adam::new(AdamParams::with_lr(1e-3));
            let mut p = Tensor::new(vec![2], vec![0.3, -0.7]).unwrap();
            for s in 1..=25 {
                let g = Tensor::new(vec![2], vec![(s as f64 * 0.37).sin(), (s as f64 * 0.11).cos()])
                    .unwrap();
                adam.step_param("p", &mut p, &g).unwrap();
            }
            p.data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut adam = Adam::new(AdamParams::with_lr(1e-4));
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        assert!(adam.step_param("p", &mut p, &g).is_err());
    }
}
