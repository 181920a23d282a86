use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: ParamSet,
    second: ParamSet,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        AdamState {
            config,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Gradients are validated before any
    /// parameter is touched, so a rejected step leaves everything unchanged.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads.require(name)?;
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        for (name, p) in params.iter_mut() {
            let g = grads.require(name)?.data();
            let m = self.first.get_mut(name).expect("moments built from params").data_mut();
            for (mv, &gv) in m.iter_mut().zip(g) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
            }
            let v = self.second.get_mut(name).expect("moments built from params").data_mut();
            for (vv, &gv) in v.iter_mut().zip(g) {
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            }
            let m = self.first.get(name).expect("moments built from params").data();
            let v = self.second.get(name).expect("moments built from params").data();
            for ((pv, &mv), &vv) in p.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mv / bias1;
                let v_hat = vv / bias2;
                *pv -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
