//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::net::DipParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &DipParams) -> Result<Self> {
        if !(config.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                config.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::InvalidParameter(
                "Adam betas must lie in [0, 1)".into(),
            ));
        }
        let n = params.parameter_count();
        Ok(Self {
            config,
            step: 0,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        })
    }

    /// Applies one update in place.
    pub fn update(&mut self, params: &mut DipParams, grads: &DipParams) -> Result<()> {
        if params.arch != grads.arch || self.first_moment.len() != params.parameter_count() {
            return Err(Error::Shape(
                "gradient layout does not match the parameters".into(),
            ));
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        let mut offset = 0;
        for (p, g) in params.slices_mut().into_iter().zip(grads.slices()) {
            let m = &mut self.first_moment[offset..offset + p.len()];
            let v = &mut self.second_moment[offset..offset + p.len()];
            for (((pv, &gv), mv), vv) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                *pv -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            offset += p.len();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dip::net::Architecture;

    fn arch() -> Architecture {
        Architecture {
            hidden_channels: 2,
            inner_layers: 1,
            taps: [1, 1, 3, 3],
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = DipParams::init(arch(), 1).unwrap();
        let before = params.clone();
        let mut grads = DipParams::zeros(arch()).unwrap();
        for (i, s) in grads.slices_mut().into_iter().enumerate() {
            for (j, v) in s.iter_mut().enumerate() {
                *v = if (i + j) % 2 == 0 {
                    0.3 + j as f64
                } else {
                    -2.0
                };
            }
        }
        let mut state = AdamState::new(AdamConfig::default(), &params).unwrap();
        state.update(&mut params, &grads).unwrap();
        let lr = state.config.learning_rate;
        for ((p, b), g) in params
            .slices()
            .iter()
            .zip(before.slices())
            .zip(grads.slices())
        {
            for ((&pv, &bv), &gv) in p.iter().zip(b).zip(g) {
                let expected = -lr * gv / (gv.abs() + 1e-8);
                assert!((pv - bv - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_gradient_on_fresh_state_is_a_no_op() {
        let mut params = DipParams::init(arch(), 1).unwrap();
        let before = params.clone();
        let mut state = AdamState::new(AdamConfig::default(), &params).unwrap();
        state
            .update(&mut params, &DipParams::zeros(arch()).unwrap())
            .unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut params = DipParams::init(arch(), 1).unwrap();
        let mut state = AdamState::new(AdamConfig::default(), &params).unwrap();
        let mut grads = DipParams::zeros(arch()).unwrap();
        grads.head.re[0] = 1.0;
        state.update(&mut params, &grads).unwrap();
        let snapshot = params.clone();
        let m_before: f64 = state.first_moment.iter().map(|v| v.abs()).sum();
        // a zero gradient still moves through the decaying first moment, so
        // check the untouched coordinates only
        state
            .update(&mut params, &DipParams::zeros(arch()).unwrap())
            .unwrap();
        let m_after: f64 = state.first_moment.iter().map(|v| v.abs()).sum();
        assert!(m_after < m_before);
        assert_eq!(params.layers, snapshot.layers);
    }

    #[test]
    fn nonpositive_learning_rate_is_rejected() {
        let params = DipParams::zeros(arch()).unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(cfg, &params).is_err());
    }
}
