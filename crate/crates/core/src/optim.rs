//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ParameterStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Optimizer state. Moments are keyed by parameter name and kept at `f32`
/// precision, like the parameters themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParameterStore) -> Self {
        let zeros: BTreeMap<String, Tensor> = params
            .iter()
            .map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape())))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update. Parameters without a gradient are treated as
    /// having a zero gradient.
    pub fn update(&mut self, params: &mut ParameterStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let (Some(m), Some(v)) = (self.m.get_mut(name), self.v.get_mut(name)) else {
                return Err(Error::Shape(format!("optimizer has no moments for `{name}`")));
            };
            let g = grads.get(name);
            if let Some(g) = g {
                p.expect_same_shape(g)?;
            }
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                md[i] = (beta1 * md[i] + (1.0 - beta1) * gi) as f32 as f64;
                vd[i] = (beta2 * vd[i] + (1.0 - beta2) * gi * gi) as f32 as f64;
                let step = lr * (md[i] / bc1) / ((vd[i] / bc2).sqrt() + eps);
                pd[i] = (pd[i] - step) as f32 as f64;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.m.values().chain(self.v.values()).all(Tensor::all_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        let mut params = ParameterStore::from_map(
            [("w".to_string(), Tensor::new(&[2], vec![1.0, -1.0]).unwrap())].into(),
            "test",
        );
        let cfg = AdamConfig { lr: 0.1, beta1: 0.5, beta2: 0.999, eps: 1e-8 };
        let mut opt = Adam::new(cfg, &params);
        let grads = [("w".to_string(), Tensor::new(&[2], vec![3.0, -0.5]).unwrap())].into();
        opt.update(&mut params, &grads).unwrap();
        let w = params.get("w").unwrap().data();
        // bias-corrected first step is lr * sign(g)
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
        assert_eq!(opt.step, 1);
        assert_eq!(w[0], w[0] as f32 as f64);
    }

    #[test]
    fn missing_gradient_is_zero() {
        let mut params = ParameterStore::from_map([("w".to_string(), Tensor::full(&[3], 0.25))].into(), "test");
        let cfg = AdamConfig { lr: 0.1, beta1: 0.5, beta2: 0.999, eps: 1e-8 };
        let mut opt = Adam::new(cfg, &params);
        opt.update(&mut params, &BTreeMap::new()).unwrap();
        assert_eq!(params.get("w").unwrap().data(), &[0.25; 3]);
    }
}
