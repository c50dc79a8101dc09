use std::collections::BTreeMap;

use super::ParamSet;
use crate::error::{Error, Result};

/// AdamW hyperparameters. Defaults are the constant-rate setting used for
/// both networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    config: AdamWConfig,
    step_count: u64,
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        let c = &config;
        let ok = c.learning_rate > 0.0
            && (0.0..1.0).contains(&c.beta1)
            && c.beta1 > 0.0
            && (0.0..1.0).contains(&c.beta2)
            && c.beta2 > 0.0
            && c.weight_decay >= 0.0
            && c.eps > 0.0;
        if !ok {
            return Err(Error::contract(
                "adamw",
                format!("invalid hyperparameters {c:?}"),
            ));
        }
        Ok(AdamW {
            config,
            step_count: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update from the gradients accumulated in `params`, then
    /// clears them. Parameters without a gradient are treated as having a
    /// zero gradient.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for (name, t) in params.iter() {
            if let Some(g) = t.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence {
                        step: self.step_count as usize,
                        msg: format!("non-finite gradient for `{name}`"),
                    });
                }
            }
        }
        let AdamWConfig {
            learning_rate: lr,
            beta1,
            beta2,
            weight_decay,
            eps,
        } = self.config;
        let step = self.step_count + 1;
        let bc1 = 1.0 - beta1.powi(step as i32);
        let bc2 = 1.0 - beta2.powi(step as i32);

        for (name, t) in params.iter_mut() {
            let n = t.numel();
            let grad = t
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; n]);
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; n]);
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; n]);
            let data = t.data_mut();
            for i in 0..n {
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * weight_decay * data[i];
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            t.zero_grad();
        }
        self.step_count = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_params(p: f64, g: Option<f64>) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("p", Tensor::scalar(p));
        if let Some(g) = g {
            ps.get_mut("p").unwrap().accumulate_grad(&[g]);
        }
        ps
    }

    #[test]
    fn default_hyperparameters() {
        let c = AdamWConfig::default();
        assert_eq!(
            (c.learning_rate, c.beta1, c.beta2, c.weight_decay),
            (1e-4, 0.9, 0.999, 0.01)
        );
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_params() {
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        })
        .unwrap();
        let mut ps = scalar_params(0.7, Some(0.0));
        opt.step(&mut ps).unwrap();
        assert_eq!(ps.get("p").unwrap().data(), &[0.7]);
    }

    #[test]
    fn single_step_hand_value() {
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        })
        .unwrap();
        let mut ps = scalar_params(1.0, Some(1.0));
        opt.step(&mut ps).unwrap();
        // m_hat = v_hat = 1, so p = 1 - lr / (1 + eps).
        let p = ps.get("p").unwrap().data()[0];
        assert!((p - 0.9999).abs() < 1e-11, "{p}");
    }

    #[test]
    fn decay_shrinks_norm_without_gradient() {
        let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
        let mut ps = scalar_params(2.0, None);
        for _ in 0..10 {
            opt.step(&mut ps).unwrap();
        }
        let p = ps.get("p").unwrap().data()[0];
        assert!(p < 2.0 && p > 1.99);
        assert!((p - 2.0 * (1.0 - 1e-6f64).powi(10)).abs() < 1e-12);
    }

    #[test]
    fn decay_does_not_enter_moments() {
        // With wd > 0 the moment update must match the wd = 0 update exactly,
        // the only difference being the multiplicative shrink.
        let mut a = AdamW::new(AdamWConfig::default()).unwrap();
        let mut b = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        })
        .unwrap();
        let mut pa = scalar_params(1.0, Some(0.3));
        let mut pb = scalar_params(1.0, Some(0.3));
        a.step(&mut pa).unwrap();
        b.step(&mut pb).unwrap();
        let shrink = 1.0 * 1e-4 * 0.01;
        let da = pa.get("p").unwrap().data()[0];
        let db = pb.get("p").unwrap().data()[0];
        assert!((db - da - shrink).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_is_divergence() {
        let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
        let mut ps = scalar_params(1.0, Some(f64::NAN));
        assert!(matches!(opt.step(&mut ps), Err(Error::Divergence { .. })));
    }
}
