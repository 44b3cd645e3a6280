use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Hyperparameters of classic momentum SGD with coupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// One update: `v ← momentum·v + grad + weight_decay·param`, `param ← param − lr·v`.
pub fn sgd_momentum_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    cfg: &SgdConfig,
) -> Result<()> {
    param.same_shape(grad, "sgd grad")?;
    param.same_shape(velocity, "sgd velocity")?;
    grad.check_finite("sgd gradient")?;
    let (m, wd, lr) = (cfg.momentum, cfg.weight_decay, cfg.learning_rate);
    for ((p, g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = m * *v + g + wd * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Velocity buffers keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: SgdConfig,
    velocity: BTreeMap<String, Tensor>,
}

impl OptimState {
    /// Zero velocities shaped like each named parameter.
    pub fn new<'a>(
        config: SgdConfig,
        params: impl IntoIterator<Item = (&'a String, &'a Tensor)>,
    ) -> Result<Self> {
        if !(config.learning_rate > 0.0)
            || !(0.0..1.0).contains(&config.momentum)
            || !(config.weight_decay >= 0.0)
        {
            return Err(Error::Config(format!("invalid optimizer settings {config:?}")));
        }
        let velocity = params
            .into_iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
            .collect();
        Ok(OptimState { config, velocity })
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor> {
        self.velocity.get(name)
    }

    pub fn step(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        let v = self
            .velocity
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        sgd_momentum_step(param, grad, v, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn plain_step() {
        let cfg = SgdConfig {
            learning_rate: 1.0,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let (mut p, mut v) = (scalar(5.0), scalar(0.0));
        sgd_momentum_step(&mut p, &scalar(2.0), &mut v, &cfg).unwrap();
        assert_eq!(p.data(), &[3.0]);
    }

    #[test]
    fn zero_grad_zero_velocity_is_a_no_op() {
        let cfg = SgdConfig {
            weight_decay: 0.0,
            ..SgdConfig::default()
        };
        let (mut p, mut v) = (scalar(1.25), scalar(0.0));
        sgd_momentum_step(&mut p, &scalar(0.0), &mut v, &cfg).unwrap();
        assert_eq!(p.data(), &[1.25]);
    }

    #[test]
    fn two_momentum_steps_follow_recurrence() {
        let cfg = SgdConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let g = 0.5;
        let (mut p, mut v) = (scalar(1.0), scalar(0.0));
        for _ in 0..2 {
            sgd_momentum_step(&mut p, &scalar(g), &mut v, &cfg).unwrap();
        }
        let expected = 1.0 - 0.001 * (g + 1.9 * g);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!((v.data()[0] - 1.9 * g).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatch_and_non_finite() {
        let cfg = SgdConfig::default();
        let (mut p, mut v) = (scalar(1.0), scalar(0.0));
        let g2 = Tensor::zeros(&[2]);
        assert!(matches!(
            sgd_momentum_step(&mut p, &g2, &mut v, &cfg),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            sgd_momentum_step(&mut p, &scalar(f64::NAN), &mut v, &cfg),
            Err(Error::NonFinite(_))
        ));
    }
}
