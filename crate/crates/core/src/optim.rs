//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::Param;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one network's parameter list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Param]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every parameter. Gradients are validated before any
    /// parameter or moment is touched.
    pub fn step(&mut self, params: &mut [Param], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::contract(format!(
                "Adam state tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    lhs: p.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.t as i32);
        let bias2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((theta, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64]) -> Param {
        Param {
            name: "theta".into(),
            value: Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
        }
    }

    fn grad(values: &[f64]) -> Tensor {
        Tensor::new(vec![values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![param(&[1.0, -2.0])];
        let mut opt = AdamState::new(AdamConfig::default(), &p);
        opt.step(&mut p, &[grad(&[0.0, 0.0])]).unwrap();
        assert_eq!(p[0].value.data(), &[1.0, -2.0]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn first_step_by_hand() {
        // m̂ = g and v̂ = g² after one step, so Δ = −lr·g/(|g| + ε).
        let mut p = vec![param(&[1.0, 1.0])];
        let mut opt = AdamState::new(AdamConfig::default(), &p);
        opt.step(&mut p, &[grad(&[0.5, -3.0])]).unwrap();
        let d0 = -2e-4 * 0.5 / (0.5 + 1e-8);
        let d1 = 2e-4 * 3.0 / (3.0 + 1e-8);
        assert!((p[0].value.data()[0] - (1.0 + d0)).abs() < 1e-15);
        assert!((p[0].value.data()[1] - (1.0 + d1)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_loss_decreases() {
        let mut p = vec![param(&[1.0])];
        let mut opt = AdamState::new(
            AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            &p,
        );
        let mut prev = 1.0;
        for _ in 0..100 {
            let theta = p[0].value.data()[0];
            opt.step(&mut p, &[grad(&[2.0 * theta])]).unwrap();
            let loss = p[0].value.data()[0].powi(2);
            assert!(loss < prev);
            prev = loss;
        }
    }

    #[test]
    fn constant_direction_steps_are_bounded_by_lr() {
        let mut p = vec![param(&[0.0])];
        let cfg = AdamConfig::default();
        let mut opt = AdamState::new(cfg, &p);
        let mut last = 0.0;
        for k in 0..200 {
            let g = 1.0 + 0.5 * (k % 3) as f64;
            opt.step(&mut p, &[grad(&[g])]).unwrap();
            let now = p[0].value.data()[0];
            assert!((last - now).abs() <= cfg.lr * 1.5, "step {k}");
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = vec![param(&[1.0])];
        let mut opt = AdamState::new(AdamConfig::default(), &p);
        let err = opt.step(&mut p, &[grad(&[f64::NAN])]).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(p[0].value.data(), &[1.0]);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![param(&[0.3, -0.7])];
            let mut opt = AdamState::new(AdamConfig::default(), &p);
            for k in 0..10 {
                opt.step(&mut p, &[grad(&[k as f64 * 0.1, -0.2])]).unwrap();
            }
            (p, opt)
        };
        assert_eq!(run(), run());
    }
}
