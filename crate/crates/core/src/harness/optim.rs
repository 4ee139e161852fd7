use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::config::{OptimizerConfig, OptimizerKind};

/// Adam or plain SGD over a fixed, ordered list of tensors.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("optimizer_step", p.shape(), g.shape()));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c = &self.config;
        let lr = c.learning_rate;
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (j, (x, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * d;
                        v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * d * d;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        *x -= lr * m_hat / (v_hat.sqrt() + c.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_descent(kind: OptimizerKind, lr: f64) -> f64 {
        let mut x = Tensor::vector(&[3.0, -2.0]);
        let mut opt = Optimizer::new(OptimizerConfig {
            kind,
            learning_rate: lr,
            ..OptimizerConfig::default()
        });
        for _ in 0..500 {
            let g = Tensor::vector(&[2.0 * x.data()[0], 2.0 * x.data()[1]]);
            opt.step(vec![&mut x], &[g]).unwrap();
        }
        x.data().iter().map(|v| v * v).sum()
    }

    #[test]
    fn both_minimize_a_quadratic() {
        assert!(quadratic_descent(OptimizerKind::Sgd, 0.1) < 1e-12);
        assert!(quadratic_descent(OptimizerKind::Adam, 0.05) < 1e-3);
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        let mut x = Tensor::vector(&[1.0]);
        let mut opt = Optimizer::new(OptimizerConfig::default());
        opt.step(vec![&mut x], &[Tensor::vector(&[123.0])]).unwrap();
        assert!((x.data()[0] - (1.0 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut x = Tensor::vector(&[0.25, 4.0]);
            let mut opt = Optimizer::new(OptimizerConfig {
                kind,
                learning_rate: 0.0,
                ..OptimizerConfig::default()
            });
            for _ in 0..10 {
                opt.step(vec![&mut x], &[Tensor::vector(&[1.0, -7.0])])
                    .unwrap();
            }
            assert_eq!(x.data(), &[0.25, 4.0]);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut x = Tensor::vector(&[1.0]);
        let mut opt = Optimizer::new(OptimizerConfig::default());
        assert!(opt
            .step(vec![&mut x], &[Tensor::vector(&[1.0, 2.0])])
            .is_err());
    }
}
