//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::autograd::Parameter;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    /// Learning rate 1e-5, decay rates 0.9 / 0.999, epsilon 1e-8.
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam config {self:?}")))
        }
    }
}

/// One Adam update over `params`, then zeroes their gradients.
///
/// All gradients are checked before anything is mutated, so a non-finite
/// gradient leaves every parameter untouched.
pub fn adam_step(params: &mut [&mut Parameter], cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    if let Some(index) = params.iter().position(|p| !p.grad.all_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    for p in params.iter_mut() {
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let Parameter {
            value,
            grad,
            adam_m,
            adam_v,
            ..
        } = &mut **p;
        for (((w, &g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(adam_m.data_mut())
            .zip(adam_v.data_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        value.check_finite()?;
        grad.fill(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Parameter::new(Tensor::vector(&[0.5, -2.0, 3.0]).unwrap());
        let before = p.value.clone();
        for _ in 0..5 {
            adam_step(&mut [&mut p], &AdamConfig::default()).unwrap();
        }
        assert_eq!(p.value, before);
        assert_eq!(p.step_count, 5);
    }

    #[test]
    fn first_step_closed_form() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+ε).
        let mut p = Parameter::new(Tensor::vector(&[0.0]).unwrap());
        p.grad = Tensor::vector(&[0.5]).unwrap();
        let cfg = AdamConfig::default();
        adam_step(&mut [&mut p], &cfg).unwrap();
        let want = -1e-5 * 0.5 / (0.5 + 1e-8);
        assert!((p.value.item() - want).abs() < 1e-18);
        assert!((p.value.item() + 1e-5).abs() < 1e-12);
        assert_eq!(p.grad.item(), 0.0);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut p = Parameter::new(Tensor::vector(&[0.0]).unwrap());
        let cfg = AdamConfig::default().with_learning_rate(0.1);
        let three = Tensor::vector(&[3.0]).unwrap();
        for _ in 0..200 {
            let mut tape = Tape::new();
            let w = tape.param(&p, 0);
            let c = tape.leaf(three.clone());
            let d = tape.sub(w, c).unwrap();
            let sq = tape.mul(d, d).unwrap();
            let loss = tape.sum(sq);
            tape.backward(loss, &mut [&mut p]).unwrap();
            adam_step(&mut [&mut p], &cfg).unwrap();
        }
        assert!((p.value.item() - 3.0).abs() < 1e-2, "{}", p.value.item());
    }

    #[test]
    fn non_finite_gradient_aborts_whole_step() {
        let mut a = Parameter::new(Tensor::vector(&[1.0]).unwrap());
        let mut b = Parameter::new(Tensor::vector(&[1.0]).unwrap());
        a.grad = Tensor::vector(&[1.0]).unwrap();
        b.grad = Tensor::from_raw(vec![1], vec![f64::INFINITY]);
        let err = adam_step(&mut [&mut a, &mut b], &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1 }));
        assert_eq!(a.value.item(), 1.0);
        assert_eq!(a.step_count, 0);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = AdamConfig::default();
        cfg.beta2 = 1.0;
        assert!(cfg.validate().is_err());
    }
}
