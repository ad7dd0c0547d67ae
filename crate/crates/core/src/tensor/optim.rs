use super::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor with its Adam moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let n = value.numel();
        Self {
            name: name.into(),
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0,1), got {b}")));
            }
        }
        Ok(())
    }
}

/// Bias-corrected Adam update applied in place. Every gradient is checked
/// before any parameter is touched, so a NaN leaves all parameters intact.
pub fn adam_step(params: &mut [&mut Parameter], grads: &[Tensor], cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} does not match parameter {} {:?}",
                g.shape(),
                p.name,
                p.value.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient for {}", p.name)));
        }
    }
    for (p, g) in params.iter_mut().zip(grads) {
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let Parameter { value, m, v, .. } = &mut **p;
        for (((x, m), v), &g) in value.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *x -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Parameter {
        Parameter::new("p", Tensor::scalar(v))
    }

    #[test]
    fn zero_gradient_leaves_parameter_and_moments() {
        let mut p = Parameter::new("w", Tensor::full(&[3], 0.7));
        adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &AdamConfig::default()).unwrap();
        assert_eq!(p.value.data(), &[0.7; 3]);
        assert!(p.first_moment().iter().all(|&m| m == 0.0));
        assert!(p.second_moment().iter().all(|&v| v == 0.0));
        assert_eq!(p.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let exact = AdamConfig {
            epsilon: 0.0,
            ..AdamConfig::default()
        };
        let mut p = scalar_param(1.0);
        adam_step(&mut [&mut p], &[Tensor::scalar(1.0)], &exact).unwrap();
        assert_eq!(p.value.item(), 1.0 - exact.lr);

        let cfg = AdamConfig::default();
        let mut q = scalar_param(1.0);
        adam_step(&mut [&mut q], &[Tensor::scalar(1.0)], &cfg).unwrap();
        assert!((q.value.item() - (1.0 - cfg.lr)).abs() < cfg.lr * 1e-7);
    }

    #[test]
    fn parameter_order_does_not_matter() {
        let cfg = AdamConfig::default();
        let (mut a1, mut b1) = (scalar_param(0.3), scalar_param(-2.0));
        let (mut a2, mut b2) = (scalar_param(0.3), scalar_param(-2.0));
        for step in 0..5 {
            let ga = Tensor::scalar(0.1 * step as f64 - 0.2);
            let gb = Tensor::scalar(1.5 - step as f64);
            adam_step(&mut [&mut a1, &mut b1], &[ga.clone(), gb.clone()], &cfg).unwrap();
            adam_step(&mut [&mut b2, &mut a2], &[gb, ga], &cfg).unwrap();
        }
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn nan_gradient_is_rejected_without_update() {
        let mut p = scalar_param(1.0);
        let mut q = scalar_param(2.0);
        let err = adam_step(
            &mut [&mut p, &mut q],
            &[Tensor::scalar(1.0), Tensor::scalar(f64::NAN)],
            &AdamConfig::default(),
        );
        assert!(matches!(err, Err(Error::Numerical(_))));
        assert_eq!(p.value.item(), 1.0);
        assert_eq!(p.step_count(), 0);
    }

    #[test]
    fn invalid_hyperparameters() {
        let bad = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = AdamConfig {
            beta2: 1.0,
            ..AdamConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
