use super::tensor::Tensor;
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
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state: one pair of moment accumulators per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// Applies one bias-corrected Adam update in place.
    ///
    /// Moments are updated for every element; the parameter itself only moves
    /// where the gradient is nonzero, so a zero gradient leaves parameters
    /// untouched regardless of accumulated momentum.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: vec![params.len(), self.first.len()],
                rhs: vec![grads.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
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
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, (pi, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                if gi != 0.0 {
                    let m_hat = m[i] / correction1;
                    let v_hat = v[i] / correction2;
                    *pi -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity_and_counts_step() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0])];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step(&mut params, &[Tensor::vector(vec![0.3, -0.1])]).unwrap();
        let before = params.clone();
        adam.step(&mut params, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so Δθ = -lr·g/(|g| + ε) ≈ -lr·sign(g).
        let mut params = vec![Tensor::scalar(0.0)];
        let config = AdamConfig {
            learning_rate: 1e-3,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(config, &params);
        adam.step(&mut params, &[Tensor::scalar(0.5)]).unwrap();
        let expected = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((params[0].item() - expected).abs() < 1e-15);
        assert!((params[0].item() + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let mut trace = vec![1.0];
        for _ in 0..2 {
            adam.step(&mut params, &[Tensor::scalar(-0.25)]).unwrap();
            trace.push(params[0].item());
        }
        // Hand-derived: with constant g both bias-corrected moments equal g and g²
        // exactly, so every step is -lr·g/(|g|+ε).
        let delta = 1e-4 * 0.25 / (0.25 + 1e-8);
        assert!((trace[1] - (1.0 + delta)).abs() < 1e-15);
        assert!((trace[2] - (1.0 + 2.0 * delta)).abs() < 1e-14);
        assert!(trace[0] < trace[1] && trace[1] < trace[2]);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        assert!(adam.step(&mut params, &[Tensor::zeros(&[3])]).is_err());
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn accumulators_start_at_zero() {
        let params = vec![Tensor::zeros(&[3, 2])];
        let adam = Adam::new(AdamConfig::default(), &params);
        assert!(adam.first_moments()[0].data().iter().all(|&x| x == 0.0));
        assert!(adam.second_moments()[0].data().iter().all(|&x| x == 0.0));
    }
}
