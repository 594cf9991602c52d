use serde::{Deserialize, Serialize};

use super::{EngineError, Gradients, Network};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments and step counter. Moments are allocated on the first step to
/// match the parameter tensors they follow.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Result<Self, EngineError> {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = config;
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(EngineError::InvalidConfig(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
            return Err(EngineError::InvalidConfig("adam betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn with_learning_rate(learning_rate: f64) -> Result<Self, EngineError> {
        Self::new(AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Rejects the whole step, leaving
    /// parameters and moments untouched, if any gradient is non-finite or
    /// mis-shaped.
    pub fn update(&mut self, mut params: Vec<&mut [f64]>, grads: &[Vec<f64>]) -> Result<(), EngineError> {
        if params.len() != grads.len() {
            return Err(EngineError::InvalidConfig(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(EngineError::InvalidConfig(format!(
                    "parameter tensor {i} has {} elements, gradient has {}",
                    p.len(),
                    g.len()
                )));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(EngineError::NonFinite {
                    what: format!("gradient of parameter tensor {i}, element {j}"),
                });
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != grads.len() || self.first.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
            return Err(EngineError::InvalidConfig("gradient layout changed between steps".into()));
        }

        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (((w, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step to every network parameter.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut OptimizerState) -> Result<(), EngineError> {
    state.update(net.parameters_mut(), &grads.params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut w = vec![1.5, -2.0];
        let mut s = OptimizerState::new(AdamConfig::default()).unwrap();
        s.update(vec![&mut w], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(w, vec![1.5, -2.0]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 ⇒ Δw = −0.001 / (1 + 1e−8)
        let mut w = vec![0.0];
        let mut s = OptimizerState::new(AdamConfig::default()).unwrap();
        s.update(vec![&mut w], &[vec![1.0]]).unwrap();
        assert!((w[0] + 0.001).abs() < 1e-9, "{}", w[0]);
    }

    fn descend_bowl(steps: usize) -> f64 {
        let mut w = vec![0.0];
        let mut s = OptimizerState::new(AdamConfig::default()).unwrap();
        for _ in 0..steps {
            let g = 2.0 * (w[0] - 3.0);
            s.update(vec![&mut w], &[vec![g]]).unwrap();
        }
        w[0]
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        // Reference trajectory from torch.optim.Adam (float64, lr 1e-3, defaults)
        // on (w - 3)^2 from w = 0: 2.9377290647153163 after 5000 steps,
        // 2.9999999200642335 after 8000.
        let w = descend_bowl(5000);
        assert!((w - 2.9377290647153163).abs() < 1e-9, "{w}");
        let w = descend_bowl(8000);
        assert!((w - 3.0).abs() < 1e-2, "{w}");
        assert!((w - 2.9999999200642335).abs() < 1e-9, "{w}");
    }

    #[test]
    fn rejects_non_finite_gradient_without_side_effects() {
        let mut w = vec![1.0, 2.0];
        let mut s = OptimizerState::new(AdamConfig::default()).unwrap();
        s.update(vec![&mut w], &[vec![0.5, 0.5]]).unwrap();
        let (w_before, s_before) = (w.clone(), s.clone());
        let err = s.update(vec![&mut w], &[vec![0.1, f64::NAN]]).unwrap_err();
        assert!(matches!(err, EngineError::NonFinite { .. }));
        assert!(err.to_string().contains("element 1"));
        assert_eq!(w, w_before);
        assert_eq!(s, s_before);
    }

    #[test]
    fn rejects_bad_configuration() {
        assert!(OptimizerState::with_learning_rate(0.0).is_err());
        assert!(OptimizerState::with_learning_rate(-1.0).is_err());
        let mut w = vec![0.0; 2];
        let mut s = OptimizerState::with_learning_rate(0.1).unwrap();
        assert!(s.update(vec![&mut w], &[vec![0.0; 3]]).is_err());
    }
}
