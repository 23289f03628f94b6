//! Momentum SGD with a step-decay learning-rate schedule.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Step decay: multiply the learning rate by `factor` every `period_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub factor: f64,
    pub period_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub velocity: Vec<f64>,
    pub schedule: Option<DecaySchedule>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64, param_count: usize) -> Self {
        OptimizerState {
            learning_rate,
            momentum,
            velocity: vec![0.0; param_count],
            schedule: None,
        }
    }

    pub fn with_schedule(mut self, schedule: DecaySchedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    /// One classical momentum step: `v <- m v + g`, `theta <- theta - lr v`.
    /// Non-finite gradients are rejected before any state is touched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.velocity.len() || grad.len() != self.velocity.len() {
            return Err(Error::dim(
                "optimizer_step",
                self.velocity.len(),
                format!("params {} / grad {}", params.len(), grad.len()),
            ));
        }
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "optimizer_step gradient component {bad}"
            )));
        }
        for ((p, v), &g) in params.iter_mut().zip(self.velocity.iter_mut()).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= self.learning_rate * *v;
        }
        Ok(())
    }

    /// Applies the decay schedule at an epoch boundary. `epoch` is the
    /// zero-based index of the epoch about to start; the rate drops once
    /// every `period_epochs`.
    pub fn apply_schedule(&mut self, epoch: usize) {
        if let Some(s) = self.schedule {
            if epoch > 0 && s.period_epochs > 0 && epoch % s.period_epochs == 0 {
                self.learning_rate *= s.factor;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut opt = OptimizerState::new(0.1, 0.9, 3);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.step(&mut p, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_momentum_is_plain_gradient_descent() {
        let mut opt = OptimizerState::new(0.01, 0.0, 2);
        let mut p = vec![1.0, 1.0];
        opt.step(&mut p, &[2.0, -4.0]).unwrap();
        assert_eq!(p, vec![1.0 - 0.01 * 2.0, 1.0 + 0.01 * 4.0]);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut opt = OptimizerState::new(0.01, 0.9, 1);
        let mut p = vec![1.0];
        assert!(opt.step(&mut p, &[f64::NAN]).is_err());
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn schedule_decays_every_period() {
        let mut opt = OptimizerState::new(0.001, 0.9, 0).with_schedule(DecaySchedule {
            factor: 0.5,
            period_epochs: 10,
        });
        opt.apply_schedule(0);
        assert_eq!(opt.learning_rate, 0.001);
        opt.apply_schedule(10);
        assert_eq!(opt.learning_rate, 0.0005);
        opt.apply_schedule(15);
        assert_eq!(opt.learning_rate, 0.0005);
        opt.apply_schedule(20);
        assert_eq!(opt.learning_rate, 0.00025);
    }
}
