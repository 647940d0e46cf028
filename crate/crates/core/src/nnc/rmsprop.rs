//! RMSprop: per-parameter step sizes scaled by a running RMS of the gradient.

use serde::{Deserialize, Serialize};

/// Running average of squared gradients for one parameter vector, starting at zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizerState {
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn zeros(len: usize) -> Self {
        Self { v: vec![0.0; len] }
    }
}

/// `v ← αv + (1−α)g²`, then `p ← p − η g / (√v + ε)` with the updated `v`.
pub fn rmsprop_step(p: &mut [f64], g: &[f64], st: &mut OptimizerState, eta: f64, alpha: f64, eps: f64) {
    assert_eq!(p.len(), g.len(), "parameter/gradient length");
    if st.v.len() != p.len() {
        st.v = vec![0.0; p.len()];
    }
    for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(st.v.iter_mut()) {
        *vi = alpha * *vi + (1.0 - alpha) * gi * gi;
        *pi -= eta * gi / (vi.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_from_zero_state() {
        let mut p = [0.0];
        let mut st = OptimizerState::zeros(1);
        rmsprop_step(&mut p, &[1.0], &mut st, 0.003, 0.99, 1e-8);
        assert!((st.v[0] - 0.01).abs() < 1e-15);
        assert!((p[0] + 0.003 / (0.1 + 1e-8)).abs() < 1e-15);
        assert!((p[0] + 0.03).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_only_decays_state() {
        let mut p = [2.5];
        let mut st = OptimizerState { v: vec![0.4] };
        rmsprop_step(&mut p, &[0.0], &mut st, 0.003, 0.99, 1e-8);
        assert_eq!(p[0], 2.5);
        assert!((st.v[0] - 0.396).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_eta_sign() {
        let mut p = [0.0];
        let mut st = OptimizerState::zeros(1);
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            rmsprop_step(&mut p, &[-4.0], &mut st, 0.01, 0.99, 1e-8);
            last = p[0] - before;
        }
        assert!((last - 0.01).abs() < 1e-6, "{last}");
    }
}
