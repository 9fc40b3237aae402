//! Adaptive-moment gradient steps over flat parameter vectors, plus the
//! gradient-clipping and warmup helpers the training loops use.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Adam state (first/second moments and step counter). Flat layout matches
/// `Params::flatten`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    /// One bias-corrected Adam update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(
                "parameter/gradient length differs from optimizer state".to_string(),
            ));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - math::powf(beta1, t);
        let bc2 = 1.0 - math::powf(beta2, t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (math::sqrt(v_hat) + eps);
        }
        Ok(())
    }
}

/// Scales gradients in place so the global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = math::l2_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Linear warmup factor in [0, 1]: ramps over the first
/// `warmup_fraction` of `total_steps`, then stays at 1.
pub fn warmup_scale(step: u64, total_steps: u64, warmup_fraction: f64) -> f64 {
    if warmup_fraction <= 0.0 || total_steps == 0 {
        return 1.0;
    }
    let warmup_steps = (total_steps as f64 * warmup_fraction).max(1.0);
    ((step as f64 + 1.0) / warmup_steps).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_fixed() {
        let mut state = AdamState::new(3);
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        for _ in 0..5 {
            state
                .step(&mut params, &[0.0, 0.0, 0.0], 0.1, 0.9, 0.999, 1e-8)
                .unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn minimizes_a_quadratic() {
        // f(p) = (p - 3)^2 has gradient 2(p - 3).
        let mut state = AdamState::new(1);
        let mut p = vec![-4.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 3.0)];
            state.step(&mut p, &g, 0.05, 0.9, 0.999, 1e-8).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 1e-3, "p = {}", p[0]);
    }

    #[test]
    fn clip_caps_the_norm() {
        let mut g = vec![3.0, 4.0];
        let before = clip_global_norm(&mut g, 1.0);
        assert!((before - 5.0).abs() < 1e-12);
        assert!((math::l2_norm(&g) - 1.0).abs() < 1e-12);
        // Under the cap: untouched.
        let mut g2 = vec![0.3, 0.4];
        clip_global_norm(&mut g2, 1.0);
        assert_eq!(g2, vec![0.3, 0.4]);
    }

    #[test]
    fn warmup_ramps_then_saturates() {
        let total = 100;
        assert!(warmup_scale(0, total, 0.1) <= 0.2);
        assert_eq!(warmup_scale(9, total, 0.1), 1.0);
        assert_eq!(warmup_scale(50, total, 0.1), 1.0);
        assert_eq!(warmup_scale(0, total, 0.0), 1.0);
    }

    #[test]
    fn state_length_mismatch_rejected() {
        let mut state = AdamState::new(2);
        let mut params = vec![0.0; 3];
        assert!(state.step(&mut params, &[0.0; 3], 0.1, 0.9, 0.999, 1e-8).is_err());
    }
}
