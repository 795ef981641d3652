use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{ParamRole, Parameters};
use crate::error::{Error, Result};
use crate::math;

/// Global L2 norm over every tensor of a gradient container.
pub fn global_norm<P: Parameters>(grads: &P) -> f64 {
    let mut s = 0.0;
    grads.visit(&mut |t, _| s += t.norm_sq());
    math::sqrt(s)
}

/// Rescales `grads` so their global norm is at most `threshold`. Returns the
/// norm measured before clipping.
pub fn clip_gradients<P: Parameters>(grads: &mut P, threshold: f64) -> f64 {
    debug_assert!(threshold > 0.0);
    let norm = global_norm(grads);
    if norm > threshold {
        grads.scale(threshold / norm);
    }
    norm
}

/// `target ← τ·source + (1 − τ)·target`
pub fn soft_update<P: Parameters>(target: &mut P, source: &P, tau: f64) {
    let src = source.tensors();
    let mut i = 0;
    target.visit_mut(&mut |t, _| {
        for (a, b) in t.data_mut().iter_mut().zip(src[i].data()) {
            *a = tau * b + (1.0 - tau) * *a;
        }
        i += 1;
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moment accumulators for one parameter container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| alloc::vec![0.0; t.len()]).collect();
        Self { m: zeros.clone(), v: zeros, step: 0, config }
    }

    /// One bias-corrected Adam update. `l2` adds `l2·θ` to the gradient of
    /// every weight tensor (biases are not decayed) before the moments move.
    pub fn update<P: Parameters>(&mut self, params: &mut P, grads: &P, lr: f64, l2: f64) -> Result<()> {
        let g = grads.tensors();
        if g.len() != self.m.len() {
            return Err(Error::Shape(alloc::format!("{} gradient tensors for {} moment slots", g.len(), self.m.len())));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - math::pow(beta1, t);
        let c2 = 1.0 - math::pow(beta2, t);
        let mut i = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        let mut shape_ok = true;
        params.visit_mut(&mut |p, role| {
            let decay = if role == ParamRole::Weight { l2 } else { 0.0 };
            let (mi, vi, gi) = (&mut m[i], &mut v[i], g[i].data());
            if mi.len() != p.len() || gi.len() != p.len() {
                shape_ok = false;
                i += 1;
                return;
            }
            for (((theta, mk), vk), &gk) in p.data_mut().iter_mut().zip(mi.iter_mut()).zip(vi.iter_mut()).zip(gi) {
                let grad = gk + decay * *theta;
                *mk = beta1 * *mk + (1.0 - beta1) * grad;
                *vk = beta2 * *vk + (1.0 - beta2) * grad * grad;
                let m_hat = *mk / c1;
                let v_hat = *vk / c2;
                *theta -= lr * m_hat / (math::sqrt(v_hat) + eps);
            }
            i += 1;
        });
        if shape_ok {
            Ok(())
        } else {
            Err(Error::Shape("parameter and gradient shapes differ".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use alloc::vec;

    fn scalar(v: f64) -> Vec<Tensor> {
        vec![Tensor::from_vec(&[1], vec![v]).unwrap()]
    }

    #[test]
    fn small_gradients_are_not_clipped() {
        let mut g = vec![Tensor::from_vec(&[2], vec![0.3, 0.4]).unwrap()];
        let before = g.clone();
        assert!((clip_gradients(&mut g, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(g, before);
    }

    #[test]
    fn norm_five_gradient_is_scaled_to_unit_norm() {
        let mut g = vec![Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap()];
        clip_gradients(&mut g, 1.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        assert!((g[0].data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters_in_place() {
        let mut p = scalar(1.5);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.update(&mut p, &scalar(0.0), 0.001, 0.0).unwrap();
        assert_eq!(p[0].data()[0], 1.5);
    }

    #[test]
    fn first_adam_step_matches_hand_evaluation() {
        // m = 0.1·g, v = 0.001·g², m̂ = g, v̂ = g² -> Δ = −lr·g/(|g| + ε)
        let g = 0.1;
        let lr = 0.001;
        let mut p = scalar(0.0);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.update(&mut p, &scalar(g), lr, 0.0).unwrap();
        let m = 0.1 * g;
        let v = 0.001 * g * g;
        let m_hat = m / (1.0 - 0.9);
        let v_hat = v / (1.0 - 0.999);
        let expected = -lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
        assert!((expected + lr * g / (g + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn repeated_steps_are_not_idempotent() {
        let mut p = scalar(0.0);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.update(&mut p, &scalar(0.1), 0.001, 0.0).unwrap();
        let after_one = p[0].data()[0];
        adam.update(&mut p, &scalar(0.1), 0.001, 0.0).unwrap();
        assert_eq!(adam.step, 2);
        assert_ne!(p[0].data()[0], after_one);
    }

    #[test]
    fn l2_decays_weights_but_not_biases() {
        use crate::nn::{Activation, DenseLayer};
        let mut layer = DenseLayer::from_parts(
            Tensor::from_vec(&[1, 1], vec![2.0]).unwrap(),
            Tensor::from_vec(&[1], vec![2.0]).unwrap(),
            Activation::Linear,
        )
        .unwrap();
        let zero = layer.zeros_like();
        let mut adam = AdamState::new(&layer, AdamConfig::default());
        adam.update(&mut layer, &zero, 0.01, 0.01).unwrap();
        assert!(layer.w.data()[0] < 2.0);
        assert_eq!(layer.b.data()[0], 2.0);
    }

    #[test]
    fn soft_update_is_exponential_average() {
        let mut target = scalar(1.0);
        soft_update(&mut target, &scalar(3.0), 0.005);
        assert!((target[0].data()[0] - (0.005 * 3.0 + 0.995 * 1.0)).abs() < 1e-15);
    }
}
