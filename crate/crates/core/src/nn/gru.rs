use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{ParamRole, Parameters, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::math::{self, axpy, dot};
use crate::rng::{self, Rng};

/// Gated recurrent unit.
///
/// Matrices are stored `out × in`, so `w_hz · h` plays the role of the
/// transposed product `W_{h,z}^T h` in the usual column-vector notation:
///
/// ```text
/// z  = σ(W_hz h + W_uz u + b_z)
/// r  = σ(W_hr h + W_ur u + b_r)
/// h̃  = tanh(W_uh u + W_hh (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub w_hz: Tensor,
    pub w_uz: Tensor,
    pub b_z: Tensor,
    pub w_hr: Tensor,
    pub w_ur: Tensor,
    pub b_r: Tensor,
    pub w_uh: Tensor,
    pub w_hh: Tensor,
    pub b_h: Tensor,
    pub hidden_size: usize,
    pub input_size: usize,
}

/// Intermediates of one [`GruCell::step`].
#[derive(Clone, Debug, Default)]
pub struct GruCache {
    pub h_prev: Vec<f64>,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub rh: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruCell {
    /// Glorot-uniform input weights, uniform(±1/√hidden) recurrent weights,
    /// zero biases.
    pub fn new(input_size: usize, hidden_size: usize, rng: &mut Rng) -> Self {
        let (h, i) = (hidden_size, input_size);
        let lim_in = math::sqrt(6.0 / (i + h) as f64);
        let lim_rec = 1.0 / math::sqrt(h as f64);
        let input = |rng: &mut Rng| Tensor::from_fn(&[h, i], |_| rng::uniform(rng, -lim_in, lim_in));
        let w_uz = input(rng);
        let w_ur = input(rng);
        let w_uh = input(rng);
        let recurrent = |rng: &mut Rng| Tensor::from_fn(&[h, h], |_| rng::uniform(rng, -lim_rec, lim_rec));
        let w_hz = recurrent(rng);
        let w_hr = recurrent(rng);
        let w_hh = recurrent(rng);
        Self {
            w_hz,
            w_uz,
            b_z: Tensor::zeros(&[h]),
            w_hr,
            w_ur,
            b_r: Tensor::zeros(&[h]),
            w_uh,
            w_hh,
            b_h: Tensor::zeros(&[h]),
            hidden_size,
            input_size,
        }
    }

    /// All parameters zero.
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let (h, i) = (hidden_size, input_size);
        Self {
            w_hz: Tensor::zeros(&[h, h]),
            w_uz: Tensor::zeros(&[h, i]),
            b_z: Tensor::zeros(&[h]),
            w_hr: Tensor::zeros(&[h, h]),
            w_ur: Tensor::zeros(&[h, i]),
            b_r: Tensor::zeros(&[h]),
            w_uh: Tensor::zeros(&[h, i]),
            w_hh: Tensor::zeros(&[h, h]),
            b_h: Tensor::zeros(&[h]),
            hidden_size,
            input_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, i) = (self.hidden_size, self.input_size);
        let ok = [&self.w_hz, &self.w_hr, &self.w_hh].iter().all(|t| t.shape() == [h, h])
            && [&self.w_uz, &self.w_ur, &self.w_uh].iter().all(|t| t.shape() == [h, i])
            && [&self.b_z, &self.b_r, &self.b_h].iter().all(|t| t.shape() == [h]);
        if ok && h > 0 && i > 0 {
            Ok(())
        } else {
            Err(shape_err!("GRU blocks inconsistent with hidden {} / input {}", h, i))
        }
    }

    /// One recurrent step from `h_prev` under input `u`.
    pub fn step(&self, h_prev: &[f64], u: &[f64]) -> Result<(Vec<f64>, GruCache)> {
        if h_prev.len() != self.hidden_size || u.len() != self.input_size {
            return Err(shape_err!(
                "GRU step got h {} / u {}, cell is hidden {} / input {}",
                h_prev.len(),
                u.len(),
                self.hidden_size,
                self.input_size
            ));
        }
        if !h_prev.iter().chain(u).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("GRU input"));
        }
        let mut cache = GruCache::default();
        self.step_into(h_prev, u, &mut cache);
        Ok((cache.h.clone(), cache))
    }

    /// Unchecked step that reuses the buffers of `cache`.
    #[allow(clippy::needless_range_loop)]
    pub fn step_into(&self, h_prev: &[f64], u: &[f64], cache: &mut GruCache) {
        let n = self.hidden_size;
        for buf in [&mut cache.z, &mut cache.r, &mut cache.rh, &mut cache.candidate, &mut cache.h] {
            buf.resize(n, 0.0);
        }
        cache.h_prev.clear();
        cache.h_prev.extend_from_slice(h_prev);
        cache.u.clear();
        cache.u.extend_from_slice(u);
        for k in 0..n {
            cache.z[k] = math::sigmoid(dot(self.w_hz.row(k), h_prev) + dot(self.w_uz.row(k), u) + self.b_z.data()[k]);
            cache.r[k] = math::sigmoid(dot(self.w_hr.row(k), h_prev) + dot(self.w_ur.row(k), u) + self.b_r.data()[k]);
            cache.rh[k] = cache.r[k] * h_prev[k];
        }
        for k in 0..n {
            cache.candidate[k] =
                math::tanh(dot(self.w_uh.row(k), u) + dot(self.w_hh.row(k), &cache.rh) + self.b_h.data()[k]);
            cache.h[k] = (1.0 - cache.z[k]) * h_prev[k] + cache.z[k] * cache.candidate[k];
        }
    }

    /// Backpropagates `dh` (gradient w.r.t. this step's output) through the
    /// step. Parameter gradients accumulate into `grad`; `dh_prev` and `du`
    /// are overwritten.
    pub fn backward_step(
        &self,
        cache: &GruCache,
        dh: &[f64],
        grad: &mut GruCell,
        dh_prev: &mut [f64],
        du: &mut [f64],
    ) {
        let n = self.hidden_size;
        dh_prev.fill(0.0);
        du.fill(0.0);
        let mut d_rh = vec![0.0; n];
        for k in 0..n {
            let z = cache.z[k];
            let c = cache.candidate[k];
            dh_prev[k] += dh[k] * (1.0 - z);
            // candidate branch
            let dac = dh[k] * z * (1.0 - c * c);
            if dac != 0.0 {
                grad.b_h.data_mut()[k] += dac;
                axpy(dac, &cache.u, grad.w_uh.row_mut(k));
                axpy(dac, &cache.rh, grad.w_hh.row_mut(k));
                axpy(dac, self.w_uh.row(k), du);
                axpy(dac, self.w_hh.row(k), &mut d_rh);
            }
            // update gate
            let daz = dh[k] * (c - cache.h_prev[k]) * z * (1.0 - z);
            if daz != 0.0 {
                grad.b_z.data_mut()[k] += daz;
                axpy(daz, &cache.h_prev, grad.w_hz.row_mut(k));
                axpy(daz, &cache.u, grad.w_uz.row_mut(k));
                axpy(daz, self.w_hz.row(k), dh_prev);
                axpy(daz, self.w_uz.row(k), du);
            }
        }
        // reset gate, once d(r ⊙ h) is complete
        for k in 0..n {
            let r = cache.r[k];
            dh_prev[k] += d_rh[k] * r;
            let dar = d_rh[k] * cache.h_prev[k] * r * (1.0 - r);
            if dar != 0.0 {
                grad.b_r.data_mut()[k] += dar;
                axpy(dar, &cache.h_prev, grad.w_hr.row_mut(k));
                axpy(dar, &cache.u, grad.w_ur.row_mut(k));
                axpy(dar, self.w_hr.row(k), dh_prev);
                axpy(dar, self.w_ur.row(k), du);
            }
        }
    }
}

impl Parameters for GruCell {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor, ParamRole)) {
        use ParamRole::*;
        f(&self.w_hz, Weight);
        f(&self.w_uz, Weight);
        f(&self.b_z, Bias);
        f(&self.w_hr, Weight);
        f(&self.w_ur, Weight);
        f(&self.b_r, Bias);
        f(&self.w_uh, Weight);
        f(&self.w_hh, Weight);
        f(&self.b_h, Bias);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor, ParamRole)) {
        use ParamRole::*;
        f(&mut self.w_hz, Weight);
        f(&mut self.w_uz, Weight);
        f(&mut self.b_z, Bias);
        f(&mut self.w_hr, Weight);
        f(&mut self.w_ur, Weight);
        f(&mut self.b_r, Bias);
        f(&mut self.w_uh, Weight);
        f(&mut self.w_hh, Weight);
        f(&mut self.b_h, Bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_cell(seed: u64, input: usize, hidden: usize) -> GruCell {
        let mut rng = rng::seeded(seed);
        let mut cell = GruCell::new(input, hidden, &mut rng);
        for b in [&mut cell.b_z, &mut cell.b_r, &mut cell.b_h] {
            b.data_mut().iter_mut().for_each(|v| *v = rng::uniform(&mut rng, -0.5, 0.5));
        }
        cell
    }

    #[test]
    fn zero_cell_halves_the_previous_state() {
        let cell = GruCell::zeros(3, 2);
        let (h, cache) = cell.step(&[0.4, -0.2], &[1.0, -7.0, 3.0]).unwrap();
        assert_eq!(h, vec![0.2, -0.1]);
        assert_eq!(cache.z, vec![0.5, 0.5]);
        assert_eq!(cache.candidate, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_cell_keeps_zero_state() {
        let cell = GruCell::zeros(2, 4);
        let (h, _) = cell.step(&[0.0; 4], &[0.3, 0.9]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
    }

    #[test]
    fn rejects_bad_dimensions_and_non_finite_inputs() {
        let cell = GruCell::zeros(2, 3);
        assert!(matches!(cell.step(&[0.0; 2], &[0.0; 2]), Err(Error::Shape(_))));
        assert!(matches!(cell.step(&[0.0; 3], &[0.0, f64::INFINITY]), Err(Error::NonFinite(_))));
        assert!(cell.validate().is_ok());
        let mut broken = cell.clone();
        broken.b_r = Tensor::zeros(&[2]);
        assert!(broken.validate().is_err());
    }

    proptest! {
        #[test]
        fn new_state_lies_between_previous_state_and_candidate(
            seed in 0u64..1000,
            h_prev in proptest::collection::vec(-1.0f64..1.0, 4),
            u in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let cell = random_cell(seed, 3, 4);
            let (h, cache) = cell.step(&h_prev, &u).unwrap();
            for k in 0..4 {
                let lo = h_prev[k].min(cache.candidate[k]);
                let hi = h_prev[k].max(cache.candidate[k]);
                prop_assert!(h[k] >= lo - 1e-15 && h[k] <= hi + 1e-15);
            }
        }
    }
}
