//! Minimal dense + GRU neural-network library with exact reverse-mode
//! gradients.
//!
//! Every learnable container implements [`Parameters`]; a gradient is a
//! container of the same type whose tensors hold partial derivatives
//! (see [`Parameters::zeros_like`]). Optimizers and clipping walk the two
//! containers in lockstep.

mod activation;
mod dense;
mod gru;
mod mlp;
mod network;
mod optim;
mod tensor;

pub use activation::Activation;
pub use dense::{DenseCache, DenseLayer};
pub use gru::{GruCache, GruCell};
pub use mlp::{Mlp, MlpBatch};
pub use network::{GradientTape, Network, NetworkSpec, StepCache};
pub use optim::{clip_gradients, global_norm, soft_update, AdamConfig, AdamState};
pub use tensor::Tensor;

use alloc::vec::Vec;

use crate::error::{shape_err, Result};

/// Whether a tensor is a weight (subject to L2 decay) or a bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
}

pub trait Parameters: Clone {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor, ParamRole));

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor, ParamRole));

    /// A container of identical shape with every entry zero.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |t, _| t.fill(0.0));
        z
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t, _| n += t.len());
        n
    }

    /// All parameters concatenated in visiting order.
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |t, _| out.extend_from_slice(t.data()));
        out
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(shape_err!("flat parameter vector has {} values, expected {}", flat.len(), n));
        }
        let mut off = 0;
        self.visit_mut(&mut |t, _| {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + len]);
            off += len;
        });
        Ok(())
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        self.visit(&mut |t, _| out.push(t));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.visit_mut(&mut |t, _| out.push(t));
        out
    }

    fn roles(&self) -> Vec<ParamRole> {
        let mut out = Vec::new();
        self.visit(&mut |_, r| out.push(r));
        out
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |t, _| ok &= t.is_finite());
        ok
    }

    /// `self += other`, elementwise over matching containers.
    fn accumulate(&mut self, other: &Self) {
        let src = other.tensors();
        let mut i = 0;
        self.visit_mut(&mut |t, _| {
            for (a, b) in t.data_mut().iter_mut().zip(src[i].data()) {
                *a += b;
            }
            i += 1;
        });
    }

    fn scale(&mut self, k: f64) {
        self.visit_mut(&mut |t, _| t.data_mut().iter_mut().for_each(|v| *v *= k));
    }
}

/// A bare list of tensors, all treated as weights.
impl Parameters for Vec<Tensor> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor, ParamRole)) {
        for t in self {
            f(t, ParamRole::Weight);
        }
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor, ParamRole)) {
        for t in self {
            f(t, ParamRole::Weight);
        }
    }
}
