use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{Activation, ParamRole, Parameters, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::math::{self, axpy, dot};
use crate::rng::{self, Rng};

/// Fully connected layer `y = activation(W x + b)` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
    pub activation: Activation,
}

/// Input and output of one forward evaluation.
#[derive(Clone, Debug, Default)]
pub struct DenseCache {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = math::sqrt(6.0 / (input + output) as f64);
        let w = Tensor::from_fn(&[output, input], |_| rng::uniform(rng, -limit, limit));
        Self { w, b: Tensor::zeros(&[output]), activation }
    }

    pub fn from_parts(w: Tensor, b: Tensor, activation: Activation) -> Result<Self> {
        if w.shape().len() != 2 || b.shape() != [w.rows()] {
            return Err(shape_err!("dense W {:?} and b {:?} are inconsistent", w.shape(), b.shape()));
        }
        Ok(Self { w, b, activation })
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub fn output_size(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        if x.len() != self.input_size() {
            return Err(shape_err!("dense input has {} values, layer expects {}", x.len(), self.input_size()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dense input"));
        }
        let mut y = vec![0.0; self.output_size()];
        self.forward_into(x, &mut y);
        Ok((y.clone(), DenseCache { x: x.to_vec(), y }))
    }

    /// Unchecked forward pass into a caller-owned buffer.
    #[inline]
    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input_size());
        let act = self.activation;
        for (o, yo) in y.iter_mut().enumerate() {
            *yo = act.apply(dot(self.w.row(o), x) + self.b.data()[o]);
        }
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, cache: &DenseCache, dy: &[f64], grad: &mut DenseLayer) -> Result<Vec<f64>> {
        if dy.len() != self.output_size() || cache.y.len() != self.output_size() {
            return Err(shape_err!("dense backward got {} output grads for {} outputs", dy.len(), self.output_size()));
        }
        let mut dx = vec![0.0; self.input_size()];
        self.backward_into(&cache.x, &cache.y, dy, grad, Some(&mut dx));
        Ok(dx)
    }

    /// Unchecked backward pass. `dx`, when given, is overwritten.
    #[inline]
    pub fn backward_into(
        &self,
        x: &[f64],
        y: &[f64],
        dy: &[f64],
        grad: &mut DenseLayer,
        mut dx: Option<&mut [f64]>,
    ) {
        if let Some(dx) = dx.as_deref_mut() {
            dx.fill(0.0);
        }
        let act = self.activation;
        for o in 0..self.output_size() {
            let da = dy[o] * act.derivative_from_output(y[o]);
            if da == 0.0 {
                continue;
            }
            grad.b.data_mut()[o] += da;
            axpy(da, x, grad.w.row_mut(o));
            if let Some(dx) = dx.as_deref_mut() {
                axpy(da, self.w.row(o), dx);
            }
        }
    }
}

impl Parameters for DenseLayer {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor, ParamRole)) {
        f(&self.w, ParamRole::Weight);
        f(&self.b, ParamRole::Bias);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor, ParamRole)) {
        f(&mut self.w, ParamRole::Weight);
        f(&mut self.b, ParamRole::Bias);
    }
}
