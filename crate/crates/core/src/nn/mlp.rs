use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, ParamRole, Parameters, Tensor};
use crate::error::{shape_err, Result};
use crate::rng::Rng;

/// Feed-forward stack of dense layers, evaluated one sample or one batch at
/// a time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Per-layer activations of a batched forward pass, stored flat
/// (`batch × width`, row-major). `acts[0]` is the input.
#[derive(Clone, Debug, Default)]
pub struct MlpBatch {
    pub batch: usize,
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl MlpBatch {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], |v| v.as_slice())
    }
}

impl Mlp {
    /// `sizes` lists every width including input and output.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        let n = sizes.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::new(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_size(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input_size())
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_size())
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.layers.windows(2) {
            if pair[0].output_size() != pair[1].input_size() {
                return Err(shape_err!("layer widths {} -> {} do not chain", pair[0].output_size(), pair[1].input_size()));
            }
        }
        if self.layers.is_empty() {
            return Err(shape_err!("empty MLP"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size() {
            return Err(shape_err!("MLP input has {} values, expected {}", x.len(), self.input_size()));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            next.resize(layer.output_size(), 0.0);
            layer.forward_into(&cur, &mut next);
            core::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Batched forward pass; `x` holds `batch` rows of `input_size` values.
    pub fn forward_batch<'a>(&self, x: &[f64], batch: usize, cache: &'a mut MlpBatch) -> &'a [f64] {
        let n_in = self.input_size();
        assert_eq!(x.len(), batch * n_in, "batched input has the wrong length");
        cache.batch = batch;
        cache.acts.resize_with(self.layers.len() + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let (prev, cur) = cache.acts.split_at_mut(i + 1);
            let input = &prev[i];
            let out = &mut cur[0];
            let (ni, no) = (layer.input_size(), layer.output_size());
            out.resize(batch * no, 0.0);
            for b in 0..batch {
                layer.forward_into(&input[b * ni..(b + 1) * ni], &mut out[b * no..(b + 1) * no]);
            }
        }
        cache.output()
    }

    /// Backpropagates `dy` (`batch × output_size`) through the recorded
    /// batch, summing parameter gradients over samples into `grad`. When
    /// `dx` is given it receives `dL/dx` for every sample.
    pub fn backward_batch(&self, cache: &mut MlpBatch, dy: &[f64], grad: &mut Mlp, dx: Option<&mut Vec<f64>>) {
        let batch = cache.batch;
        assert_eq!(dy.len(), batch * self.output_size(), "output gradient has the wrong length");
        let want_dx = dx.is_some();
        let mut delta = core::mem::take(&mut cache.delta);
        let mut delta_next = core::mem::take(&mut cache.delta_next);
        delta.clear();
        delta.extend_from_slice(dy);
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let (ni, no) = (layer.input_size(), layer.output_size());
            let x = &cache.acts[i];
            let y = &cache.acts[i + 1];
            let need = i > 0 || want_dx;
            delta_next.resize(batch * ni, 0.0);
            for b in 0..batch {
                let dxb = if need { Some(&mut delta_next[b * ni..(b + 1) * ni]) } else { None };
                layer.backward_into(
                    &x[b * ni..(b + 1) * ni],
                    &y[b * no..(b + 1) * no],
                    &delta[b * no..(b + 1) * no],
                    &mut grad.layers[i],
                    dxb,
                );
            }
            core::mem::swap(&mut delta, &mut delta_next);
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.extend_from_slice(&delta);
        }
        cache.delta = delta;
        cache.delta_next = delta_next;
    }
}

impl Parameters for Mlp {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor, ParamRole)) {
        for l in &self.layers {
            l.visit(f);
        }
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor, ParamRole)) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;

    #[test]
    fn batch_forward_matches_single_sample_forward() {
        let mlp = Mlp::new(&[3, 5, 2], Activation::Tanh, Activation::Linear, &mut rng::seeded(3));
        let x = vec![0.1, 0.2, 0.3, -1.0, 0.5, 2.0];
        let mut cache = MlpBatch::default();
        let out = mlp.forward_batch(&x, 2, &mut cache).to_vec();
        assert_eq!(&out[..2], mlp.forward(&x[..3]).unwrap().as_slice());
        assert_eq!(&out[2..], mlp.forward(&x[3..]).unwrap().as_slice());
    }

    #[test]
    fn batch_gradient_is_sum_of_sample_gradients() {
        let mlp = Mlp::new(&[2, 4, 1], Activation::Relu, Activation::Tanh, &mut rng::seeded(8));
        let x = vec![0.5, -0.5, 1.5, 0.25];
        let dy = vec![1.0, -2.0];
        let mut cache = MlpBatch::default();
        mlp.forward_batch(&x, 2, &mut cache);
        let mut g_batch = mlp.zeros_like();
        let mut dx = Vec::new();
        mlp.backward_batch(&mut cache, &dy, &mut g_batch, Some(&mut dx));

        let mut g_sum = mlp.zeros_like();
        for b in 0..2 {
            let mut c = MlpBatch::default();
            mlp.forward_batch(&x[b * 2..b * 2 + 2], 1, &mut c);
            let mut g = mlp.zeros_like();
            let mut dxb = Vec::new();
            mlp.backward_batch(&mut c, &dy[b..b + 1], &mut g, Some(&mut dxb));
            assert_eq!(&dx[b * 2..b * 2 + 2], dxb.as_slice());
            g_sum.accumulate(&g);
        }
        for (a, b) in g_batch.to_flat().iter().zip(g_sum.to_flat()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
