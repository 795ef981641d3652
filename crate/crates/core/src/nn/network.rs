use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{Activation, DenseCache, DenseLayer, GruCache, GruCell, ParamRole, Parameters, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

/// Layer widths of an encoder → GRU → decoder network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_size: usize,
    pub encoder: Vec<(usize, Activation)>,
    pub hidden_size: usize,
    /// The last entry is the output layer.
    pub decoder: Vec<(usize, Activation)>,
}

/// Dense encoder, one GRU layer, dense decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub encoder: Vec<DenseLayer>,
    pub gru: GruCell,
    pub decoder: Vec<DenseLayer>,
}

#[derive(Clone, Debug, Default)]
pub struct StepCache {
    pub encoder: Vec<DenseCache>,
    pub gru: GruCache,
    pub decoder: Vec<DenseCache>,
}

/// Forward caches of a whole sequence, enough to backpropagate through time.
#[derive(Clone, Debug, Default)]
pub struct GradientTape {
    steps: Vec<StepCache>,
    len: usize,
    input_size: usize,
}

fn dense_stack(input: usize, widths: &[(usize, Activation)], rng: &mut Rng) -> Vec<DenseLayer> {
    let mut prev = input;
    widths
        .iter()
        .map(|&(w, act)| {
            let layer = DenseLayer::new(prev, w, act, rng);
            prev = w;
            layer
        })
        .collect()
}

impl Network {
    pub fn new(spec: &NetworkSpec, rng: &mut Rng) -> Result<Self> {
        if spec.input_size == 0 || spec.hidden_size == 0 || spec.decoder.is_empty() {
            return Err(Error::Config("network needs inputs, a hidden state and an output layer".into()));
        }
        if spec.encoder.iter().chain(&spec.decoder).any(|&(w, _)| w == 0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        let encoder = dense_stack(spec.input_size, &spec.encoder, rng);
        let gru_in = spec.encoder.last().map_or(spec.input_size, |l| l.0);
        let gru = GruCell::new(gru_in, spec.hidden_size, rng);
        let decoder = dense_stack(spec.hidden_size, &spec.decoder, rng);
        Ok(Self { encoder, gru, decoder })
    }

    pub fn input_size(&self) -> usize {
        self.encoder.first().map_or(self.gru.input_size, |l| l.input_size())
    }

    pub fn hidden_size(&self) -> usize {
        self.gru.hidden_size
    }

    pub fn output_size(&self) -> usize {
        self.decoder.last().map_or(self.gru.hidden_size, |l| l.output_size())
    }

    pub fn validate(&self) -> Result<()> {
        self.gru.validate()?;
        let mut prev = self.input_size();
        for l in &self.encoder {
            if l.input_size() != prev {
                return Err(shape_err!("encoder layer expects {} inputs, previous gives {}", l.input_size(), prev));
            }
            prev = l.output_size();
        }
        if prev != self.gru.input_size {
            return Err(shape_err!("GRU expects {} inputs, encoder gives {}", self.gru.input_size, prev));
        }
        prev = self.gru.hidden_size;
        for l in &self.decoder {
            if l.input_size() != prev {
                return Err(shape_err!("decoder layer expects {} inputs, previous gives {}", l.input_size(), prev));
            }
            prev = l.output_size();
        }
        Ok(())
    }

    /// Inference step: returns `(y, h_new)`.
    pub fn step(&self, h: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(u)?;
        if h.len() != self.hidden_size() {
            return Err(shape_err!("hidden state has {} values, expected {}", h.len(), self.hidden_size()));
        }
        let mut cache = StepCache::default();
        self.step_cached(h, u, &mut cache);
        let y = cache.decoder.last().map_or_else(|| cache.gru.h.clone(), |c| c.y.clone());
        Ok((y, cache.gru.h))
    }

    fn check_input(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.input_size() {
            return Err(shape_err!("network input has {} values, expected {}", u.len(), self.input_size()));
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    fn step_cached(&self, h: &[f64], u: &[f64], cache: &mut StepCache) {
        run_stack(&self.encoder, u, &mut cache.encoder);
        let gru_in = cache.encoder.last().map_or(u, |c| c.y.as_slice());
        self.gru.step_into(h, gru_in, &mut cache.gru);
        run_stack(&self.decoder, &cache.gru.h, &mut cache.decoder);
    }

    /// Runs a sequence from `h0`, recording everything backward needs.
    pub fn forward_sequence(&self, h0: &[f64], inputs: &[Vec<f64>]) -> Result<GradientTape> {
        let mut tape = GradientTape::default();
        self.forward_sequence_into(h0, inputs, &mut tape)?;
        Ok(tape)
    }

    /// As [`Network::forward_sequence`], reusing the buffers of `tape`.
    pub fn forward_sequence_into(&self, h0: &[f64], inputs: &[Vec<f64>], tape: &mut GradientTape) -> Result<()> {
        if h0.len() != self.hidden_size() {
            return Err(shape_err!("initial state has {} values, expected {}", h0.len(), self.hidden_size()));
        }
        for u in inputs {
            self.check_input(u)?;
        }
        if tape.steps.len() < inputs.len() {
            tape.steps.resize_with(inputs.len(), StepCache::default);
        }
        tape.len = inputs.len();
        tape.input_size = self.input_size();
        for (t, u) in inputs.iter().enumerate() {
            let (done, rest) = tape.steps.split_at_mut(t);
            let h_prev = done.last().map_or(h0, |s| s.gru.h.as_slice());
            self.step_cached(h_prev, u, &mut rest[0]);
        }
        Ok(())
    }
}

fn run_stack(layers: &[DenseLayer], x: &[f64], caches: &mut Vec<DenseCache>) {
    caches.resize_with(layers.len(), DenseCache::default);
    for (i, layer) in layers.iter().enumerate() {
        let (prev, cur) = caches.split_at_mut(i);
        let input = prev.last().map_or(x, |c| c.y.as_slice());
        let c = &mut cur[0];
        c.x.clear();
        c.x.extend_from_slice(input);
        c.y.resize(layer.output_size(), 0.0);
        layer.forward_into(&c.x, &mut c.y);
    }
}

fn backprop_stack(layers: &[DenseLayer], caches: &[DenseCache], grads: &mut [DenseLayer], dy: &[f64], dx: &mut Vec<f64>) {
    let mut upstream = dy.to_vec();
    for i in (0..layers.len()).rev() {
        dx.resize(layers[i].input_size(), 0.0);
        layers[i].backward_into(&caches[i].x, &caches[i].y, &upstream, &mut grads[i], Some(dx));
        upstream.clear();
        upstream.extend_from_slice(dx);
    }
    dx.clear();
    dx.extend_from_slice(&upstream);
}

impl GradientTape {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn output(&self, t: usize) -> &[f64] {
        let s = &self.steps[t];
        s.decoder.last().map_or(&s.gru.h, |c| &c.y)
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.steps[t].gru.h
    }

    pub fn step(&self, t: usize) -> &StepCache {
        &self.steps[t]
    }

    /// Exact gradients of a loss whose derivative w.r.t. output `t` is
    /// `d_outputs[t]`, backpropagated through every recorded step.
    pub fn backward(&self, net: &Network, d_outputs: &[Vec<f64>]) -> Result<Network> {
        let mut grad = net.zeros_like();
        self.backward_into(net, d_outputs, &mut grad)?;
        Ok(grad)
    }

    /// As [`GradientTape::backward`], accumulating into `grad`.
    pub fn backward_into(&self, net: &Network, d_outputs: &[Vec<f64>], grad: &mut Network) -> Result<()> {
        if d_outputs.len() != self.len {
            return Err(shape_err!("{} output gradients for a tape of {} steps", d_outputs.len(), self.len));
        }
        if self.len > 0 && self.input_size != net.input_size() {
            return Err(shape_err!("tape was recorded for a different network"));
        }
        let hs = net.hidden_size();
        let mut dh_carry = vec![0.0; hs];
        let mut dh = vec![0.0; hs];
        let mut dh_prev = vec![0.0; hs];
        let mut du = vec![0.0; net.gru.input_size];
        let mut scratch = Vec::new();
        for t in (0..self.len).rev() {
            let dy = &d_outputs[t];
            if dy.len() != net.output_size() {
                return Err(shape_err!("output gradient {} has {} values, expected {}", t, dy.len(), net.output_size()));
            }
            let step = &self.steps[t];
            if net.decoder.is_empty() {
                dh.copy_from_slice(dy);
            } else {
                backprop_stack(&net.decoder, &step.decoder, &mut grad.decoder, dy, &mut scratch);
                dh.copy_from_slice(&scratch);
            }
            for (a, b) in dh.iter_mut().zip(&dh_carry) {
                *a += b;
            }
            net.gru.backward_step(&step.gru, &dh, &mut grad.gru, &mut dh_prev, &mut du);
            if !net.encoder.is_empty() {
                backprop_stack(&net.encoder, &step.encoder, &mut grad.encoder, &du, &mut scratch);
            }
            dh_carry.copy_from_slice(&dh_prev);
        }
        Ok(())
    }
}

impl Parameters for Network {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor, ParamRole)) {
        for l in &self.encoder {
            l.visit(f);
        }
        self.gru.visit(f);
        for l in &self.decoder {
            l.visit(f);
        }
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor, ParamRole)) {
        for l in &mut self.encoder {
            l.visit_mut(f);
        }
        self.gru.visit_mut(f);
        for l in &mut self.decoder {
            l.visit_mut(f);
        }
    }
}
