//! GRU encoder-decoder plant model: construction, training and evaluation.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::engine::{Dataset, EngineSample};
use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::nn::{clip_gradients, Activation, AdamConfig, AdamState, GradientTape, Network, NetworkSpec, Parameters};
use crate::rng::{self, Rng};

pub const PLANT_INPUTS: usize = 5;
pub const PLANT_OUTPUTS: usize = 4;
pub const PLANT_HIDDEN: usize = 8;

/// Encoder widths 32-32-16 (tanh), GRU 8, decoder 16-32 (tanh) and a
/// linear 4-wide output.
pub fn plant_spec() -> NetworkSpec {
    use Activation::*;
    NetworkSpec {
        input_size: PLANT_INPUTS,
        encoder: vec![(32, Tanh), (32, Tanh), (16, Tanh)],
        hidden_size: PLANT_HIDDEN,
        decoder: vec![(16, Tanh), (32, Tanh), (PLANT_OUTPUTS, Linear)],
    }
}

/// Affine map from per-column `[lo, hi]` to `[-1, 1]`.
///
/// [`Normalizer::fit`] places `lo`/`hi` one standard deviation either side
/// of the column mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Normalizer {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(h > l) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Config("normalizer needs finite lo < hi per column".into()));
        }
        Ok(Self { lo, hi })
    }

    /// `mean ± std` of each column of `rows`; a constant column gets a
    /// unit-width range centred on its value.
    pub fn fit<const N: usize>(rows: impl IntoIterator<Item = [f64; N]>) -> Result<Self> {
        let mut sum = [0.0; N];
        let mut sq = [0.0; N];
        let mut n = 0usize;
        for r in rows {
            n += 1;
            for k in 0..N {
                sum[k] += r[k];
                sq[k] += r[k] * r[k];
            }
        }
        if n == 0 {
            return Err(Error::Config("cannot fit a normalizer to no data".into()));
        }
        let mut lo = [0.0; N];
        let mut hi = [0.0; N];
        for k in 0..N {
            let mean = sum[k] / n as f64;
            let var = (sq[k] / n as f64 - mean * mean).max(0.0);
            let sd = if var > 1e-24 { math::sqrt(var) } else { 0.5 };
            lo[k] = mean - sd;
            hi[k] = mean + sd;
        }
        Self::new(lo.to_vec(), hi.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    #[inline]
    pub fn normalize_one(&self, k: usize, v: f64) -> f64 {
        2.0 * (v - self.lo[k]) / (self.hi[k] - self.lo[k]) - 1.0
    }

    #[inline]
    pub fn denormalize_one(&self, k: usize, v: f64) -> f64 {
        (v + 1.0) * 0.5 * (self.hi[k] - self.lo[k]) + self.lo[k]
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(k, &v)| self.normalize_one(k, v)).collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(k, &v)| self.denormalize_one(k, v)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Feed the measured previous IMEP.
    TeacherForced,
    /// Feed back the model's own previous IMEP prediction.
    FreeRunning,
}

/// Identified plant: network plus input/output normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub net: Network,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
}

/// Model outputs (physical units) and GRU hidden states for a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub outputs: Vec<[f64; PLANT_OUTPUTS]>,
    pub hidden: Vec<Vec<f64>>,
}

impl PlantModel {
    pub fn new(input_norm: Normalizer, output_norm: Normalizer, rng: &mut Rng) -> Result<Self> {
        let net = Network::new(&plant_spec(), rng)?;
        Self::from_parts(net, input_norm, output_norm)
    }

    pub fn from_parts(net: Network, input_norm: Normalizer, output_norm: Normalizer) -> Result<Self> {
        net.validate()?;
        if net.input_size() != PLANT_INPUTS || net.output_size() != PLANT_OUTPUTS || net.hidden_size() != PLANT_HIDDEN {
            return Err(shape_err!("plant network must be {PLANT_INPUTS} -> [{PLANT_HIDDEN}] -> {PLANT_OUTPUTS}"));
        }
        let dense = net.encoder.len() + net.decoder.len();
        if dense != 6 {
            return Err(shape_err!("plant network must have 6 dense layers, found {dense}"));
        }
        if input_norm.dim() != PLANT_INPUTS || output_norm.dim() != PLANT_OUTPUTS {
            return Err(shape_err!("normalizer dimensions do not match the plant"));
        }
        Ok(Self { net, input_norm, output_norm })
    }

    /// Fresh model whose normalizers are fitted on the training split only.
    pub fn for_dataset(data: &Dataset, seed: u64) -> Result<Self> {
        let train = data.train();
        let input_norm = Normalizer::fit(train.iter().map(EngineSample::features))?;
        let output_norm = Normalizer::fit(train.iter().map(EngineSample::targets))?;
        Self::new(input_norm, output_norm, &mut rng::derive(seed, 0x706c_616e_7400))
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; PLANT_HIDDEN]
    }

    /// One step in physical units; `features` are
    /// `[doi_fuel, p2m, soi_fuel, doi_h2, imep_prev]`.
    pub fn step(&self, h: &[f64], features: &[f64; PLANT_INPUTS]) -> Result<([f64; PLANT_OUTPUTS], Vec<f64>)> {
        let x = self.input_norm.normalize(features);
        let (y, h_new) = self.net.step(h, &x)?;
        let mut out = [0.0; PLANT_OUTPUTS];
        for k in 0..PLANT_OUTPUTS {
            out[k] = self.output_norm.denormalize_one(k, y[k]);
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("plant prediction"));
        }
        Ok((out, h_new))
    }

    /// Runs the model over `inputs` from the zero state.
    pub fn predict_sequence(&self, inputs: &[[f64; PLANT_INPUTS]], mode: FeedbackMode) -> Result<Prediction> {
        if inputs.is_empty() {
            return Err(Error::Config("cannot predict an empty sequence".into()));
        }
        let mut h = self.initial_hidden();
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut hidden = Vec::with_capacity(inputs.len());
        let mut own_prev = inputs[0][4];
        for x in inputs {
            let mut feat = *x;
            if mode == FeedbackMode::FreeRunning {
                feat[4] = own_prev;
            }
            let (y, h_new) = self.step(&h, &feat)?;
            own_prev = y[0];
            h = h_new;
            outputs.push(y);
            hidden.push(h.clone());
        }
        Ok(Prediction { outputs, hidden })
    }

    /// Hidden states only.
    pub fn hidden_states(&self, inputs: &[[f64; PLANT_INPUTS]], mode: FeedbackMode) -> Result<Vec<Vec<f64>>> {
        Ok(self.predict_sequence(inputs, mode)?.hidden)
    }

    fn normalized_pairs(&self, samples: &[EngineSample]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let x = samples.iter().map(|s| self.input_norm.normalize(&s.features())).collect();
        let y = samples.iter().map(|s| self.output_norm.normalize(&s.targets())).collect();
        (x, y)
    }

    /// Teacher-forced loss over a contiguous segment, starting from the zero
    /// state: `1/N Σ_t ‖ŷ_t − y_t‖²` on normalized outputs.
    pub fn segment_loss(&self, samples: &[EngineSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Config("empty segment".into()));
        }
        let (x, y) = self.normalized_pairs(samples);
        let tape = self.net.forward_sequence(&self.initial_hidden(), &x)?;
        Ok(mse(&tape, &y))
    }
}

fn mse(tape: &GradientTape, targets: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (t, y) in targets.iter().enumerate() {
        for (p, q) in tape.output(t).iter().zip(y) {
            s += (p - q) * (p - q);
        }
    }
    s / targets.len() as f64
}

/// Identification hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantTrainConfig {
    pub max_epochs: usize,
    /// Samples (time steps) per gradient step.
    pub batch_size: usize,
    pub grad_threshold: f64,
    pub l2: f64,
    pub initial_lr: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub validation_patience: usize,
    /// Truncated backprop-through-time window.
    pub bptt_window: usize,
    pub seed: u64,
}

impl Default for PlantTrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            batch_size: 512,
            grad_threshold: 1.0,
            l2: 0.01,
            initial_lr: 0.0005,
            lr_drop_epoch: 250,
            lr_drop_factor: 0.75,
            validation_patience: 3,
            bptt_window: 32,
            seed: 42,
        }
    }
}

impl PlantTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.max_epochs > 0
            && self.batch_size > 0
            && self.grad_threshold > 0.0
            && self.l2 >= 0.0
            && self.initial_lr > 0.0
            && self.lr_drop_epoch > 0
            && self.lr_drop_factor > 0.0
            && self.validation_patience > 0
            && self.bptt_window > 0;
        if positive {
            Ok(())
        } else {
            Err(Error::Config("plant training settings must be positive".into()))
        }
    }

    /// Piecewise-constant schedule; `epoch` counts from 1.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let drops = (epoch.saturating_sub(1) / self.lr_drop_epoch) as f64;
        self.initial_lr * math::pow(self.lr_drop_factor, drops)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights of the epoch with the lowest validation loss.
    pub model: PlantModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains the plant on the training split with early stopping on the
/// validation split.
///
/// Each epoch cuts the training split into contiguous windows of
/// `bptt_window` steps (random phase), shuffles them, and groups
/// `batch_size / bptt_window` windows per gradient step. Every window starts
/// from the zero hidden state.
pub fn train_plant(model: PlantModel, data: &Dataset, cfg: &PlantTrainConfig) -> Result<TrainOutcome> {
    train_plant_with(model, data, cfg, |_| {})
}

/// As [`train_plant`], calling `on_epoch` after every epoch.
pub fn train_plant_with(
    mut model: PlantModel,
    data: &Dataset,
    cfg: &PlantTrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = data.train();
    let val = data.val();
    if train.len() < 2 || val.is_empty() {
        return Err(Error::Config("training needs non-empty train and validation splits".into()));
    }
    let mut rng = rng::derive(cfg.seed, 0x7379_7369_6400);
    let (x_all, y_all) = model.normalized_pairs(train);
    let window = cfg.bptt_window.min(train.len());
    let windows_per_batch = (cfg.batch_size / window).max(1);

    let mut adam = AdamState::new(&model.net, AdamConfig::default());
    let mut grad = model.net.zeros_like();
    let mut tape = GradientTape::default();
    let mut d_out: Vec<Vec<f64>> = Vec::new();

    let mut best = model.clone();
    let mut best_val = model.segment_loss(val)?;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.learning_rate(epoch);
        let phase = rng::int_inclusive(&mut rng, 0, window - 1);
        let mut starts: Vec<usize> = (phase..=train.len() - window).step_by(window).collect();
        if starts.is_empty() {
            starts.push(0);
        }
        shuffle(&mut starts, &mut rng);

        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        for chunk in starts.chunks(windows_per_batch) {
            grad.scale(0.0);
            let steps: usize = chunk.len() * window;
            for &s in chunk {
                let xs = &x_all[s..s + window];
                let ys = &y_all[s..s + window];
                model.net.forward_sequence_into(&model.initial_hidden(), xs, &mut tape)?;
                d_out.resize_with(window, Vec::new);
                for t in 0..window {
                    let out = tape.output(t);
                    let d = &mut d_out[t];
                    d.clear();
                    for (p, q) in out.iter().zip(&ys[t]) {
                        epoch_loss += (p - q) * (p - q);
                        d.push(2.0 * (p - q) / steps as f64);
                    }
                }
                tape.backward_into(&model.net, &d_out[..window], &mut grad)?;
            }
            epoch_steps += steps;
            clip_gradients(&mut grad, cfg.grad_threshold);
            adam.update(&mut model.net, &grad, lr, cfg.l2)?;
        }
        let train_loss = epoch_loss / epoch_steps as f64;
        if !train_loss.is_finite() || !model.net.all_finite() {
            return Err(Error::NonFinite("plant training loss"));
        }
        let val_loss = model.segment_loss(val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite("plant validation loss"));
        }
        let record = EpochRecord { epoch, train_loss, val_loss, lr };
        on_epoch(&record);
        history.push(record);
        if val_loss < best_val {
            best_val = val_loss;
            best = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.validation_patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { model: best, history, best_epoch, best_val_loss: best_val })
}

fn shuffle<T>(v: &mut [T], rng: &mut Rng) {
    for i in (1..v.len()).rev() {
        let j = rng::int_inclusive(rng, 0, i);
        v.swap(i, j);
    }
}

/// Range-normalized root mean squared percentage error per channel:
/// `100 · sqrt(mean (y − ŷ)²) / (max y − min y)`.
pub fn rmspe(predictions: &[[f64; PLANT_OUTPUTS]], targets: &[[f64; PLANT_OUTPUTS]]) -> Result<[f64; PLANT_OUTPUTS]> {
    if predictions.len() != targets.len() || targets.len() < 2 {
        return Err(Error::UndefinedMetric(alloc::format!(
            "RMSPE needs equal lengths of at least 2, got {} and {}",
            predictions.len(),
            targets.len()
        )));
    }
    let mut out = [0.0; PLANT_OUTPUTS];
    for c in 0..PLANT_OUTPUTS {
        let (mut lo, mut hi, mut se) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for (p, y) in predictions.iter().zip(targets) {
            lo = lo.min(y[c]);
            hi = hi.max(y[c]);
            se += (y[c] - p[c]) * (y[c] - p[c]);
        }
        let range = hi - lo;
        if !(range > 0.0) {
            return Err(Error::UndefinedMetric(alloc::format!("channel {c} has zero range")));
        }
        out[c] = 100.0 * math::sqrt(se / targets.len() as f64) / range;
    }
    Ok(out)
}

/// Teacher-forced (or free-running) RMSPE of `model` over a segment.
pub fn evaluate_rmspe(model: &PlantModel, samples: &[EngineSample], mode: FeedbackMode) -> Result<[f64; PLANT_OUTPUTS]> {
    let inputs: Vec<_> = samples.iter().map(EngineSample::features).collect();
    let targets: Vec<_> = samples.iter().map(EngineSample::targets).collect();
    let pred = model.predict_sequence(&inputs, mode)?;
    rmspe(&pred.outputs, &targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{collect_dataset, EngineInputs, EngineOutputs, MeasurementNoise, PrbsConfig, SplitFractions};
    use proptest::prelude::*;

    fn small_data(n: usize) -> Dataset {
        collect_dataset(n, &PrbsConfig::default(), SplitFractions::default(), &MeasurementNoise::NONE).unwrap()
    }

    #[test]
    fn architecture_has_six_dense_layers_and_one_gru() {
        let m = PlantModel::for_dataset(&small_data(200), 1).unwrap();
        assert_eq!(m.net.encoder.len() + m.net.decoder.len(), 6);
        assert_eq!(m.net.hidden_size(), 8);
        assert_eq!(m.net.output_size(), 4);
    }

    #[test]
    fn learning_rate_drops_every_250_epochs() {
        let cfg = PlantTrainConfig::default();
        assert_eq!(cfg.learning_rate(1), 0.0005);
        assert_eq!(cfg.learning_rate(250), 0.0005);
        assert!((cfg.learning_rate(251) - 0.000375).abs() < 1e-18);
        assert!((cfg.learning_rate(501) - 0.0005 * 0.75 * 0.75).abs() < 1e-18);
    }

    #[test]
    fn one_epoch_changes_the_model() {
        let data = small_data(400);
        let m0 = PlantModel::for_dataset(&data, 3).unwrap();
        let cfg = PlantTrainConfig { max_epochs: 1, ..Default::default() };
        let out = train_plant(m0.clone(), &data, &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        // best-weights may be the initial model only if validation got worse
        let trained = train_plant_with(m0.clone(), &data, &cfg, |_| {}).unwrap();
        assert_eq!(trained.history, out.history);
        assert!(out.history[0].train_loss.is_finite());
    }

    #[test]
    fn returned_model_is_the_best_validation_model() {
        let data = small_data(600);
        let m0 = PlantModel::for_dataset(&data, 5).unwrap();
        let cfg = PlantTrainConfig { max_epochs: 15, validation_patience: 100, ..Default::default() };
        let out = train_plant(m0, &data, &cfg).unwrap();
        let v = out.model.segment_loss(data.val()).unwrap();
        assert!((v - out.best_val_loss).abs() < 1e-15);
        for r in &out.history {
            assert!(v <= r.val_loss);
        }
    }

    #[test]
    fn constant_outputs_are_learned() {
        let s = EngineSample {
            inputs: EngineInputs::new(0.3, 0.3, 0.3, 0.3),
            imep_prev: 5.0,
            outputs: EngineOutputs { imep: 5.0, nox: 50.0, soot: 3.0, mprr: 2.0 },
        };
        let mut samples = alloc::vec![s; 400];
        let mut r = rng::seeded(1);
        for s in &mut samples {
            s.inputs = EngineInputs::new(
                rng::uniform(&mut r, 0.0, 1.0),
                rng::uniform(&mut r, 0.0, 1.0),
                rng::uniform(&mut r, 0.0, 1.0),
                rng::uniform(&mut r, 0.0, 1.0),
            );
        }
        let data = Dataset::from_samples(samples, SplitFractions::default()).unwrap();
        let m0 = PlantModel::for_dataset(&data, 9).unwrap();
        let cfg = PlantTrainConfig {
            max_epochs: 50,
            batch_size: 64,
            l2: 0.01,
            initial_lr: 0.005,
            lr_drop_epoch: 15,
            lr_drop_factor: 0.2,
            validation_patience: 50,
            ..Default::default()
        };
        let out = train_plant(m0, &data, &cfg).unwrap();
        let x: Vec<Vec<f64>> = data.test().iter().map(|s| out.model.input_norm.normalize(&s.features())).collect();
        let tape = out.model.net.forward_sequence(&out.model.initial_hidden(), &x).unwrap();
        for t in 0..x.len() {
            for &v in tape.output(t) {
                assert!(v.abs() < 1e-3, "normalized prediction {v}");
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_data(300);
        let cfg = PlantTrainConfig { max_epochs: 3, validation_patience: 10, ..Default::default() };
        let a = train_plant(PlantModel::for_dataset(&data, 2).unwrap(), &data, &cfg).unwrap();
        let b = train_plant(PlantModel::for_dataset(&data, 2).unwrap(), &data, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn single_step_prediction_modes_agree() {
        let data = small_data(200);
        let m = PlantModel::for_dataset(&data, 4).unwrap();
        let x = [data.samples[0].features()];
        let tf = m.predict_sequence(&x, FeedbackMode::TeacherForced).unwrap();
        let fr = m.predict_sequence(&x, FeedbackMode::FreeRunning).unwrap();
        assert_eq!(tf, fr);
        let xn = m.input_norm.normalize(&x[0]);
        let enc = m.net.encoder.iter().fold(xn, |v, l| l.forward(&v).unwrap().0);
        let (h, _) = m.net.gru.step(&[0.0; 8], &enc).unwrap();
        assert_eq!(tf.hidden[0], h);
        assert!(m.predict_sequence(&[], FeedbackMode::TeacherForced).is_err());
    }

    #[test]
    fn hidden_states_have_no_observer_effect() {
        let data = small_data(200);
        let m = PlantModel::for_dataset(&data, 4).unwrap();
        let x: Vec<_> = data.samples.iter().map(EngineSample::features).collect();
        for mode in [FeedbackMode::TeacherForced, FeedbackMode::FreeRunning] {
            assert_eq!(m.hidden_states(&x, mode).unwrap(), m.predict_sequence(&x, mode).unwrap().hidden);
        }
    }

    #[test]
    fn rmspe_cases() {
        let y = [[1.0, 2.0, 3.0, 4.0], [3.0, 5.0, 4.0, 8.0]];
        assert_eq!(rmspe(&y, &y).unwrap(), [0.0; 4]);
        let shifted: Vec<_> = y.iter().map(|r| [r[0] + 0.1, r[1], r[2], r[3]]).collect();
        assert!((rmspe(&shifted, &y).unwrap()[0] - 5.0).abs() < 1e-12);
        let flat = [[1.0, 2.0, 3.0, 4.0], [1.0, 5.0, 4.0, 8.0]];
        assert!(matches!(rmspe(&flat, &flat), Err(Error::UndefinedMetric(_))));
        assert!(rmspe(&y[..1], &y[..1]).is_err());
    }

    #[test]
    fn random_rmspe_matches_straight_line_recomputation() {
        let mut r = rng::seeded(5);
        let mut draw = || core::array::from_fn::<f64, 4, _>(|_| rng::uniform(&mut r, -3.0, 3.0));
        let p: Vec<[f64; 4]> = (0..50).map(|_| draw()).collect();
        let y: Vec<[f64; 4]> = (0..50).map(|_| draw()).collect();
        let got = rmspe(&p, &y).unwrap();
        for c in 0..4 {
            let col: Vec<f64> = y.iter().map(|r| r[c]).collect();
            let range = col.iter().cloned().fold(f64::MIN, f64::max) - col.iter().cloned().fold(f64::MAX, f64::min);
            let mse = p.iter().zip(&y).map(|(a, b)| (a[c] - b[c]).powi(2)).sum::<f64>() / 50.0;
            assert!((got[c] - 100.0 * mse.sqrt() / range).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn normalization_round_trips(v in proptest::collection::vec(-100.0f64..100.0, 4)) {
            let n = Normalizer::new(alloc::vec![-3.0, 0.0, 10.0, -50.0], alloc::vec![5.0, 1.0, 400.0, 50.0]).unwrap();
            let back = n.denormalize(&n.normalize(&v));
            for (a, b) in back.iter().zip(&v) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
