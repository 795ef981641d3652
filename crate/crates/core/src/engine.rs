//! Synthetic dual-fuel engine surrogate, PRBS excitation and dataset
//! assembly.
//!
//! Actuator inputs are normalized to `[0, 1]`. The surrogate keeps two
//! first-order charge states (pole 0.7) and maps them to load, emissions
//! and pressure-rise rate through fixed closed-form expressions.

use alloc::vec::Vec;
use core::f64::consts::PI;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, Rng};

/// Idle load used as the IMEP feedback feature before the first cycle.
pub const IDLE_IMEP: f64 = 2.0;

const POLE: f64 = 0.7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineInputs {
    pub doi_fuel: f64,
    pub p2m: f64,
    pub soi_fuel: f64,
    pub doi_h2: f64,
}

impl EngineInputs {
    pub fn new(doi_fuel: f64, p2m: f64, soi_fuel: f64, doi_h2: f64) -> Self {
        Self { doi_fuel, p2m, soi_fuel, doi_h2 }.clamped()
    }

    /// Each channel clamped to `[0, 1]`; NaN maps to 0.
    pub fn clamped(self) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        Self { doi_fuel: c(self.doi_fuel), p2m: c(self.p2m), soi_fuel: c(self.soi_fuel), doi_h2: c(self.doi_h2) }
    }

    /// `[doi_fuel, p2m, soi_fuel, doi_h2]`
    pub fn to_array(self) -> [f64; 4] {
        [self.doi_fuel, self.p2m, self.soi_fuel, self.doi_h2]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { doi_fuel: a[0], p2m: a[1], soi_fuel: a[2], doi_h2: a[3] }
    }
}

/// Per-cycle engine outputs: IMEP (bar), NOx (ppm), soot (mg/m³), MPRR
/// (bar/CAD).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineOutputs {
    pub imep: f64,
    pub nox: f64,
    pub soot: f64,
    pub mprr: f64,
}

impl EngineOutputs {
    /// `[imep, nox, soot, mprr]`
    pub fn to_array(self) -> [f64; 4] {
        [self.imep, self.nox, self.soot, self.mprr]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { imep: a[0], nox: a[1], soot: a[2], mprr: a[3] }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub x_d: f64,
    pub x_h: f64,
}

/// Standard deviation of additive measurement noise per output channel, in
/// `[imep, nox, soot, mprr]` order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasurementNoise {
    pub std: [f64; 4],
}

impl MeasurementNoise {
    pub const NONE: Self = Self { std: [0.0; 4] };

    /// 1 % of the nominal channel ranges: imep 0–17, nox 0–500, soot 0–40,
    /// mprr 0–10.
    pub const fn one_percent() -> Self {
        Self { std: [0.17, 5.0, 0.4, 0.1] }
    }

    pub fn is_silent(&self) -> bool {
        self.std.iter().all(|&s| s == 0.0)
    }
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self::one_percent()
    }
}

/// Noise-free surrogate transition.
pub fn engine_step(state: EngineState, u: EngineInputs) -> (EngineState, EngineOutputs) {
    let u = u.clamped();
    let x_d = POLE * state.x_d + (1.0 - POLE) * u.doi_fuel;
    let x_h = POLE * state.x_h + (1.0 - POLE) * u.doi_h2;
    let soi = u.soi_fuel;
    let imep = 2.0 + 6.0 * x_d + 7.0 * x_h + 1.5 * x_d * x_h + 0.5 * math::sin(PI * soi) + 0.2 * u.p2m;
    let mprr = 1.0 + 3.0 * x_h * x_h * (1.0 + x_d) + 2.0 * (1.0 - soi) * x_h + 0.5 * x_d;
    let nox = 100.0 * (x_d + 1.8 * x_h) * (1.0 + 0.5 * (1.0 - soi));
    let soot = (30.0 * x_d * x_d * (1.0 + 0.8 * soi) * (1.0 - 0.5 * x_h)).max(0.0);
    (EngineState { x_d, x_h }, EngineOutputs { imep, nox, soot, mprr })
}

/// Adds measurement noise; NOx and soot stay non-negative.
pub fn measure(y: EngineOutputs, noise: &MeasurementNoise, rng: &mut Rng) -> EngineOutputs {
    if noise.is_silent() {
        return y;
    }
    let mut a = y.to_array();
    for (v, s) in a.iter_mut().zip(noise.std) {
        *v += s * rng::normal(rng);
    }
    a[1] = a[1].max(0.0);
    a[2] = a[2].max(0.0);
    EngineOutputs::from_array(a)
}

/// Stateful surrogate with its own noise stream.
#[derive(Clone, Debug)]
pub struct VirtualEngine {
    pub state: EngineState,
    noise: MeasurementNoise,
    rng: Rng,
}

impl VirtualEngine {
    pub fn new(noise: MeasurementNoise, seed: u64) -> Self {
        Self { state: EngineState::default(), noise, rng: rng::derive(seed, 0x656e_6769) }
    }

    /// Advances one cycle, returning the measured outputs.
    pub fn step(&mut self, u: EngineInputs) -> EngineOutputs {
        let (state, y) = engine_step(self.state, u);
        self.state = state;
        measure(y, &self.noise, &mut self.rng)
    }
}

/// One excitation channel: random levels held for random durations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrbsChannel {
    pub hold_min: usize,
    pub hold_max: usize,
    pub levels: Vec<f64>,
}

impl PrbsChannel {
    pub fn validate(&self) -> Result<()> {
        if self.hold_min < 1 || self.hold_max < self.hold_min {
            return Err(Error::Config(alloc::format!("invalid hold range {}..={}", self.hold_min, self.hold_max)));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::Config("PRBS levels must be non-empty and within [0, 1]".into()));
        }
        Ok(())
    }

    pub fn generate(&self, len: usize, rng: &mut Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        while out.len() < len {
            let level = self.levels[rng::int_inclusive(rng, 0, self.levels.len() - 1)];
            let hold = rng::int_inclusive(rng, self.hold_min, self.hold_max);
            let n = hold.min(len - out.len());
            out.extend(core::iter::repeat_n(level, n));
        }
        out
    }
}

impl Default for PrbsChannel {
    fn default() -> Self {
        Self { hold_min: 3, hold_max: 10, levels: alloc::vec![0.0, 0.25, 0.5, 0.75, 1.0] }
    }
}

/// Multi-level pseudo-random excitation for the four actuators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrbsConfig {
    /// `[doi_fuel, p2m, soi_fuel, doi_h2]`
    pub channels: [PrbsChannel; 4],
    pub total_cycles: usize,
    pub seed: u64,
}

impl Default for PrbsConfig {
    fn default() -> Self {
        Self { channels: Default::default(), total_cycles: 20_000, seed: 42 }
    }
}

impl PrbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_cycles == 0 {
            return Err(Error::Config("PRBS length must be positive".into()));
        }
        self.channels.iter().try_for_each(PrbsChannel::validate)
    }
}

/// Excitation sequence; each channel draws from its own seeded stream.
pub fn generate_prbs(config: &PrbsConfig) -> Result<Vec<EngineInputs>> {
    config.validate()?;
    let n = config.total_cycles;
    let cols: Vec<Vec<f64>> = config
        .channels
        .iter()
        .enumerate()
        .map(|(i, ch)| ch.generate(n, &mut rng::derive(config.seed, 0x7072_6273_0000 + i as u64)))
        .collect();
    Ok((0..n).map(|t| EngineInputs::new(cols[0][t], cols[1][t], cols[2][t], cols[3][t])).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One identification sample: actuator inputs and the previous measured
/// IMEP as model features, the measured outputs as targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineSample {
    pub inputs: EngineInputs,
    pub imep_prev: f64,
    pub outputs: EngineOutputs,
}

impl EngineSample {
    /// `[doi_fuel, p2m, soi_fuel, doi_h2, imep_prev]`
    pub fn features(&self) -> [f64; 5] {
        let u = self.inputs;
        [u.doi_fuel, u.p2m, u.soi_fuel, u.doi_h2, self.imep_prev]
    }

    pub fn targets(&self) -> [f64; 4] {
        self.outputs.to_array()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.80, val: 0.15, test: 0.05 }
    }
}

/// Contiguous train / validation / test segments, in that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<EngineSample>,
    pub train_end: usize,
    pub val_end: usize,
}

impl Dataset {
    pub fn from_samples(samples: Vec<EngineSample>, split: SplitFractions) -> Result<Self> {
        let sum = split.train + split.val + split.test;
        if (sum - 1.0).abs() > 1e-9 || split.train < 0.0 || split.val < 0.0 || split.test < 0.0 {
            return Err(Error::Config(alloc::format!("split fractions sum to {sum}, expected 1")));
        }
        let n = samples.len();
        let train_end = libm::round(n as f64 * split.train) as usize;
        let val_end = (train_end + libm::round(n as f64 * split.val) as usize).min(n);
        Ok(Self { samples, train_end, val_end })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn train(&self) -> &[EngineSample] {
        &self.samples[..self.train_end]
    }

    pub fn val(&self) -> &[EngineSample] {
        &self.samples[self.train_end..self.val_end]
    }

    pub fn test(&self) -> &[EngineSample] {
        &self.samples[self.val_end..]
    }

    pub fn split_of(&self, i: usize) -> Split {
        if i < self.train_end {
            Split::Train
        } else if i < self.val_end {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Drives the surrogate with `length` cycles of PRBS excitation (the
/// config's own `total_cycles` is overridden) and records measured samples.
pub fn collect_dataset(
    length: usize,
    prbs: &PrbsConfig,
    split: SplitFractions,
    noise: &MeasurementNoise,
) -> Result<Dataset> {
    if length < 100 {
        return Err(Error::Config(alloc::format!("dataset needs at least 100 cycles, got {length}")));
    }
    let cfg = PrbsConfig { total_cycles: length, ..prbs.clone() };
    let inputs = generate_prbs(&cfg)?;
    let mut engine = VirtualEngine::new(*noise, prbs.seed);
    let mut imep_prev = IDLE_IMEP;
    let samples = inputs
        .into_iter()
        .map(|u| {
            let outputs = engine.step(u);
            let s = EngineSample { inputs: u, imep_prev, outputs };
            imep_prev = outputs.imep;
            s
        })
        .collect();
    Dataset::from_samples(samples, split)
}
