//! Offline RL environment around a trained [`PlantModel`]: reward with
//! staging bonus and polytope penalty, measurement-noise augmentation and
//! observation assembly.

use alloc::sync::Arc;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::engine::{EngineInputs, EngineOutputs, IDLE_IMEP};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, Rng};
use crate::sysid::{PlantModel, PLANT_HIDDEN};

pub const ACTION_DIM: usize = 4;
/// Observation length without the plant hidden state.
pub const OBS_BASE: usize = 8;
/// Observation length with the plant hidden state appended.
pub const OBS_FULL: usize = OBS_BASE + PLANT_HIDDEN;

/// Output-channel indices in `[imep, nox, soot, mprr]` order.
const IMEP: usize = 0;
const NOX: usize = 1;
const SOOT: usize = 2;
const MPRR: usize = 3;

/// Constants of the exponential tracking bonus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StagingConfig {
    pub enabled: bool,
    pub coefficient: f64,
    pub offset: f64,
    /// Smallest tracking error (bar) the bonus distinguishes.
    pub delta_floor: f64,
    pub exponent_cap: f64,
}

impl Default for StagingConfig {
    fn default() -> Self {
        Self { enabled: true, coefficient: 0.0025, offset: 5.0, delta_floor: 1e-3, exponent_cap: 8.0 }
    }
}

/// Weights of the per-step reward.
///
/// `q` weights IMEP tracking, MPRR, NOx and soot; `r` weights the squared
/// plant-space actions. Output terms use channels divided by `scales`
/// (`[imep, nox, soot, mprr]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub q: [f64; 4],
    pub r: [f64; 4],
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub staging: StagingConfig,
    pub scales: [f64; 4],
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            q: [1.0, 0.1, 0.05, 0.05],
            r: [0.05, 0.02, 0.02, 0.05],
            alpha: 1.0,
            beta: 0.1,
            zeta: 10.0,
            staging: StagingConfig::default(),
            scales: [17.0, 500.0, 40.0, 10.0],
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = self.q.iter().chain(&self.r).chain([&self.alpha, &self.beta, &self.zeta]);
        if weights.clone().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("reward weights must be finite and non-negative".into()));
        }
        if self.scales.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::Config("reward scales must be positive".into()));
        }
        let s = &self.staging;
        if !(s.delta_floor > 0.0) || !s.coefficient.is_finite() || s.coefficient < 0.0 || !s.exponent_cap.is_finite() {
            return Err(Error::Config("staging needs delta_floor > 0 and a finite, non-negative coefficient".into()));
        }
        Ok(())
    }
}

/// Box of admissible outputs, `[imep, nox, soot, mprr]` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafePolytope {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl Default for SafePolytope {
    fn default() -> Self {
        Self { lower: [0.5, 0.0, 0.0, 0.0], upper: [14.0, 400.0, 35.0, 7.0] }
    }
}

impl SafePolytope {
    pub fn validate(&self) -> Result<()> {
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config("polytope needs lower < upper on every channel".into()));
        }
        Ok(())
    }

    /// Per-channel flag: outside the closed box.
    pub fn violations(&self, y: &EngineOutputs) -> [bool; 4] {
        let a = y.to_array();
        core::array::from_fn(|c| a[c] < self.lower[c] || a[c] > self.upper[c])
    }

    pub fn contains(&self, y: &EngineOutputs) -> bool {
        !self.violations(y).iter().any(|&v| v)
    }
}

/// Gaussian perturbation of the plant outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Per-channel standard deviation, `[imep, nox, soot, mprr]`.
    pub std: [f64; 4],
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { std: crate::engine::MeasurementNoise::one_percent().std, seed: 5 }
    }
}

impl NoiseConfig {
    pub fn silent(seed: u64) -> Self {
        Self { std: [0.0; 4], seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("noise std must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Episode length and reference-trajectory generator settings.
///
/// Each segment either steps to a new level and holds it, or ramps to the
/// new level across the whole segment. Level changes are limited to
/// `max_jump` bar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub length: usize,
    pub level_min: f64,
    pub level_max: f64,
    pub segment_min: usize,
    pub segment_max: usize,
    /// Probability that a segment is a ramp rather than a step.
    pub ramp_fraction: f64,
    pub max_jump: f64,
    /// Seconds per step; metadata only.
    pub sample_time: f64,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            length: 625,
            level_min: 3.0,
            level_max: 12.0,
            segment_min: 50,
            segment_max: 150,
            ramp_fraction: 0.4,
            max_jump: 4.0,
            sample_time: 0.08,
            seed: 11,
        }
    }
}

impl EpisodeConfig {
    /// The long held-out trajectory used for policy evaluation.
    pub fn validation() -> Self {
        Self { length: 5000, seed: 90_210, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::Config("episode length must be at least 1".into()));
        }
        if !(self.level_min < self.level_max) || !self.level_min.is_finite() || !self.level_max.is_finite() {
            return Err(Error::Config("reference level range must satisfy min < max".into()));
        }
        if self.segment_min == 0 || self.segment_min > self.segment_max {
            return Err(Error::Config("segment lengths must satisfy 1 <= min <= max".into()));
        }
        if !(0.0..=1.0).contains(&self.ramp_fraction) {
            return Err(Error::Config("ramp_fraction must lie in [0, 1]".into()));
        }
        if !(self.max_jump > 0.0) {
            return Err(Error::Config("max_jump must be positive".into()));
        }
        Ok(())
    }

    /// This config with the seed replaced by one mixed from `episode`.
    pub fn for_episode(&self, episode: u64) -> Self {
        use rand::RngCore;
        Self { seed: rng::derive(self.seed, episode).next_u64(), ..self.clone() }
    }
}

/// Physical ranges mapped onto `[-1, 1]` in the observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationRanges {
    pub imep: [f64; 2],
    pub nox: [f64; 2],
    pub mprr: [f64; 2],
}

impl Default for ObservationRanges {
    fn default() -> Self {
        Self { imep: [0.0, 17.0], nox: [0.0, 500.0], mprr: [0.0, 10.0] }
    }
}

impl ObservationRanges {
    pub fn validate(&self) -> Result<()> {
        if [self.imep, self.nox, self.mprr].iter().any(|r| !(r[0] < r[1])) {
            return Err(Error::Config("observation ranges need lo < hi".into()));
        }
        Ok(())
    }
}

fn level(v: f64, r: [f64; 2]) -> f64 {
    2.0 * (v - r[0]) / (r[1] - r[0]) - 1.0
}

fn span(v: f64, r: [f64; 2]) -> f64 {
    2.0 * v / (r[1] - r[0])
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub reward: RewardConfig,
    pub polytope: SafePolytope,
    pub noise: NoiseConfig,
    pub episode: EpisodeConfig,
    pub observation: ObservationRanges,
    /// Drop the plant hidden state, leaving an 8-element observation.
    pub no_augment: bool,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.polytope.validate()?;
        self.noise.validate()?;
        self.episode.validate()?;
        self.observation.validate()
    }

    pub fn obs_dim(&self) -> usize {
        if self.no_augment {
            OBS_BASE
        } else {
            OBS_FULL
        }
    }
}

/// Exponential bonus for an IMEP tracking error `delta` (bar).
pub fn staging_bonus(delta: f64, cfg: &StagingConfig) -> f64 {
    if !cfg.enabled {
        return 0.0;
    }
    let d = math::abs(delta).max(cfg.delta_floor);
    let exponent = math::floor(cfg.offset - math::log10(d)).min(cfg.exponent_cap);
    cfg.coefficient * math::pow(10.0, exponent)
}

/// Summed normalized L1 excess of `y` outside the polytope.
pub fn constraint_penalty(y: &EngineOutputs, poly: &SafePolytope, scales: &[f64; 4]) -> f64 {
    let a = y.to_array();
    (0..4)
        .map(|c| ((poly.lower[c] - a[c]).max(0.0) + (a[c] - poly.upper[c]).max(0.0)) / scales[c])
        .sum()
}

/// Individual reward terms; `q*`, `r` are weighted but not yet scaled by
/// `alpha`/`beta`, `w` is the raw polytope penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub r: f64,
    pub staging: f64,
    pub w: f64,
    pub total: f64,
}

/// Per-step reward for outputs `y`, IMEP target `reference` and plant-space
/// action `u`.
pub fn compute_reward(
    y: &EngineOutputs,
    reference: f64,
    u: &EngineInputs,
    cfg: &RewardConfig,
    poly: &SafePolytope,
) -> RewardBreakdown {
    let s = &cfg.scales;
    let sq = |v: f64| v * v;
    let q1 = cfg.q[0] * sq((reference - y.imep) / s[IMEP]);
    let q2 = cfg.q[1] * sq(y.mprr / s[MPRR]);
    let q3 = cfg.q[2] * sq(y.nox / s[NOX]) + cfg.q[3] * sq(y.soot / s[SOOT]);
    let r = u.to_array().iter().zip(&cfg.r).map(|(a, w)| w * a * a).sum::<f64>();
    let w = constraint_penalty(y, poly, s);
    let staging = staging_bonus(reference - y.imep, &cfg.staging);
    let total = -(cfg.alpha * (q1 + q2 + q3) + cfg.beta * r + cfg.zeta * w) + staging;
    RewardBreakdown { q1, q2, q3, r, staging, w, total }
}

/// Adds one Gaussian draw per channel.
pub fn augment(y: &EngineOutputs, noise: &NoiseConfig, rng: &mut Rng) -> EngineOutputs {
    let mut a = y.to_array();
    for (v, s) in a.iter_mut().zip(noise.std) {
        if s > 0.0 {
            *v += s * rng::normal(rng);
        }
    }
    EngineOutputs::from_array(a)
}

/// IMEP reference trajectory (bar) built from holds, steps and ramps.
pub fn generate_reference(cfg: &EpisodeConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut rng = rng::seeded(cfg.seed);
    let (lo, hi) = (cfg.level_min, cfg.level_max);
    let mut current = rng::uniform(&mut rng, lo, hi);
    let mut out = Vec::with_capacity(cfg.length);
    while out.len() < cfg.length {
        let len = rng::int_inclusive(&mut rng, cfg.segment_min, cfg.segment_max);
        let next_lo = (current - cfg.max_jump).max(lo);
        let next_hi = (current + cfg.max_jump).min(hi);
        let next = rng::uniform(&mut rng, next_lo, next_hi);
        let ramp = rng::uniform(&mut rng, 0.0, 1.0) < cfg.ramp_fraction;
        for k in 1..=len {
            let v = if ramp { current + (next - current) * k as f64 / len as f64 } else { next };
            out.push(v.clamp(lo, hi));
        }
        current = next;
    }
    out.truncate(cfg.length);
    Ok(out)
}

/// Policy-space action in `[-1, 1]`, `[doi_fuel, p2m, soi_fuel, doi_h2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action(pub [f64; ACTION_DIM]);

impl Action {
    pub fn to_plant(&self) -> EngineInputs {
        EngineInputs::new(
            (self.0[0] + 1.0) / 2.0,
            (self.0[1] + 1.0) / 2.0,
            (self.0[2] + 1.0) / 2.0,
            (self.0[3] + 1.0) / 2.0,
        )
    }

    pub fn from_plant(u: &EngineInputs) -> Self {
        Self(u.clamped().to_array().map(|v| 2.0 * v - 1.0))
    }

    pub fn from_slice(a: &[f64]) -> Result<Self> {
        <[f64; ACTION_DIM]>::try_from(a)
            .map(Self)
            .map_err(|_| Error::Shape(alloc::format!("action needs {ACTION_DIM} values, got {}", a.len())))
    }
}

/// Normalized observation; 16 values with the plant hidden state, 8 without.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Measurement history an observation is built from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservationContext {
    /// Latest measured outputs.
    pub y: EngineOutputs,
    /// Measured outputs one step earlier.
    pub y_before: EngineOutputs,
    /// Target for the upcoming step.
    pub reference: f64,
    /// Target of the step that produced `y`.
    pub reference_before: f64,
}

impl ObservationContext {
    /// History before any cycle has run: idle outputs, flat reference.
    pub fn initial(reference: f64) -> Self {
        let idle = idle_outputs();
        Self { y: idle, y_before: idle, reference, reference_before: reference }
    }
}

/// Outputs of the engine at rest with all actuators closed.
pub fn idle_outputs() -> EngineOutputs {
    EngineOutputs { imep: IDLE_IMEP, nox: 0.0, soot: 0.0, mprr: 1.0 }
}

/// Assembles the observation: last IMEP, NOx, MPRR; their IMEP and NOx
/// deltas; current and previous reference; previous tracking error; then
/// `hidden` if given.
pub fn assemble_observation(ctx: &ObservationContext, hidden: Option<&[f64]>, ranges: &ObservationRanges) -> Observation {
    let ObservationContext { y, y_before, reference, reference_before } = *ctx;
    let mut o = Vec::with_capacity(OBS_BASE + hidden.map_or(0, <[f64]>::len));
    o.extend_from_slice(&[
        level(y.imep, ranges.imep),
        level(y.nox, ranges.nox),
        level(y.mprr, ranges.mprr),
        span(y.imep - y_before.imep, ranges.imep),
        span(y.nox - y_before.nox, ranges.nox),
        level(reference, ranges.imep),
        level(reference_before, ranges.imep),
        span(reference_before - y.imep, ranges.imep),
    ]);
    if let Some(h) = hidden {
        o.extend_from_slice(h);
    }
    Observation(o)
}

/// Diagnostic data of one environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    /// 1-based step index.
    pub step: usize,
    pub reference: f64,
    pub action: EngineInputs,
    pub predicted: EngineOutputs,
    pub measured: EngineOutputs,
    pub breakdown: RewardBreakdown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One line of an exported trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    #[serde(rename = "ref")]
    pub reference: f64,
    pub imep: f64,
    pub nox: f64,
    pub soot: f64,
    pub mprr: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub reward: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub r: f64,
    pub staging: f64,
    #[serde(rename = "W")]
    pub w: f64,
}

impl From<&StepInfo> for TraceRow {
    fn from(i: &StepInfo) -> Self {
        let [a1, a2, a3, a4] = i.action.to_array();
        let b = i.breakdown;
        Self {
            step: i.step,
            reference: i.reference,
            imep: i.measured.imep,
            nox: i.measured.nox,
            soot: i.measured.soot,
            mprr: i.measured.mprr,
            a1,
            a2,
            a3,
            a4,
            reward: b.total,
            q1: b.q1,
            q2: b.q2,
            q3: b.q3,
            r: b.r,
            staging: b.staging,
            w: b.w,
        }
    }
}

/// Environment stepping the learned plant in free-running mode, with the
/// measured IMEP fed back as the model's previous-load input.
#[derive(Clone, Debug)]
pub struct PlantEnv {
    model: Arc<PlantModel>,
    cfg: EnvConfig,
    reference: Vec<f64>,
    t: usize,
    hidden: Vec<f64>,
    ctx: ObservationContext,
    rng: Rng,
    ready: bool,
}

impl PlantEnv {
    pub fn new(model: Arc<PlantModel>, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let hidden = model.initial_hidden();
        let rng = rng::seeded(cfg.noise.seed);
        Ok(Self { model, cfg, reference: Vec::new(), t: 0, hidden, ctx: ObservationContext::initial(0.0), rng, ready: false })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Arc<PlantModel> {
        &self.model
    }

    pub fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    /// Steps taken since the last reset.
    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn episode_len(&self) -> usize {
        self.reference.len()
    }

    /// Starts training episode `episode`; its reference and noise draws
    /// depend only on the configured seeds and this index.
    pub fn reset(&mut self, episode: u64) -> Observation {
        let ep = self.cfg.episode.for_episode(episode);
        let reference = generate_reference(&ep).expect("episode config validated at construction");
        self.start(reference, rng::derive(self.cfg.noise.seed, episode))
    }

    /// Starts an episode on a caller-supplied reference.
    pub fn reset_with_reference(&mut self, reference: Vec<f64>, noise_stream: u64) -> Result<Observation> {
        if reference.is_empty() || reference.iter().any(|r| !r.is_finite()) {
            return Err(Error::Config("reference must be non-empty and finite".into()));
        }
        Ok(self.start(reference, rng::derive(self.cfg.noise.seed, noise_stream)))
    }

    fn start(&mut self, reference: Vec<f64>, rng: Rng) -> Observation {
        self.ctx = ObservationContext::initial(reference[0]);
        self.reference = reference;
        self.rng = rng;
        self.t = 0;
        self.hidden = self.model.initial_hidden();
        self.ready = true;
        self.observation()
    }

    pub fn observation(&self) -> Observation {
        let h = (!self.cfg.no_augment).then_some(self.hidden.as_slice());
        assemble_observation(&self.ctx, h, &self.cfg.observation)
    }

    pub fn done(&self) -> bool {
        self.ready && self.t >= self.reference.len()
    }

    pub fn step(&mut self, action: &Action) -> Result<Transition> {
        if !self.ready {
            return Err(Error::Contract("environment stepped before reset"));
        }
        if self.done() {
            return Err(Error::Contract("environment stepped after episode end"));
        }
        if action.0.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action"));
        }
        let u = action.to_plant();
        let a = u.to_array();
        let features = [a[0], a[1], a[2], a[3], self.ctx.y.imep];
        let (y_hat, h) = self.model.step(&self.hidden, &features)?;
        self.hidden = h;
        let predicted = EngineOutputs::from_array(y_hat);
        let measured = augment(&predicted, &self.cfg.noise, &mut self.rng);
        let reference = self.reference[self.t];
        let breakdown = compute_reward(&measured, reference, &u, &self.cfg.reward, &self.cfg.polytope);
        self.t += 1;
        let done = self.t == self.reference.len();
        let upcoming = self.reference[self.t.min(self.reference.len() - 1)];
        self.ctx = ObservationContext { y: measured, y_before: self.ctx.y, reference: upcoming, reference_before: reference };
        let info = StepInfo { step: self.t, reference, action: u, predicted, measured, breakdown };
        Ok(Transition { observation: self.observation(), reward: breakdown.total, done, info })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{collect_dataset, MeasurementNoise, PrbsConfig, SplitFractions};
    use proptest::prelude::*;

    fn no_staging() -> RewardConfig {
        RewardConfig { staging: StagingConfig { enabled: false, ..Default::default() }, ..Default::default() }
    }

    #[test]
    fn staging_examples() {
        let c = StagingConfig::default();
        assert_eq!(staging_bonus(1.0, &c), 250.0);
        assert_eq!(staging_bonus(0.1, &c), 2500.0);
        assert_eq!(staging_bonus(0.0, &c), 0.0025 * 1e8);
        assert_eq!(staging_bonus(-1.0, &c), 250.0);
        assert_eq!(staging_bonus(0.5, &StagingConfig { enabled: false, ..c }), 0.0);
    }

    #[test]
    fn staging_is_monotone_in_error() {
        let c = StagingConfig::default();
        let mut prev = f64::INFINITY;
        for k in 0..400 {
            let b = staging_bonus(k as f64 * 0.03, &c);
            assert!(b <= prev);
            prev = b;
        }
    }

    #[test]
    fn perfect_tracking_earns_only_the_bonus() {
        let y = EngineOutputs { imep: 6.0, nox: 0.0, soot: 0.0, mprr: 0.0 };
        let u = EngineInputs::default();
        let b = compute_reward(&y, 6.0, &u, &RewardConfig::default(), &SafePolytope::default());
        assert_eq!(b.total, 0.0025 * 1e8);
        let b = compute_reward(&y, 6.0, &u, &no_staging(), &SafePolytope::default());
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn single_tracking_term() {
        let cfg = RewardConfig { q: [1.0, 0.0, 0.0, 0.0], r: [0.0; 4], zeta: 0.0, ..no_staging() };
        let y = EngineOutputs { imep: 5.0, nox: 100.0, soot: 3.0, mprr: 2.0 };
        let b = compute_reward(&y, 5.0 + 17.0, &EngineInputs::new(1.0, 1.0, 1.0, 1.0), &cfg, &SafePolytope::default());
        assert_eq!(b.total, -1.0);
    }

    #[test]
    fn penalty_examples() {
        let p = SafePolytope::default();
        let s = RewardConfig::default().scales;
        let inside = EngineOutputs { imep: 6.0, nox: 200.0, soot: 10.0, mprr: 3.0 };
        assert_eq!(constraint_penalty(&inside, &p, &s), 0.0);
        let y = EngineOutputs { mprr: 7.0 + 10.0, ..inside };
        assert_eq!(constraint_penalty(&y, &p, &s), 1.0);
        let y = EngineOutputs { imep: 0.0, nox: 450.0, ..inside };
        let expect = 0.5 / 17.0 + 50.0 / 500.0;
        assert!((constraint_penalty(&y, &p, &s) - expect).abs() < 1e-15);
        assert_eq!(p.violations(&y), [true, true, false, false]);
    }

    #[test]
    fn config_validation() {
        assert!(EnvConfig::default().validate().is_ok());
        let mut c = EnvConfig::default();
        c.reward.q[2] = -1.0;
        assert!(c.validate().is_err());
        let mut c = EnvConfig::default();
        c.polytope.lower[3] = 8.0;
        assert!(c.validate().is_err());
        let mut c = EnvConfig::default();
        c.episode.length = 0;
        assert!(c.validate().is_err());
        let mut c = EnvConfig::default();
        c.reward.staging.delta_floor = 0.0;
        assert!(c.validate().is_err());
        let mut c = EnvConfig::default();
        c.noise.std[0] = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn silent_noise_is_identity() {
        let y = EngineOutputs { imep: 4.0, nox: 12.0, soot: 1.0, mprr: 2.0 };
        let mut rng = rng::seeded(1);
        assert_eq!(augment(&y, &NoiseConfig::silent(0), &mut rng), y);
    }

    #[test]
    fn noise_is_reproducible() {
        let y = EngineOutputs::default();
        let n = NoiseConfig::default();
        let (mut a, mut b) = (rng::seeded(3), rng::seeded(3));
        for _ in 0..50 {
            assert_eq!(augment(&y, &n, &mut a), augment(&y, &n, &mut b));
        }
    }

    #[test]
    fn noise_sample_std() {
        let n = NoiseConfig { std: [0.0, 0.0, 0.05, 0.0], seed: 0 };
        let mut rng = rng::seeded(21);
        let draws: Vec<f64> = (0..10_000).map(|_| augment(&EngineOutputs::default(), &n, &mut rng).soot).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((math::sqrt(var) - 0.05).abs() < 0.002, "{}", math::sqrt(var));
    }

    #[test]
    fn reference_properties() {
        let cfg = EpisodeConfig::default();
        let a = generate_reference(&cfg).unwrap();
        assert_eq!(a, generate_reference(&cfg).unwrap());
        assert_eq!(a.len(), 625);
        assert!(a.iter().all(|v| (3.0..=12.0).contains(v)));
        assert_ne!(a, generate_reference(&cfg.for_episode(1)).unwrap());
        let v = generate_reference(&EpisodeConfig::validation()).unwrap();
        assert_eq!(v.len(), 5000);
        assert!(v.iter().all(|x| (3.0..=12.0).contains(x)));
    }

    #[test]
    fn action_mapping() {
        let a = Action([-1.0, 0.0, 1.0, 0.5]);
        assert_eq!(a.to_plant().to_array(), [0.0, 0.5, 1.0, 0.75]);
        assert_eq!(Action::from_plant(&a.to_plant()), a);
        assert_eq!(Action([-3.0, 2.0, 0.0, 0.0]).to_plant().to_array(), [0.0, 1.0, 0.5, 0.5]);
        assert!(Action::from_slice(&[0.0; 3]).is_err());
    }

    #[test]
    fn observation_layout() {
        let ctx = ObservationContext {
            y: EngineOutputs { imep: 8.5, nox: 500.0, soot: 9.0, mprr: 0.0 },
            y_before: EngineOutputs { imep: 0.0, nox: 250.0, soot: 0.0, mprr: 0.0 },
            reference: 17.0,
            reference_before: 0.0,
        };
        let r = ObservationRanges::default();
        let h = [0.5; 8];
        let o = assemble_observation(&ctx, Some(&h), &r);
        assert_eq!(o.len(), OBS_FULL);
        assert_eq!(&o.0[..8], &[0.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0]);
        assert_eq!(&o.0[8..], &h);
        assert_eq!(assemble_observation(&ctx, None, &r).0, o.0[..8].to_vec());
    }

    fn small_model() -> Arc<PlantModel> {
        let prbs = PrbsConfig::default();
        let data = collect_dataset(400, &prbs, SplitFractions::default(), &MeasurementNoise::NONE).unwrap();
        Arc::new(PlantModel::for_dataset(&data, 3).unwrap())
    }

    #[test]
    fn episode_runs_exactly_625_steps() {
        let mut env = PlantEnv::new(small_model(), EnvConfig::default()).unwrap();
        assert!(env.step(&Action([0.0; 4])).is_err());
        let o = env.reset(0);
        assert_eq!(o.len(), 16);
        for k in 1..=625 {
            let t = env.step(&Action([0.1, -0.2, 0.3, -0.4])).unwrap();
            assert_eq!(t.observation.len(), 16);
            assert!(t.observation.0.iter().all(|v| v.is_finite()));
            assert_eq!(t.done, k == 625);
            assert_eq!(t.info.step, k);
        }
        assert!(matches!(env.step(&Action([0.0; 4])), Err(Error::Contract(_))));
        env.reset(1);
        assert!(env.step(&Action([0.0; 4])).is_ok());
    }

    #[test]
    fn truncated_observation() {
        let cfg = EnvConfig { no_augment: true, ..Default::default() };
        let mut env = PlantEnv::new(small_model(), cfg).unwrap();
        assert_eq!(env.obs_dim(), 8);
        assert_eq!(env.reset(0).len(), 8);
        assert_eq!(env.step(&Action([0.0; 4])).unwrap().observation.len(), 8);
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let m = small_model();
        let mut a = PlantEnv::new(m.clone(), EnvConfig::default()).unwrap();
        let mut b = PlantEnv::new(m, EnvConfig::default()).unwrap();
        assert_eq!(a.reset(4), b.reset(4));
        let mut rng = rng::seeded(8);
        for _ in 0..200 {
            let act = Action(core::array::from_fn(|_| rng::uniform(&mut rng, -1.0, 1.0)));
            assert_eq!(a.step(&act).unwrap(), b.step(&act).unwrap());
        }
    }

    #[test]
    fn observation_follows_history() {
        let m = small_model();
        let mut env = PlantEnv::new(m.clone(), EnvConfig::default()).unwrap();
        let first = env.reset(2);
        let reference = env.reference().to_vec();
        let ranges = ObservationRanges::default();
        assert_eq!(first, assemble_observation(&ObservationContext::initial(reference[0]), Some(&[0.0; 8]), &ranges));
        let mut h = m.initial_hidden();
        let mut prev = idle_outputs();
        for k in 0..30 {
            let act = Action([0.2, 0.0, 0.4, -0.6]);
            let t = env.step(&act).unwrap();
            let a = act.to_plant().to_array();
            let (y, h2) = m.step(&h, &[a[0], a[1], a[2], a[3], prev.imep]).unwrap();
            h = h2;
            assert_eq!(t.info.predicted.to_array(), y);
            let ctx = ObservationContext {
                y: t.info.measured,
                y_before: prev,
                reference: reference[k + 1],
                reference_before: reference[k],
            };
            assert_eq!(t.observation, assemble_observation(&ctx, Some(&h), &ranges));
            prev = t.info.measured;
        }
    }

    #[test]
    fn reward_uses_measured_outputs() {
        let mut env = PlantEnv::new(small_model(), EnvConfig::default()).unwrap();
        env.reset(0);
        let t = env.step(&Action([0.0; 4])).unwrap();
        let cfg = EnvConfig::default();
        let b = compute_reward(&t.info.measured, t.info.reference, &t.info.action, &cfg.reward, &cfg.polytope);
        assert_eq!(b, t.info.breakdown);
        assert_ne!(t.info.measured, t.info.predicted);
        let row = TraceRow::from(&t.info);
        assert_eq!(row.reward, t.reward);
        assert_eq!(row.a2, 0.5);
    }

    fn outputs() -> impl Strategy<Value = EngineOutputs> {
        (-2.0..20.0f64, -50.0..600.0f64, -5.0..50.0f64, -2.0..12.0f64)
            .prop_map(|(imep, nox, soot, mprr)| EngineOutputs { imep, nox, soot, mprr })
    }

    proptest! {
        #[test]
        fn penalties_never_reward(y in outputs(), reference in 3.0..12.0f64, u in prop::array::uniform4(0.0..1.0f64)) {
            let b = compute_reward(&y, reference, &EngineInputs::from_array(u), &no_staging(), &SafePolytope::default());
            prop_assert!(b.total <= 0.0);
            let zero = b.q1 == 0.0 && b.q2 == 0.0 && b.q3 == 0.0 && b.r == 0.0 && b.w == 0.0;
            prop_assert_eq!(b.total == 0.0, zero);
        }

        #[test]
        fn closer_tracking_never_hurts(y in outputs(), reference in 3.0..12.0f64, shrink in 0.0..1.0f64) {
            let cfg = RewardConfig::default();
            let p = SafePolytope { lower: [-1e9; 4], upper: [1e9; 4] };
            let u = EngineInputs::default();
            let far = compute_reward(&y, reference, &u, &cfg, &p).total;
            let closer = EngineOutputs { imep: reference - (reference - y.imep) * shrink, ..y };
            prop_assert!(compute_reward(&closer, reference, &u, &cfg, &p).total >= far);
        }

        #[test]
        fn penalty_is_l1(y in outputs(), k in 0.0..3.0f64) {
            let p = SafePolytope::default();
            let s = RewardConfig::default().scales;
            let base = constraint_penalty(&y, &p, &s);
            prop_assert!(base >= 0.0);
            let above = EngineOutputs { mprr: p.upper[3] + k, ..y };
            let at = EngineOutputs { mprr: p.upper[3], ..y };
            let diff = constraint_penalty(&above, &p, &s) - constraint_penalty(&at, &p, &s);
            prop_assert!((diff - k / s[3]).abs() < 1e-12);
        }
    }
}
