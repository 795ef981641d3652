//! Transport-free control loop: packet in, packet out.

use alloc::sync::Arc;
use alloc::vec::Vec;

use super::cascade::{cascade_select, CascadeConfig};
use super::wire::{ActionPacket, StatePacket, Status, WireError};
use crate::agents::Policy;
use crate::engine::{EngineInputs, EngineOutputs};
use crate::env::{assemble_observation, ObservationContext, ObservationRanges, OBS_BASE, OBS_FULL};
use crate::error::{Error, Result};
use crate::sysid::PlantModel;

/// Runs the plant model alongside the engine to supply its hidden state.
#[derive(Clone, Debug)]
pub struct Observer {
    model: Arc<PlantModel>,
    hidden: Vec<f64>,
    steps: u64,
}

impl Observer {
    pub fn new(model: Arc<PlantModel>) -> Self {
        let hidden = model.initial_hidden();
        Self { model, hidden, steps: 0 }
    }

    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn reset(&mut self) {
        self.hidden = self.model.initial_hidden();
        self.steps = 0;
    }

    /// One model step on the applied action and the IMEP measured before it.
    pub fn advance(&mut self, applied: &EngineInputs, imep_before: f64) -> Result<&[f64]> {
        let a = applied.to_array();
        let (_, h) = self.model.step(&self.hidden, &[a[0], a[1], a[2], a[3], imep_before])?;
        self.hidden = h;
        self.steps += 1;
        Ok(&self.hidden)
    }
}

/// Why a packet got no reply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Drop {
    Malformed(WireError),
    /// `seq` not above the last accepted one.
    Stale { seq: u32, last: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reply {
    Action(ActionPacket),
    Dropped(Drop),
}

/// Decodes state packets, keeps the observation history and observer,
/// selects a policy through the cascade and answers with plant-space
/// actions rounded to the wire's 32-bit floats.
#[derive(Clone, Debug)]
pub struct Controller {
    policies: Vec<(u8, Policy)>,
    cascade: CascadeConfig,
    ranges: ObservationRanges,
    observer: Observer,
    augment: bool,
    ctx: Option<ObservationContext>,
    last_action: Option<[f32; 4]>,
    last_seq: Option<u32>,
    current: Option<u8>,
    hold_pending: bool,
    stale: u64,
    malformed: u64,
    out_of_range: u64,
}

impl Controller {
    pub fn new(policies: Vec<(u8, Policy)>, cascade: CascadeConfig, observer_model: Arc<PlantModel>, ranges: ObservationRanges) -> Result<Self> {
        cascade.validate()?;
        let Some((_, first)) = policies.first() else {
            return Err(Error::Config("controller needs at least one policy".into()));
        };
        let dim = first.obs_dim();
        if dim != OBS_FULL && dim != OBS_BASE {
            return Err(Error::Shape(alloc::format!("policy observation size {dim} is neither {OBS_BASE} nor {OBS_FULL}")));
        }
        for (id, p) in &policies {
            p.validate()?;
            if p.obs_dim() != dim {
                return Err(Error::Config("all cascade policies must share one observation size".into()));
            }
            if !cascade.bins.iter().any(|b| b.policy_id == *id) {
                return Err(Error::Config(alloc::format!("policy id {id} is not in the cascade table")));
            }
        }
        for b in &cascade.bins {
            if !policies.iter().any(|(id, _)| *id == b.policy_id) {
                return Err(Error::Config(alloc::format!("cascade bin refers to missing policy id {}", b.policy_id)));
            }
        }
        Ok(Self {
            policies,
            cascade,
            ranges,
            observer: Observer::new(observer_model),
            augment: dim == OBS_FULL,
            ctx: None,
            last_action: None,
            last_seq: None,
            current: None,
            hold_pending: false,
            stale: 0,
            malformed: 0,
            out_of_range: 0,
        })
    }

    /// Stale plus malformed packets so far.
    pub fn drops(&self) -> u64 {
        self.stale + self.malformed
    }

    pub fn malformed(&self) -> u64 {
        self.malformed
    }

    /// References that fell outside every cascade bin.
    pub fn out_of_range(&self) -> u64 {
        self.out_of_range
    }

    pub fn observer(&self) -> &Observer {
        &self.observer
    }

    pub fn current_policy(&self) -> Option<u8> {
        self.current
    }

    /// Forgets all history, as at start-up.
    pub fn reset(&mut self) {
        self.observer.reset();
        self.ctx = None;
        self.last_action = None;
        self.last_seq = None;
        self.current = None;
        self.hold_pending = false;
    }

    /// Called when the deadline passes without a packet: the engine keeps
    /// the last action, and the next reply repeats it with status 1.
    pub fn deadline_missed(&mut self) {
        if self.last_action.is_some() {
            self.hold_pending = true;
        }
    }

    pub fn handle_bytes(&mut self, buf: &[u8]) -> Reply {
        match StatePacket::decode(buf) {
            Ok(p) => self.handle(&p),
            Err(e) => {
                self.malformed += 1;
                Reply::Dropped(Drop::Malformed(e))
            }
        }
    }

    pub fn handle(&mut self, pkt: &StatePacket) -> Reply {
        if let Some(last) = self.last_seq {
            if pkt.seq <= last {
                self.stale += 1;
                return Reply::Dropped(Drop::Stale { seq: pkt.seq, last });
            }
        }
        self.last_seq = Some(pkt.seq);
        let y = EngineOutputs { imep: pkt.imep as f64, nox: pkt.nox as f64, soot: pkt.soot as f64, mprr: pkt.mprr as f64 };
        let reference = pkt.reference as f64;
        let (actions, policy_id, status) = match self.step(y, reference) {
            Ok(r) => r,
            Err(_) => (self.last_action.unwrap_or([0.0; 4]), self.current.unwrap_or(0), Status::Fault),
        };
        self.last_action = Some(actions);
        Reply::Action(ActionPacket { seq: pkt.seq, actions, policy_id, status })
    }

    fn step(&mut self, y: EngineOutputs, reference: f64) -> Result<([f32; 4], u8, Status)> {
        if y.to_array().iter().any(|v| !v.is_finite()) || !reference.is_finite() {
            return Err(Error::NonFinite("state packet"));
        }
        self.ctx = Some(match (self.ctx, self.last_action) {
            (Some(prev), Some(applied)) => {
                let u = EngineInputs::from_array(applied.map(f64::from));
                self.observer.advance(&u, prev.y.imep)?;
                ObservationContext { y, y_before: prev.y, reference, reference_before: prev.reference }
            }
            _ => ObservationContext { y, y_before: y, reference, reference_before: reference },
        });
        let sel = cascade_select(reference, &self.cascade, self.current);
        self.out_of_range += sel.out_of_range as u64;
        self.current = Some(sel.policy_id);
        if core::mem::take(&mut self.hold_pending) {
            if let Some(a) = self.last_action {
                return Ok((a, sel.policy_id, Status::HeldLastAction));
            }
        }
        let ctx = self.ctx.as_ref().expect("set above");
        let h = self.augment.then(|| self.observer.hidden());
        let obs = assemble_observation(ctx, h, &self.ranges);
        let policy = &self.policies.iter().find(|(id, _)| *id == sel.policy_id).expect("validated ids").1;
        let u = policy.act(obs.as_slice())?.to_plant();
        Ok((u.to_array().map(|v| v as f32), sel.policy_id, Status::Ok))
    }
}
