//! Load-bin policy selection with hysteresis.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// IMEP reference interval `[lo, hi)` served by one policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeBin {
    pub lo: f64,
    pub hi: f64,
    pub policy_id: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    /// Ordered, contiguous intervals.
    pub bins: Vec<CascadeBin>,
    /// A policy is kept until the reference leaves its interval by more
    /// than this many bar.
    pub hysteresis: f64,
}

impl Default for CascadeConfig {
    /// Two bins split at 7.5 bar.
    fn default() -> Self {
        Self {
            bins: alloc::vec![
                CascadeBin { lo: 0.0, hi: 7.5, policy_id: 0 },
                CascadeBin { lo: 7.5, hi: 17.0, policy_id: 1 },
            ],
            hysteresis: 0.5,
        }
    }
}

impl CascadeConfig {
    /// A single policy covering `[lo, hi)`.
    pub fn single(policy_id: u8, lo: f64, hi: f64) -> Self {
        Self { bins: alloc::vec![CascadeBin { lo, hi, policy_id }], hysteresis: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins.is_empty() {
            return Err(Error::Config("cascade needs at least one bin".into()));
        }
        if !(self.hysteresis >= 0.0) || !self.hysteresis.is_finite() {
            return Err(Error::Config("cascade hysteresis must be finite and >= 0".into()));
        }
        if self.bins.iter().any(|b| !(b.lo < b.hi) || !b.lo.is_finite() || !b.hi.is_finite()) {
            return Err(Error::Config("every cascade bin needs finite lo < hi".into()));
        }
        if self.bins.windows(2).any(|w| w[0].hi != w[1].lo) {
            return Err(Error::Config("cascade bins must be ordered and contiguous".into()));
        }
        for (i, b) in self.bins.iter().enumerate() {
            if self.bins[..i].iter().any(|o| o.policy_id == b.policy_id) {
                return Err(Error::Config(alloc::format!("policy id {} used by two bins", b.policy_id)));
            }
        }
        Ok(())
    }

    fn bin_of(&self, policy_id: u8) -> Option<&CascadeBin> {
        self.bins.iter().find(|b| b.policy_id == policy_id)
    }
}

/// Outcome of one selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    pub policy_id: u8,
    /// The reference lay outside every bin and the nearest one was used.
    pub out_of_range: bool,
}

/// Picks the policy for `reference`, staying with `current` while the
/// reference is within its interval widened by the hysteresis.
pub fn cascade_select(reference: f64, cfg: &CascadeConfig, current: Option<u8>) -> Selection {
    let h = cfg.hysteresis;
    if let Some(bin) = current.and_then(|id| cfg.bin_of(id)) {
        if reference >= bin.lo - h && reference <= bin.hi + h {
            return Selection { policy_id: bin.policy_id, out_of_range: false };
        }
    }
    let last = cfg.bins.len() - 1;
    if let Some(b) = cfg.bins.iter().enumerate().find(|(i, b)| reference >= b.lo && (reference < b.hi || (*i == last && reference <= b.hi))) {
        return Selection { policy_id: b.1.policy_id, out_of_range: false };
    }
    let first = &cfg.bins[0];
    let nearest = if reference < first.lo { first } else { &cfg.bins[last] };
    Selection { policy_id: nearest.policy_id, out_of_range: true }
}
