use alloc::vec::Vec;

use crate::env::ACTION_DIM;
use crate::error::{shape_err, Result};
use crate::rng::{self, Rng};

/// Fixed-capacity ring of `(o, a, r, o', done)` transitions stored flat.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    done: Vec<bool>,
    /// Slot the next insert overwrites once full.
    head: usize,
    len: usize,
}

/// Borrowed view of one stored transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoredTransition<'a> {
    pub obs: &'a [f64],
    pub action: &'a [f64],
    pub reward: f64,
    pub next_obs: &'a [f64],
    pub done: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize) -> Self {
        assert!(capacity > 0 && obs_dim > 0, "replay buffer needs positive capacity and width");
        Self {
            capacity,
            obs_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            done: Vec::new(),
            head: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn push(&mut self, obs: &[f64], action: &[f64], reward: f64, next_obs: &[f64], done: bool) -> Result<()> {
        if obs.len() != self.obs_dim || next_obs.len() != self.obs_dim || action.len() != ACTION_DIM {
            return Err(shape_err!(
                "transition widths ({}, {}, {}) do not match buffer ({}, {ACTION_DIM})",
                obs.len(),
                action.len(),
                next_obs.len(),
                self.obs_dim
            ));
        }
        let n = self.obs_dim;
        if self.len < self.capacity {
            self.obs.extend_from_slice(obs);
            self.actions.extend_from_slice(action);
            self.rewards.push(reward);
            self.next_obs.extend_from_slice(next_obs);
            self.done.push(done);
            self.len += 1;
        } else {
            let i = self.head;
            self.obs[i * n..(i + 1) * n].copy_from_slice(obs);
            self.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM].copy_from_slice(action);
            self.rewards[i] = reward;
            self.next_obs[i * n..(i + 1) * n].copy_from_slice(next_obs);
            self.done[i] = done;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    /// Transition in storage slot `i`.
    pub fn get(&self, i: usize) -> StoredTransition<'_> {
        let n = self.obs_dim;
        StoredTransition {
            obs: &self.obs[i * n..(i + 1) * n],
            action: &self.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM],
            reward: self.rewards[i],
            next_obs: &self.next_obs[i * n..(i + 1) * n],
            done: self.done[i],
        }
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = StoredTransition<'_>> {
        let start = if self.len < self.capacity { 0 } else { self.head };
        (0..self.len).map(move |k| self.get((start + k) % self.capacity))
    }

    /// `batch` slot indices drawn uniformly with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut Rng) -> Vec<usize> {
        assert!(self.len > 0, "sampling from an empty replay buffer");
        (0..batch).map(|_| rng::int_inclusive(rng, 0, self.len - 1)).collect()
    }

    /// Gathers the sampled transitions into flat row-major arrays.
    pub fn gather(&self, idx: &[usize], out: &mut Batch) {
        let n = self.obs_dim;
        out.obs.clear();
        out.actions.clear();
        out.rewards.clear();
        out.next_obs.clear();
        out.done.clear();
        for &i in idx {
            out.obs.extend_from_slice(&self.obs[i * n..(i + 1) * n]);
            out.actions.extend_from_slice(&self.actions[i * ACTION_DIM..(i + 1) * ACTION_DIM]);
            out.rewards.push(self.rewards[i]);
            out.next_obs.extend_from_slice(&self.next_obs[i * n..(i + 1) * n]);
            out.done.push(self.done[i]);
        }
    }
}

/// Minibatch of transitions laid out for batched network passes.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Rows of `a` (width `wa`) and `b` (width `wb`) side by side.
pub(crate) fn concat_rows(a: &[f64], wa: usize, b: &[f64], wb: usize, out: &mut Vec<f64>) {
    let rows = a.len() / wa;
    debug_assert_eq!(b.len(), rows * wb);
    out.clear();
    out.reserve(rows * (wa + wb));
    for r in 0..rows {
        out.extend_from_slice(&a[r * wa..(r + 1) * wa]);
        out.extend_from_slice(&b[r * wb..(r + 1) * wb]);
    }
}
