//! Fixed-capacity experience replay.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// One joint step of a channel group: per agent observation, action, reward
/// and next observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<Vec<f64>>,
}

impl Transition {
    pub fn agents(&self) -> usize {
        self.actions.len()
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.actions.len();
        self.obs.len() == n && self.rewards.len() == n && self.next_obs.len() == n
    }
}

/// Ring buffer that overwrites the oldest transition once full.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { items: Vec::with_capacity(capacity.min(1 << 16)), capacity, next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        debug_assert!(t.is_consistent());
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `size` distinct indices drawn uniformly, or `None` when the buffer
    /// holds fewer items.
    pub fn sample_indices<R: Rng>(&self, size: usize, rng: &mut R) -> Option<Vec<usize>> {
        (size <= self.items.len()).then(|| rand::seq::index::sample(rng, self.items.len(), size).into_vec())
    }

    pub fn sample<R: Rng>(&self, size: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        self.sample_indices(size, rng).map(|idx| idx.into_iter().map(|i| &self.items[i]).collect())
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }
}
