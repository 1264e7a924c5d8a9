use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MarlError;

/// One transition `<s, a, R, s'>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

impl Experience {
    pub fn is_finite(&self) -> bool {
        self.action.is_finite()
            && self.reward.is_finite()
            && self.state.iter().chain(&self.next_state).all(|x| x.is_finite())
    }
}

/// Fixed-capacity ring buffer; the oldest experience is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Experience>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self, MarlError> {
        if capacity == 0 {
            return Err(MarlError::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            items: Vec::with_capacity(capacity.min(4096)),
            capacity,
            next: 0,
        })
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

    pub fn push(&mut self, exp: Experience) -> Result<(), MarlError> {
        if !exp.is_finite() {
            return Err(MarlError::NonFinite("experience".into()));
        }
        if self.items.len() < self.capacity {
            self.items.push(exp);
        } else {
            self.items[self.next] = exp;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Indices of a uniform sample of `min(n, len)` distinct experiences.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>, MarlError> {
        if self.items.is_empty() {
            return Err(MarlError::EmptyBuffer);
        }
        let k = n.min(self.items.len());
        Ok(rand::seq::index::sample(rng, self.items.len(), k).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Experience>, MarlError> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }
}
