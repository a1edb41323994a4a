use std::collections::VecDeque;

use rand::Rng;

use crate::simulator::{DialogMode, Observation};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T> {
    pub obs: Observation<T>,
    /// Index into the observation's action mask.
    pub action: usize,
    pub reward: T,
    /// `None` for terminal transitions.
    pub next: Option<Observation<T>>,
    pub done: bool,
    /// Ground-truth dialog mode of the episode.
    pub mode: DialogMode,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<Transition<T>>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition<T>) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition<T>> {
        self.items.iter()
    }

    /// Uniform sample of `min(n, len)` distinct transitions.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<&Transition<T>> {
        let n = n.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}
