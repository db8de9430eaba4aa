//! Uniform ring-buffer replay over window-featurized transitions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One stored step. `obs` and `next_obs` are featurized history
/// windows (zero-padded before episode start); `next_obs_raw` is the
/// featurized raw next observation, kept as the grounded prediction
/// target.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub next_obs_raw: Vec<f64>,
    pub done: bool,
    pub episode: u64,
    /// Monotonic insertion counter, for contiguity checks.
    pub seq: u64,
}

#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            data: Vec::with_capacity(capacity),
            next: 0,
            pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn push(&mut self, mut t: Transition) {
        t.seq = self.pushed;
        self.pushed += 1;
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform indices over written slots only.
    pub fn sample_indices(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        assert!(!self.data.is_empty());
        (0..n).map(|_| rng.gen_range(0..self.data.len())).collect()
    }

    /// Accumulate up to `n` consecutive rewards from `start`, stopping
    /// at episode end or where the ring is no longer contiguous.
    /// Returns (discounted return, index of the last transition used,
    /// number of steps m, whether the window hit a terminal).
    pub fn n_step(&self, start: usize, n: usize, gamma: f64) -> (f64, usize, usize, bool) {
        let mut ret = 0.0;
        let mut idx = start;
        let mut used = 0;
        loop {
            let t = &self.data[idx];
            ret += gamma.powi(used as i32) * t.reward;
            used += 1;
            if t.done || used == n {
                return (ret, idx, used, t.done);
            }
            let next = (idx + 1) % self.data.len().min(self.capacity);
            if next >= self.data.len() {
                return (ret, idx, used, t.done);
            }
            let cur = &self.data[idx];
            let succ = &self.data[next];
            if succ.seq != cur.seq + 1 || succ.episode != cur.episode {
                return (ret, idx, used, cur.done);
            }
            idx = next;
        }
    }
}
