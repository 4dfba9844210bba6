//! Three-compartment replay memory.
//!
//! Evolution Strategies trajectories are routed whole into a "good" or "bad"
//! compartment depending on how their fitness compares with the best episode
//! seen so far. TD3's exploratory transitions go to a separate "noisy"
//! compartment. Training batches are drawn from all three under a fixed ratio.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Trajectory;
use crate::error::{Error, Result};

/// Paper-scale per-compartment capacity.
pub const DEFAULT_CAPACITY: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// True only for genuine terminal states; time-limit cut-offs stay false.
    pub terminated: bool,
}

/// Bounded FIFO store; the oldest entry is evicted once full.
#[derive(Debug, Clone)]
pub struct RingBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
}

impl RingBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("capacity", "must be positive"));
        }
        Ok(Self {
            capacity,
            storage: VecDeque::new(),
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.storage.get(i)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &Transition {
        &self.storage[rng.random_range(0..self.storage.len())]
    }
}

/// Fractions of each batch drawn from the good, bad and noisy compartments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRatio {
    pub good: f64,
    pub bad: f64,
    pub noisy: f64,
}

impl SampleRatio {
    pub const PAPER: SampleRatio = SampleRatio {
        good: 0.5,
        bad: 0.2,
        noisy: 0.3,
    };
    /// Everything from the noisy compartment.
    pub const NOISY_ONLY: SampleRatio = SampleRatio {
        good: 0.0,
        bad: 0.0,
        noisy: 1.0,
    };

    pub fn new(good: f64, bad: f64, noisy: f64) -> Result<Self> {
        let r = Self { good, bad, noisy };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("good", self.good), ("bad", self.bad), ("noisy", self.noisy)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(
                    format!("ratio.{name}"),
                    format!("must be a non-negative number, got {v}"),
                ));
            }
        }
        let sum = self.good + self.bad + self.noisy;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::config("ratio", format!("must sum to 1, sums to {sum}")));
        }
        Ok(())
    }

    /// Per-compartment counts for one batch: `round_half_up(good * B)`,
    /// `round_half_up(bad * B)`, and the remainder for noisy.
    pub fn counts(&self, batch_size: usize) -> [usize; 3] {
        let round = |share: f64| (share * batch_size as f64 + 0.5).floor() as usize;
        let good = round(self.good).min(batch_size);
        let bad = round(self.bad).min(batch_size - good);
        [good, bad, batch_size - good - bad]
    }
}

impl Default for SampleRatio {
    fn default() -> Self {
        Self::PAPER
    }
}

/// How a trajectory's fitness is compared against the running best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Good iff `F > good_fraction * T`. For negative `T` this is stricter
    /// than beating the best.
    #[default]
    Literal,
    /// Good iff `F > T - (1 - good_fraction) * |T|`, which behaves the same
    /// for positive and negative best scores.
    Offset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTracker {
    threshold: f64,
    pub good_fraction: f64,
    pub mode: ThresholdMode,
}

impl Default for ThresholdTracker {
    fn default() -> Self {
        Self::new(0.9, ThresholdMode::Literal)
    }
}

impl ThresholdTracker {
    pub fn new(good_fraction: f64, mode: ThresholdMode) -> Self {
        Self {
            threshold: f64::NEG_INFINITY,
            good_fraction,
            mode,
        }
    }

    /// Highest episodic fitness seen so far (`-inf` before the first).
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn update(&mut self, fitness: f64) {
        if fitness > self.threshold {
            self.threshold = fitness;
        }
    }

    pub fn is_good(&self, fitness: f64) -> bool {
        let t = self.threshold;
        if t == f64::NEG_INFINITY {
            return fitness > t;
        }
        let bar = match self.mode {
            ThresholdMode::Literal => self.good_fraction * t,
            ThresholdMode::Offset => t - (1.0 - self.good_fraction) * t.abs(),
        };
        fitness > bar
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Destination {
    Good,
    Bad,
    Noisy,
}

#[derive(Debug, Clone)]
pub struct MultiBuffer {
    good: RingBuffer,
    bad: RingBuffer,
    noisy: RingBuffer,
    ratio: SampleRatio,
    min_total: usize,
    merged: bool,
}

/// Buffer capacities and gating, as set in the run configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiBufferConfig {
    pub good_capacity: usize,
    pub bad_capacity: usize,
    pub noisy_capacity: usize,
    pub ratio: SampleRatio,
    /// Minimum total number of stored transitions before sampling (K).
    pub min_total: usize,
    /// Route every trajectory into the noisy compartment, collapsing the
    /// store into a single buffer.
    pub merged: bool,
}

impl Default for MultiBufferConfig {
    fn default() -> Self {
        Self {
            good_capacity: DEFAULT_CAPACITY,
            bad_capacity: DEFAULT_CAPACITY,
            noisy_capacity: DEFAULT_CAPACITY,
            ratio: SampleRatio::PAPER,
            min_total: 25_000,
            merged: false,
        }
    }
}

impl MultiBuffer {
    pub fn new(cfg: MultiBufferConfig) -> Result<Self> {
        cfg.ratio.validate()?;
        Ok(Self {
            good: RingBuffer::new(cfg.good_capacity)?,
            bad: RingBuffer::new(cfg.bad_capacity)?,
            noisy: RingBuffer::new(cfg.noisy_capacity)?,
            ratio: cfg.ratio,
            min_total: cfg.min_total,
            merged: cfg.merged,
        })
    }

    pub fn good(&self) -> &RingBuffer {
        &self.good
    }

    pub fn bad(&self) -> &RingBuffer {
        &self.bad
    }

    pub fn noisy(&self) -> &RingBuffer {
        &self.noisy
    }

    pub fn ratio(&self) -> SampleRatio {
        self.ratio
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.good.len(), self.bad.len(), self.noisy.len()]
    }

    pub fn total(&self) -> usize {
        self.good.len() + self.bad.len() + self.noisy.len()
    }

    pub fn push_noisy(&mut self, t: Transition) {
        self.noisy.push(t);
    }

    /// Sends the whole trajectory to one compartment, then raises the
    /// tracker's threshold if this fitness is a new best.
    pub fn route_trajectory(
        &mut self,
        traj: Trajectory,
        tracker: &mut ThresholdTracker,
    ) -> Destination {
        let dest = if self.merged {
            Destination::Noisy
        } else if tracker.is_good(traj.fitness) {
            Destination::Good
        } else {
            Destination::Bad
        };
        let buf = match dest {
            Destination::Good => &mut self.good,
            Destination::Bad => &mut self.bad,
            Destination::Noisy => &mut self.noisy,
        };
        for t in traj.transitions {
            buf.push(t);
        }
        tracker.update(traj.fitness);
        dest
    }

    pub fn ready(&self, batch_size: usize) -> bool {
        let counts = self.ratio.counts(batch_size);
        self.total() >= self.min_total
            && self.total() > 0
            && [&self.good, &self.bad, &self.noisy]
                .iter()
                .zip(counts)
                .all(|(buf, need)| buf.len() >= need)
    }

    /// Draws exactly the ratio counts from each compartment, uniformly with
    /// replacement, and shuffles the result.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>> {
        if batch_size == 0 || !self.ready(batch_size) {
            return Err(Error::NotReady { batch_size });
        }
        let counts = self.ratio.counts(batch_size);
        let mut batch = Vec::with_capacity(batch_size);
        for (buf, n) in [&self.good, &self.bad, &self.noisy].into_iter().zip(counts) {
            for _ in 0..n {
                batch.push(buf.sample(rng));
            }
        }
        batch.shuffle(rng);
        Ok(batch)
    }

    /// Which compartment holds a transition, by address. Test helper for
    /// checking batch composition.
    pub fn compartment_of(&self, t: &Transition) -> Option<Destination> {
        let owns = |buf: &RingBuffer| buf.iter().any(|x| std::ptr::eq(x, t));
        if owns(&self.good) {
            Some(Destination::Good)
        } else if owns(&self.bad) {
            Some(Destination::Bad)
        } else if owns(&self.noisy) {
            Some(Destination::Noisy)
        } else {
            None
        }
    }
}

/// Column-stacked view of a sampled batch, ready for the networks.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub next_states: Array2<f64>,
    pub rewards: Array1<f64>,
    /// 1.0 where bootstrapping continues, 0.0 on terminal transitions.
    pub not_done: Array1<f64>,
}

impl Batch {
    pub fn from_transitions<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let items: Vec<&Transition> = items.into_iter().collect();
        let first = items
            .first()
            .ok_or_else(|| Error::Usage("empty batch".into()))?;
        let (obs, act) = (first.state.len(), first.action.len());
        let n = items.len();
        let mut states = Array2::zeros((n, obs));
        let mut actions = Array2::zeros((n, act));
        let mut next_states = Array2::zeros((n, obs));
        let mut rewards = Array1::zeros(n);
        let mut not_done = Array1::zeros(n);
        for (i, t) in items.iter().enumerate() {
            if t.state.len() != obs || t.next_state.len() != obs {
                return Err(Error::dim("batch state", obs, t.state.len()));
            }
            if t.action.len() != act {
                return Err(Error::dim("batch action", act, t.action.len()));
            }
            for j in 0..obs {
                states[[i, j]] = t.state[j];
                next_states[[i, j]] = t.next_state[j];
            }
            for j in 0..act {
                actions[[i, j]] = t.action[j];
            }
            rewards[i] = t.reward;
            not_done[i] = if t.terminated { 0.0 } else { 1.0 };
        }
        Ok(Self {
            states,
            actions,
            next_states,
            rewards,
            not_done,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}
