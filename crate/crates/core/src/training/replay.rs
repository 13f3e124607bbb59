use std::collections::{BTreeMap, VecDeque};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bmdp::ObservationVec;
use crate::error::{Error, Result};
use crate::rng;

/// One environment step as seen by the buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub env_id: usize,
    pub obs: ObservationVec,
    /// Latent label of `obs`; stored for probes and alignment checks only.
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_obs: ObservationVec,
    /// True when this step ended the episode.
    pub done: bool,
}

/// `T` consecutive steps of one episode: the starting observation, the
/// actions taken and the rewards that followed each action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub o_start: ObservationVec,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Observation after the first action; consumed by the contrastive
    /// dynamics baseline.
    pub next_obs: ObservationVec,
    pub env_id: usize,
    pub state_id: usize,
}

impl TrajectorySegment {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// FIFO store of trajectory segments plus per-environment sliding windows
/// that assemble them.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    t: usize,
    segments: VecDeque<TrajectorySegment>,
    windows: BTreeMap<usize, VecDeque<Transition>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, t: usize) -> Result<Self> {
        if capacity == 0 || t == 0 {
            return Err(Error::param("buffer capacity and segment length must be positive"));
        }
        Ok(ReplayBuffer { capacity, t, segments: VecDeque::new(), windows: BTreeMap::new() })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn segment_len(&self) -> usize {
        self.t
    }

    pub fn segments(&self) -> impl Iterator<Item = &TrajectorySegment> {
        self.segments.iter()
    }

    /// Appends a transition; returns how many segments were emitted (0 or 1).
    /// Windows never span an episode boundary.
    pub fn push_transition(&mut self, tr: Transition) -> usize {
        let done = tr.done;
        let env_id = tr.env_id;
        let window = self.windows.entry(env_id).or_default();
        window.push_back(tr);
        let mut emitted = 0;
        if window.len() == self.t {
            let first = window.front().expect("window is full");
            let segment = TrajectorySegment {
                o_start: first.obs.clone(),
                actions: window.iter().map(|w| w.action).collect(),
                rewards: window.iter().map(|w| w.reward).collect(),
                next_obs: first.next_obs.clone(),
                env_id,
                state_id: first.state,
            };
            window.pop_front();
            if self.segments.len() == self.capacity {
                self.segments.pop_front();
            }
            self.segments.push_back(segment);
            emitted = 1;
        }
        if done {
            self.windows.remove(&env_id);
        }
        emitted
    }

    /// Uniform sampling with replacement.
    pub fn sample_batch(&self, n: usize, seed: u64) -> Result<Vec<TrajectorySegment>> {
        if n == 0 || n > self.segments.len() {
            return Err(Error::State(format!("cannot draw {n} segments from a buffer of {}", self.segments.len())));
        }
        let mut rng = rng::rng_from(seed);
        Ok((0..n).map(|_| self.segments[rng.random_range(0..self.segments.len())].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(step: usize, done: bool) -> Transition {
        Transition {
            env_id: 0,
            obs: ObservationVec(vec![step as f64]),
            state: step,
            action: step % 3,
            reward: step as f64 * 0.5,
            next_obs: ObservationVec(vec![step as f64 + 1.0]),
            done,
        }
    }

    #[test]
    fn window_fills_before_emitting() {
        let mut buf = ReplayBuffer::new(10, 3).unwrap();
        assert_eq!(buf.push_transition(tr(0, false)) + buf.push_transition(tr(1, false)), 0);
        assert!(buf.is_empty());
    }

    #[test]
    fn five_steps_make_three_aligned_segments() {
        let mut buf = ReplayBuffer::new(10, 3).unwrap();
        for i in 0..5 {
            buf.push_transition(tr(i, false));
        }
        let segs: Vec<_> = buf.segments().cloned().collect();
        assert_eq!(segs.len(), 3);
        for (k, s) in segs.iter().enumerate() {
            assert_eq!(s.o_start.0, vec![k as f64]);
            assert_eq!(s.next_obs.0, vec![k as f64 + 1.0]);
            assert_eq!(s.actions, vec![k % 3, (k + 1) % 3, (k + 2) % 3]);
            assert_eq!(s.rewards, vec![k as f64 * 0.5, (k + 1) as f64 * 0.5, (k + 2) as f64 * 0.5]);
            assert_eq!(s.state_id, k);
        }
    }

    #[test]
    fn boundaries_are_not_crossed() {
        let mut buf = ReplayBuffer::new(10, 3).unwrap();
        buf.push_transition(tr(0, false));
        buf.push_transition(tr(1, true));
        for i in 2..5 {
            buf.push_transition(tr(i, false));
        }
        let segs: Vec<_> = buf.segments().collect();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].state_id, 2);
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(2, 1).unwrap();
        for i in 0..5 {
            buf.push_transition(tr(i, false));
        }
        let ids: Vec<_> = buf.segments().map(|s| s.state_id).collect();
        assert_eq!(ids, vec![3, 4]);
    }

    #[test]
    fn sampling() {
        let mut buf = ReplayBuffer::new(100, 1).unwrap();
        for i in 0..10 {
            buf.push_transition(tr(i, false));
        }
        assert!(matches!(buf.sample_batch(11, 0), Err(Error::State(_))));
        assert_eq!(buf.sample_batch(5, 3).unwrap(), buf.sample_batch(5, 3).unwrap());

        let n = 10_000;
        let mut counts = [0usize; 10];
        for seed in 0..(n / 10) as u64 {
            for s in buf.sample_batch(10, seed).unwrap() {
                counts[s.state_id] += 1;
            }
        }
        let sd = (n as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - 1000.0).abs() <= 3.0 * sd, "{counts:?}");
        }
    }
}
