use serde::{Deserialize, Serialize};

use super::{BMDPInstance, ObservationVec};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// A running episode. Owns its RNG; not meant to be shared across threads.
#[derive(Debug)]
pub struct Episode<'a> {
    inst: &'a BMDPInstance,
    env_id: usize,
    state: usize,
    factor: usize,
    t: usize,
    done: bool,
    rng: Rng,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub obs: ObservationVec,
    pub reward: f64,
    pub reward_index: usize,
    pub done: bool,
    /// Latent labels of the new observation, for oracles and probes.
    pub state: usize,
    pub factor: usize,
}

impl<'a> Episode<'a> {
    pub(super) fn new(inst: &'a BMDPInstance, env_id: usize, state: usize, factor: usize, rng: Rng) -> Self {
        Episode { inst, env_id, state, factor, t: 0, done: false, rng }
    }

    pub fn env_id(&self) -> usize {
        self.env_id
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    /// Samples `(s', r)` from the core and `x'` from the environment's chain
    /// independently.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::State("step called on a finished episode".into()));
        }
        let core = &self.inst.core;
        if action >= core.num_actions {
            return Err(Error::param(format!("action {action} out of range")));
        }
        let (next, r_idx) = core.sample(&mut self.rng, self.state, action);
        let chain = &self.inst.chains[self.env_id];
        let next_factor = rng::sample_index(&mut self.rng, chain.row(self.factor));
        self.state = next;
        self.factor = next_factor;
        self.t += 1;
        self.done = self.t >= self.inst.horizon;
        Ok(StepOutcome {
            obs: self.inst.observe(next, next_factor)?,
            reward: core.reward_support[r_idx],
            reward_index: r_idx,
            done: self.done,
            state: next,
            factor: next_factor,
        })
    }
}

/// Data-collection policy. Stands in for the learned actor, which this crate
/// does not train.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorPolicy {
    #[default]
    UniformRandom,
    /// Follows `script[t % len]`, replaced by a uniform action w.p. `epsilon`.
    EpsilonScripted { epsilon: f64, script: Vec<usize> },
}

impl BehaviorPolicy {
    pub fn probs(&self, num_actions: usize, t: usize) -> Vec<f64> {
        let uniform = 1.0 / num_actions as f64;
        match self {
            BehaviorPolicy::UniformRandom => vec![uniform; num_actions],
            BehaviorPolicy::EpsilonScripted { epsilon, script } => {
                let mut p = vec![epsilon * uniform; num_actions];
                if script.is_empty() {
                    return vec![uniform; num_actions];
                }
                p[script[t % script.len()] % num_actions] += 1.0 - epsilon;
                p
            }
        }
    }

    pub fn act<R: rand::Rng + ?Sized>(&self, rng: &mut R, num_actions: usize, t: usize) -> usize {
        match self {
            BehaviorPolicy::UniformRandom => rng.random_range(0..num_actions),
            _ => rng::sample_index(rng, &self.probs(num_actions, t)),
        }
    }
}
