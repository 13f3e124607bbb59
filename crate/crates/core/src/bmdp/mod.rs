//! Finite Block MDPs with environment-specific distractor chains.
//!
//! A task core `p(s', r | s, a)` is shared by every environment. Each
//! environment owns a Markov chain `q_e(x' | x)` over visual factors, and the
//! observation is `g(s, x)` for an injective map `g`. Transitions factor as
//! `p(s', r | s, a) * q_e(x' | x)`.

mod episode;
mod gridworld;
mod random;

pub use episode::{BehaviorPolicy, Episode, StepOutcome};
pub use gridworld::{make_gridworld, GridSpec};
pub use random::{make_aliased_core, make_random_bmdp, random_core};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

/// Row sums of probability tables must match 1 to this tolerance.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Minimum pairwise L2 distance between distinct observations.
pub const INJECTIVITY_MIN_DIST: f64 = 1e-6;
/// Observations farther than this from every table entry fail to decode.
pub const DECODE_TOL: f64 = 1e-6;
pub const DEFAULT_HORIZON: usize = 50;

/// The latent task: states, actions, finite reward support and the joint
/// transition table `p(s', r | s, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCore {
    pub num_states: usize,
    pub num_actions: usize,
    pub reward_support: Vec<f64>,
    /// Row-major over `[s][a][s'][r]`.
    pub transition: Vec<f64>,
    pub gamma: f64,
    pub r_bar: f64,
}

impl TaskCore {
    /// Builds and validates a core; `r_bar` is set to `max |r|`.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        reward_support: Vec<f64>,
        transition: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let r_bar = reward_support.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        let core = TaskCore { num_states, num_actions, reward_support, transition, gamma, r_bar };
        core.validate()?;
        Ok(core)
    }

    pub fn num_rewards(&self) -> usize {
        self.reward_support.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na, nr) = (self.num_states, self.num_actions, self.num_rewards());
        if ns == 0 || na == 0 || nr == 0 {
            return Err(Error::param("task core needs at least one state, action and reward"));
        }
        if self.transition.len() != ns * na * ns * nr {
            return Err(Error::param(format!(
                "transition table has {} entries, expected {}",
                self.transition.len(),
                ns * na * ns * nr
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::param(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if let Some(r) = self.reward_support.iter().find(|r| !r.is_finite() || r.abs() > self.r_bar) {
            return Err(Error::param(format!("reward {r} exceeds r_bar {}", self.r_bar)));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.row(s, a);
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::param(format!("probability out of [0,1] at (s={s}, a={a})")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::param(format!("row (s={s}, a={a}) sums to {total}")));
                }
            }
        }
        Ok(())
    }

    /// The `[s'][r]` block for `(s, a)`, flattened as `s' * R + r`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let width = self.num_states * self.num_rewards();
        let start = (s * self.num_actions + a) * width;
        &self.transition[start..start + width]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize, r: usize) -> f64 {
        self.row(s, a)[next * self.num_rewards() + r]
    }

    pub fn reward_marginal(&self, s: usize, a: usize) -> Vec<f64> {
        let nr = self.num_rewards();
        let mut out = vec![0.0; nr];
        for (i, p) in self.row(s, a).iter().enumerate() {
            out[i % nr] += p;
        }
        out
    }

    pub fn next_state_probs(&self, s: usize, a: usize) -> Vec<f64> {
        let nr = self.num_rewards();
        self.row(s, a).chunks(nr).map(|c| c.iter().sum()).collect()
    }

    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        let nr = self.num_rewards();
        self.row(s, a).iter().enumerate().map(|(i, p)| p * self.reward_support[i % nr]).sum()
    }

    /// Samples `(s', reward index)`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R, s: usize, a: usize) -> (usize, usize) {
        let nr = self.num_rewards();
        let idx = rng::sample_index(rng, self.row(s, a));
        (idx / nr, idx % nr)
    }

    /// Rolls the core forward from `s` under a fixed action sequence and
    /// returns the rewards received.
    pub fn sample_reward_sequence<R: rand::Rng + ?Sized>(&self, rng: &mut R, s: usize, actions: &[usize]) -> Vec<f64> {
        let mut state = s;
        actions
            .iter()
            .map(|&a| {
                let (next, r) = self.sample(rng, state, a);
                state = next;
                self.reward_support[r]
            })
            .collect()
    }
}

/// Environment-specific Markov chain over visual factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistractorChain {
    pub env_id: usize,
    pub num_factors: usize,
    /// Row-major `q(x' | x)`.
    pub chain: Vec<f64>,
    pub init: Vec<f64>,
}

impl DistractorChain {
    pub fn row(&self, x: usize) -> &[f64] {
        &self.chain[x * self.num_factors..(x + 1) * self.num_factors]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_factors;
        if n == 0 || self.chain.len() != n * n || self.init.len() != n {
            return Err(Error::param(format!("chain for env {} has inconsistent shape", self.env_id)));
        }
        let rows = (0..n).map(|x| self.row(x)).chain(std::iter::once(self.init.as_slice()));
        for row in rows {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::param(format!("chain for env {} has a bad probability", self.env_id)));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::param(format!("chain row for env {} sums to {total}", self.env_id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationVec(pub Vec<f64>);

impl ObservationVec {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dist(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// Parameters of the observation function `g(s, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObsMap {
    /// `g(s, x) = W e_s + B e_x` with column-major bases stored row-major as
    /// `D x S` and `D x X`.
    Linear { state_basis: Vec<f64>, factor_basis: Vec<f64> },
    /// A rendered grid: background tile pattern per factor with the agent
    /// marker written over the agent's cell.
    Grid { width: usize, height: usize, agent_value: f64, backgrounds: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BMDPInstance {
    pub core: TaskCore,
    pub chains: Vec<DistractorChain>,
    pub obs_map: ObsMap,
    pub obs_dim: usize,
    pub num_factors: usize,
    pub horizon: usize,
}

/// Outcome of the invariant checks, printed by the generator command.
#[derive(Clone, Debug, Serialize)]
pub struct InvariantReport {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_factors: usize,
    pub num_envs: usize,
    pub obs_dim: usize,
    pub min_pairwise_distance: f64,
}

impl BMDPInstance {
    pub fn num_envs(&self) -> usize {
        self.chains.len()
    }

    pub fn chain(&self, env_id: usize) -> Result<&DistractorChain> {
        self.chains.get(env_id).ok_or_else(|| Error::param(format!("unknown environment {env_id}")))
    }

    /// `g(s, x)`.
    pub fn observe(&self, s: usize, x: usize) -> Result<ObservationVec> {
        if s >= self.core.num_states || x >= self.num_factors {
            return Err(Error::param(format!("(s={s}, x={x}) out of range")));
        }
        Ok(ObservationVec(self.render(s, x)))
    }

    fn render(&self, s: usize, x: usize) -> Vec<f64> {
        match &self.obs_map {
            ObsMap::Linear { state_basis, factor_basis } => {
                let (ns, nx) = (self.core.num_states, self.num_factors);
                (0..self.obs_dim).map(|d| state_basis[d * ns + s] + factor_basis[d * nx + x]).collect()
            }
            ObsMap::Grid { agent_value, backgrounds, .. } => {
                let mut o = backgrounds[x].clone();
                o[s] = *agent_value;
                o
            }
        }
    }

    /// Nearest-neighbour inversion of `g` over the finite table. Oracle and
    /// probe use only; learners never see the decoded pair.
    pub fn decode(&self, o: &ObservationVec) -> Result<(usize, usize)> {
        if o.dim() != self.obs_dim {
            return Err(Error::Decode(format!("observation has dim {}, expected {}", o.dim(), self.obs_dim)));
        }
        let mut best = (f64::INFINITY, 0, 0);
        for s in 0..self.core.num_states {
            for x in 0..self.num_factors {
                let d = o.dist(&self.render(s, x));
                if d < best.0 {
                    best = (d, s, x);
                }
            }
        }
        if best.0 > DECODE_TOL {
            return Err(Error::Decode(format!("nearest table entry is {:.3e} away", best.0)));
        }
        Ok((best.1, best.2))
    }

    /// Smallest L2 distance between observations of distinct `(s, x)` pairs.
    pub fn min_pairwise_distance(&self) -> f64 {
        let table: Vec<Vec<f64>> = (0..self.core.num_states)
            .flat_map(|s| (0..self.num_factors).map(move |x| (s, x)))
            .map(|(s, x)| self.render(s, x))
            .collect();
        let mut best = f64::INFINITY;
        for i in 0..table.len() {
            for j in i + 1..table.len() {
                let d: f64 = table[i].iter().zip(&table[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                best = best.min(d.sqrt());
            }
        }
        best
    }

    /// Runs every type invariant.
    pub fn validate(&self) -> Result<InvariantReport> {
        self.core.validate()?;
        if self.chains.is_empty() {
            return Err(Error::param("instance has no environments"));
        }
        for (i, chain) in self.chains.iter().enumerate() {
            if chain.env_id != i || chain.num_factors != self.num_factors {
                return Err(Error::param(format!("chain {i} is inconsistent with the instance")));
            }
            chain.validate()?;
        }
        let shape_ok = match &self.obs_map {
            ObsMap::Linear { state_basis, factor_basis } => {
                state_basis.len() == self.obs_dim * self.core.num_states
                    && factor_basis.len() == self.obs_dim * self.num_factors
            }
            ObsMap::Grid { width, height, backgrounds, .. } => {
                width * height == self.obs_dim
                    && self.core.num_states == self.obs_dim
                    && backgrounds.len() == self.num_factors
                    && backgrounds.iter().all(|b| b.len() == self.obs_dim)
            }
        };
        if !shape_ok {
            return Err(Error::param("observation map shape does not match the instance"));
        }
        let min_dist = self.min_pairwise_distance();
        if min_dist < INJECTIVITY_MIN_DIST {
            return Err(Error::param(format!("observation map not injective (min distance {min_dist:.3e})")));
        }
        Ok(InvariantReport {
            num_states: self.core.num_states,
            num_actions: self.core.num_actions,
            num_factors: self.num_factors,
            num_envs: self.num_envs(),
            obs_dim: self.obs_dim,
            min_pairwise_distance: min_dist,
        })
    }

    /// Starts an episode in `env_id`: uniform initial state, factor drawn from
    /// the chain's initial distribution.
    pub fn reset(&self, env_id: usize, seed: u64) -> Result<(Episode<'_>, ObservationVec)> {
        let chain = self.chain(env_id)?;
        let mut rng = rng::rng_from(seed);
        let state = rng.random_range(0..self.core.num_states);
        let factor = rng::sample_index(&mut rng, &chain.init);
        let obs = ObservationVec(self.render(state, factor));
        Ok((Episode::new(self, env_id, state, factor, rng), obs))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: BMDPInstance = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    /// Hex SHA-256 of the canonical JSON form; ties checkpoints to instances.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("instance serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
