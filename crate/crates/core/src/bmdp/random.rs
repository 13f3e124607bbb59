use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};

use super::{BMDPInstance, DistractorChain, ObsMap, TaskCore, DEFAULT_HORIZON, INJECTIVITY_MIN_DIST};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const MAX_REDRAWS: usize = 100;
const DEFAULT_GAMMA: f64 = 0.99;

/// Dirichlet(1, ..., 1) draw.
fn simplex(rng: &mut Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Evenly spaced support on `[0, 1]`; a single value is `{1}`.
fn default_support(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// A core with dense Dirichlet transition rows.
pub fn random_core(
    rng: &mut Rng,
    num_states: usize,
    num_actions: usize,
    support: Vec<f64>,
    gamma: f64,
) -> Result<TaskCore> {
    let width = num_states * support.len();
    let mut table = Vec::with_capacity(num_states * num_actions * width);
    for _ in 0..num_states * num_actions {
        table.extend(simplex(rng, width));
    }
    TaskCore::new(num_states, num_actions, support, table, gamma)
}

/// A core whose states fall into `num_classes` groups sharing the one-step
/// reward distribution `p(r | s, a)`, while next-state distributions stay
/// state-specific. Produces non-trivial coarse partitions at short horizons.
#[allow(clippy::needless_range_loop)]
pub fn make_aliased_core(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    support: Vec<f64>,
    num_classes: usize,
    gamma: f64,
) -> Result<TaskCore> {
    if num_states == 0 || num_actions == 0 || support.is_empty() || num_classes == 0 {
        return Err(Error::param("aliased core needs positive counts"));
    }
    let mut rng = rng::rng_from(seed);
    let nr = support.len();
    let class_of: Vec<usize> = (0..num_states).map(|s| s % num_classes).collect();
    let reward_rows: Vec<Vec<f64>> = (0..num_classes * num_actions).map(|_| simplex(&mut rng, nr)).collect();
    let mut table = Vec::with_capacity(num_states * num_actions * num_states * nr);
    for s in 0..num_states {
        for a in 0..num_actions {
            let rewards = &reward_rows[class_of[s] * num_actions + a];
            let per_reward: Vec<Vec<f64>> = (0..nr).map(|_| simplex(&mut rng, num_states)).collect();
            for next in 0..num_states {
                for r in 0..nr {
                    table.push(rewards[r] * per_reward[r][next]);
                }
            }
        }
    }
    TaskCore::new(num_states, num_actions, support, table, gamma)
}

fn column_rank(cols: &[Vec<f64>]) -> usize {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for c in cols {
        let mut v = c.clone();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 * scale.max(1.0) {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis.len()
}

/// Random Block MDP with a linear observation map `W e_s + B e_x`.
pub fn make_random_bmdp(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    num_reward_values: usize,
    num_envs: usize,
    num_factors: usize,
    obs_dim: usize,
) -> Result<BMDPInstance> {
    let counts = [num_states, num_actions, num_reward_values, num_envs, num_factors, obs_dim];
    if counts.contains(&0) {
        return Err(Error::param("all counts must be at least 1"));
    }
    if obs_dim < num_states + num_factors {
        return Err(Error::param(format!(
            "obs_dim {obs_dim} < num_states + num_factors = {}",
            num_states + num_factors
        )));
    }
    let mut rng = rng::rng_from(seed);
    let core = random_core(&mut rng, num_states, num_actions, default_support(num_reward_values), DEFAULT_GAMMA)?;

    let chains = (0..num_envs)
        .map(|env_id| {
            let mut chain = Vec::with_capacity(num_factors * num_factors);
            for _ in 0..num_factors {
                chain.extend(simplex(&mut rng, num_factors));
            }
            DistractorChain { env_id, num_factors, chain, init: simplex(&mut rng, num_factors) }
        })
        .collect();

    for _ in 0..MAX_REDRAWS {
        let state_basis: Vec<f64> = (0..obs_dim * num_states).map(|_| rng.sample(StandardNormal)).collect();
        let factor_basis: Vec<f64> = (0..obs_dim * num_factors).map(|_| rng.sample(StandardNormal)).collect();
        let cols: Vec<Vec<f64>> = (0..num_states)
            .map(|s| (0..obs_dim).map(|d| state_basis[d * num_states + s]).collect())
            .chain((0..num_factors).map(|x| (0..obs_dim).map(|d| factor_basis[d * num_factors + x]).collect()))
            .collect();
        if column_rank(&cols) < num_states + num_factors {
            continue;
        }
        let inst = BMDPInstance {
            core: core.clone(),
            chains,
            obs_map: ObsMap::Linear { state_basis, factor_basis },
            obs_dim,
            num_factors,
            horizon: DEFAULT_HORIZON,
        };
        if inst.min_pairwise_distance() < INJECTIVITY_MIN_DIST {
            return make_random_bmdp(
                rng::derive_seed(seed, 1, 0),
                num_states,
                num_actions,
                num_reward_values,
                num_envs,
                num_factors,
                obs_dim,
            );
        }
        inst.validate()?;
        return Ok(inst);
    }
    Err(Error::Numeric("could not draw an injective observation map".into()))
}
