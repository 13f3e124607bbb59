use serde::Serialize;

use crate::bmdp::{make_aliased_core, BMDPInstance, TaskCore};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::rng;
use crate::rsd_oracle::{t_level_partition_core, Partition};

pub const VI_TOL: f64 = 1e-10;
const VI_MAX_ITERS: usize = 1_000_000;
/// Largest `|A|^blocks` solved by exhaustive policy enumeration.
pub const MAX_ENUMERATED_POLICIES: usize = 200_000;
const BEST_RESPONSE_MAX_SWEEPS: usize = 1000;
pub const GAP_TOL: f64 = 1e-9;

fn check_gamma(core: &TaskCore) -> Result<()> {
    if !(core.gamma >= 0.0 && core.gamma < 1.0) {
        return Err(Error::param(format!("discount {} must lie in [0, 1)", core.gamma)));
    }
    Ok(())
}

/// `r(s, a) + gamma * sum_s' p(s' | s, a) v(s')`.
fn q_value(core: &TaskCore, v: &[f64], s: usize, a: usize) -> f64 {
    let nr = core.num_rewards();
    core.row(s, a)
        .chunks(nr)
        .zip(v)
        .map(|(probs, vn)| probs.iter().zip(&core.reward_support).map(|(p, r)| p * (r + core.gamma * vn)).sum::<f64>())
        .sum()
}

/// Optimal state values, iterated to a sup-norm change below [`VI_TOL`] and
/// then evaluated exactly under the greedy policy.
pub fn value_iteration(core: &TaskCore) -> Result<Vec<f64>> {
    check_gamma(core)?;
    let mut v = vec![0.0; core.num_states];
    for _ in 0..VI_MAX_ITERS {
        let next: Vec<f64> = (0..core.num_states)
            .map(|s| (0..core.num_actions).map(|a| q_value(core, &v, s, a)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < VI_TOL {
            // polish: the greedy policy's exact values remove the residual
            // `tol * gamma / (1 - gamma)` error of the iteration
            let exact = policy_evaluation(core, &greedy_policy(core, &v))?;
            return Ok(v.iter().zip(exact).map(|(a, b)| a.max(b)).collect());
        }
    }
    Err(Error::Numeric("value iteration did not converge".into()))
}

/// Greedy policy for `v`; ties go to the lowest action index.
pub fn greedy_policy(core: &TaskCore, v: &[f64]) -> Vec<usize> {
    (0..core.num_states)
        .map(|s| {
            let mut best = (0, f64::NEG_INFINITY);
            for a in 0..core.num_actions {
                let q = q_value(core, v, s, a);
                if q > best.1 {
                    best = (a, q);
                }
            }
            best.0
        })
        .collect()
}

/// Exact values of a deterministic stationary policy, from
/// `(I - gamma P_pi) v = r_pi` by Gaussian elimination.
pub fn policy_evaluation(core: &TaskCore, policy: &[usize]) -> Result<Vec<f64>> {
    check_gamma(core)?;
    let n = core.num_states;
    if policy.len() != n || policy.iter().any(|&a| a >= core.num_actions) {
        return Err(Error::param("policy must give a valid action for every state"));
    }
    let nr = core.num_rewards();
    let w = n + 1;
    let mut m = vec![0.0; n * w];
    for s in 0..n {
        let row = core.row(s, policy[s]);
        m[s * w + s] = 1.0;
        for next in 0..n {
            let p: f64 = row[next * nr..(next + 1) * nr].iter().sum();
            m[s * w + next] -= core.gamma * p;
        }
        m[s * w + n] = core.expected_reward(s, policy[s]);
    }
    for col in 0..n {
        let pivot =
            (col..n).max_by(|&a, &b| m[a * w + col].abs().total_cmp(&m[b * w + col].abs())).expect("non-empty range");
        if m[pivot * w + col].abs() < 1e-14 {
            return Err(Error::Numeric("singular policy-evaluation system".into()));
        }
        if pivot != col {
            for j in 0..w {
                m.swap(col * w + j, pivot * w + j);
            }
        }
        for r in 0..n {
            if r != col {
                let f = m[r * w + col] / m[col * w + col];
                if f != 0.0 {
                    for j in col..w {
                        m[r * w + j] -= f * m[col * w + j];
                    }
                }
            }
        }
    }
    Ok((0..n).map(|s| m[s * w + n] / m[s * w + s]).collect())
}

fn lift(partition: &Partition, block_actions: &[usize]) -> Vec<usize> {
    partition.block_of.iter().map(|&b| block_actions[b]).collect()
}

/// Best value from each start state over deterministic policies that take the
/// same action on every state of a block.
pub fn aggregate_and_solve(core: &TaskCore, partition: &Partition) -> Result<Vec<f64>> {
    check_gamma(core)?;
    partition.validate()?;
    if partition.num_states() != core.num_states {
        return Err(Error::param("partition size differs from the number of states"));
    }
    let (nb, na) = (partition.num_blocks, core.num_actions);
    let count = (0..nb).try_fold(1usize, |acc, _| acc.checked_mul(na).filter(|&c| c <= MAX_ENUMERATED_POLICIES));
    match count {
        Some(total) => enumerate_block_policies(core, partition, total),
        None => best_response(core, partition),
    }
}

fn enumerate_block_policies(core: &TaskCore, partition: &Partition, total: usize) -> Result<Vec<f64>> {
    let na = core.num_actions;
    let mut best = vec![f64::NEG_INFINITY; core.num_states];
    let mut actions = vec![0; partition.num_blocks];
    for code in 0..total {
        let mut c = code;
        for a in actions.iter_mut() {
            *a = c % na;
            c /= na;
        }
        let v = policy_evaluation(core, &lift(partition, &actions))?;
        best.iter_mut().zip(&v).for_each(|(b, x)| *b = b.max(*x));
    }
    Ok(best)
}

/// Per start state, coordinate ascent over block actions starting from the
/// lifted greedy policy of the first block member.
fn best_response(core: &TaskCore, partition: &Partition) -> Result<Vec<f64>> {
    let v_star = value_iteration(core)?;
    let greedy = greedy_policy(core, &v_star);
    let init: Vec<usize> = partition.blocks().iter().map(|b| greedy[b[0]]).collect();
    (0..core.num_states)
        .map(|s| {
            let mut actions = init.clone();
            let mut value = policy_evaluation(core, &lift(partition, &actions))?[s];
            for _ in 0..BEST_RESPONSE_MAX_SWEEPS {
                let mut improved = false;
                for b in 0..partition.num_blocks {
                    for a in 0..core.num_actions {
                        if a == actions[b] {
                            continue;
                        }
                        let old = std::mem::replace(&mut actions[b], a);
                        let v = policy_evaluation(core, &lift(partition, &actions))?[s];
                        if v > value + 1e-12 {
                            value = v;
                            improved = true;
                        } else {
                            actions[b] = old;
                        }
                    }
                }
                if !improved {
                    return Ok(value);
                }
            }
            Err(Error::Numeric("block best-response did not converge".into()))
        })
        .collect()
}

/// `2 gamma^T r_bar / (1 - gamma)`.
pub fn value_bound(gamma: f64, t: usize, r_bar: f64) -> f64 {
    2.0 * gamma.powi(t as i32) * r_bar / (1.0 - gamma)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub t: usize,
    pub num_blocks: usize,
    /// `V*(s) - V̄*(s)` per latent state.
    pub state_gaps: Vec<f64>,
    /// The same gaps per observation `g(s, x)`, state-major; empty when
    /// checked on a bare core.
    pub per_observation: Vec<f64>,
    pub max_gap: f64,
    pub bound: f64,
    pub violations: usize,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub fn check_partition_bound(core: &TaskCore, partition: &Partition, t: usize) -> Result<BoundReport> {
    let v_star = value_iteration(core)?;
    let v_bar = aggregate_and_solve(core, partition)?;
    let bound = value_bound(core.gamma, t, core.r_bar);
    let state_gaps: Vec<f64> = v_star.iter().zip(&v_bar).map(|(a, b)| a - b).collect();
    let violations = state_gaps.iter().filter(|&&g| !(-GAP_TOL..=bound + GAP_TOL).contains(&g)).count();
    let max_gap = state_gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundReport {
        t,
        num_blocks: partition.num_blocks,
        state_gaps,
        per_observation: Vec::new(),
        max_gap,
        bound,
        violations,
    })
}

/// Value-bound check with the exact `T`-level partition of the core.
pub fn check_value_bound_core(core: &TaskCore, t: usize) -> Result<BoundReport> {
    if t == 0 {
        return Err(Error::param("T must be at least 1"));
    }
    check_partition_bound(core, &t_level_partition_core(core, t)?, t)
}

pub fn check_value_bound(inst: &BMDPInstance, t: usize) -> Result<BoundReport> {
    let mut report = check_value_bound_core(&inst.core, t)?;
    report.per_observation = report.state_gaps.iter().flat_map(|&g| std::iter::repeat_n(g, inst.num_factors)).collect();
    report.violations *= inst.num_factors;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCase {
    pub index: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub reports: Vec<BoundReport>,
    pub identity_max_gap: f64,
    /// Max gaps never grow with `T`.
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub seed: u64,
    pub cases: Vec<SweepCase>,
    pub violations: usize,
    pub identity_failures: usize,
    pub monotonicity_failures: usize,
    pub max_ratio: f64,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.identity_failures == 0 && self.monotonicity_failures == 0
    }
}

pub const SWEEP_GAMMA: f64 = 0.9;
pub const SWEEP_HORIZONS: [usize; 3] = [1, 2, 3];

/// Random aliased cores (2..=8 states, 1..=3 actions, rewards in
/// `{-1, 0, 1}`, gamma 0.9) checked at every horizon in [`SWEEP_HORIZONS`].
pub fn bound_sweep(n: usize, seed: u64, exec: Exec) -> Result<SweepReport> {
    let cases = par::map_range(exec, n, |i| {
        let mut r = rng::stream(seed, 20, i as u64);
        let num_states = rand::Rng::random_range(&mut r, 2..=8);
        let num_actions = rand::Rng::random_range(&mut r, 1..=3);
        let classes = rand::Rng::random_range(&mut r, 1..=num_states);
        let core = make_aliased_core(
            rng::derive_seed(seed, 21, i as u64),
            num_states,
            num_actions,
            vec![-1.0, 0.0, 1.0],
            classes,
            SWEEP_GAMMA,
        )?;
        let reports = SWEEP_HORIZONS.iter().map(|&t| check_value_bound_core(&core, t)).collect::<Result<Vec<_>>>()?;
        let identity = check_partition_bound(&core, &Partition::identity(num_states), 1)?;
        let monotone = reports.windows(2).all(|w| w[1].max_gap <= w[0].max_gap + GAP_TOL);
        Ok(SweepCase { index: i, num_states, num_actions, reports, identity_max_gap: identity.max_gap.abs(), monotone })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let violations = cases.iter().flat_map(|c| &c.reports).map(|r| r.violations).sum();
    let identity_failures = cases.iter().filter(|c| c.identity_max_gap > GAP_TOL).count();
    let monotonicity_failures = cases.iter().filter(|c| !c.monotone).count();
    let max_ratio = cases.iter().flat_map(|c| &c.reports).map(|r| r.max_gap / r.bound).fold(0.0, f64::max);
    Ok(SweepReport { seed, cases, violations, identity_failures, monotonicity_failures, max_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bmdp::random_core;

    fn constant_core(reward: f64, gamma: f64) -> TaskCore {
        TaskCore::new(1, 1, vec![reward], vec![1.0], gamma).unwrap()
    }

    #[test]
    fn geometric_series() {
        let v = value_iteration(&constant_core(1.0, 0.9)).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-8);
        assert_eq!(value_iteration(&constant_core(0.0, 0.9)).unwrap(), vec![0.0]);
        let mut undiscounted = constant_core(1.0, 0.9);
        undiscounted.gamma = 1.0;
        assert!(matches!(value_iteration(&undiscounted), Err(Error::Parameter(_))));
    }

    #[test]
    fn two_state_chain_by_hand() {
        // 0 -a0-> 1 (reward 0), 0 -a1-> 0 (reward 0.5), 1 -> 1 (reward 1), gamma 0.9
        // V(1) = 10; V(0) = max(0.9 * 10, 0.5 + 0.9 V(0)) = max(9, 5) = 9
        let support = vec![0.0, 0.5, 1.0];
        let mut t = vec![0.0; 2 * 2 * 2 * 3];
        let idx = |s: usize, a: usize, n: usize, r: usize| ((s * 2 + a) * 2 + n) * 3 + r;
        t[idx(0, 0, 1, 0)] = 1.0;
        t[idx(0, 1, 0, 1)] = 1.0;
        t[idx(1, 0, 1, 2)] = 1.0;
        t[idx(1, 1, 1, 2)] = 1.0;
        let core = TaskCore::new(2, 2, support, t, 0.9).unwrap();
        let v = value_iteration(&core).unwrap();
        assert!((v[0] - 9.0).abs() < 1e-8 && (v[1] - 10.0).abs() < 1e-8);
        assert_eq!(greedy_policy(&core, &v), vec![0, 0]);
        let pe = policy_evaluation(&core, &[1, 0]).unwrap();
        assert!((pe[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn identity_partition_recovers_optimum() {
        let mut r = rng::rng_from(4);
        let core = random_core(&mut r, 5, 3, vec![0.0, 1.0], 0.9).unwrap();
        let v = value_iteration(&core).unwrap();
        let vb = aggregate_and_solve(&core, &Partition::identity(5)).unwrap();
        for (a, b) in v.iter().zip(&vb) {
            assert!((a - b).abs() <= 1e-9);
        }
        let br = best_response(&core, &Partition::identity(5)).unwrap();
        for (a, b) in v.iter().zip(&br) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn single_block_with_dominant_action() {
        // action 1 pays 1 everywhere, action 0 pays 0: uniformly optimal
        let n = 3;
        let mut t = vec![0.0; n * 2 * n * 2];
        for s in 0..n {
            for next in 0..n {
                t[((s * 2) * n + next) * 2] = 1.0 / n as f64;
                t[((s * 2 + 1) * n + next) * 2 + 1] = 1.0 / n as f64;
            }
        }
        let core = TaskCore::new(n, 2, vec![0.0, 1.0], t, 0.8).unwrap();
        let v = value_iteration(&core).unwrap();
        let vb = aggregate_and_solve(&core, &Partition::single(n)).unwrap();
        for (a, b) in v.iter().zip(&vb) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn coarse_partitions_never_beat_the_optimum() {
        let mut r = rng::rng_from(8);
        let core = random_core(&mut r, 6, 2, vec![0.0, 0.5, 1.0], 0.9).unwrap();
        let v = value_iteration(&core).unwrap();
        for p in [
            t_level_partition_core(&core, 1).unwrap(),
            Partition::single(6),
            Partition::from_labels(&[0, 0, 1, 1, 2, 2]),
        ] {
            let vb = aggregate_and_solve(&core, &p).unwrap();
            assert!(v.iter().zip(&vb).all(|(a, b)| *b <= a + 1e-9));
            let br = best_response(&core, &p).unwrap();
            assert!(br.iter().zip(&vb).all(|(a, b)| *a <= b + 1e-9));
        }
    }

    #[test]
    fn bound_formula() {
        assert!((value_bound(0.99, 5, 1.0) - 190.198).abs() < 1e-3);
        assert!((value_bound(0.99, 5, 1.0) - 2.0 * 0.99f64.powi(5) / 0.01).abs() < 1e-9);
    }

    #[test]
    fn sweep_is_clean_and_schedule_independent() {
        let a = bound_sweep(12, 7, Exec::Sequential).unwrap();
        assert!(a.passed(), "{a:?}");
        assert_eq!(a, bound_sweep(12, 7, Exec::default()).unwrap());
    }
}
