//! Exact reward-sequence distributions and characteristic functions.
//!
//! For a start state `s` and a fixed action sequence `a_1..a_T`, the joint
//! law of `(r_1..r_T)` is computed by forward enumeration over latent state
//! paths: a frontier keyed by the reward-index prefix carries the joint mass
//! over the current state, and states are marginalised at the end. This is the
//! ground truth every Monte-Carlo and learned quantity is checked against.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bmdp::{BMDPInstance, ObservationVec, TaskCore};
pub use crate::charfn::CFValue;
use crate::charfn::{discount_weights, sample_omega, CFConfig, OmegaBatch};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Cap on `(prefix, state)` nodes created during one enumeration.
pub const MAX_EXPANDED_NODES: usize = 1_000_000;
/// Cap on `|A|^T` for exhaustive action-sequence sweeps.
pub const MAX_ACTION_SEQUENCES: usize = 10_000;
/// Default tolerance for CF equality.
pub const CF_EQ_TOL: f64 = 1e-9;
/// Entry-wise tolerance when comparing two distributions directly.
pub const RSD_EQ_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionSeq(pub Vec<usize>);

impl ActionSeq {
    pub fn new(actions: Vec<usize>, num_actions: usize) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::param("action sequence must be non-empty"));
        }
        if let Some(a) = actions.iter().find(|&&a| a >= num_actions) {
            return Err(Error::param(format!("action {a} out of range")));
        }
        Ok(ActionSeq(actions))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsdEntry {
    /// Indices into the core's reward support.
    pub indices: Vec<usize>,
    pub rewards: Vec<f64>,
    pub prob: f64,
}

/// Finite law of a length-`T` reward sequence; entries sorted by index tuple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactRSD {
    pub t: usize,
    pub entries: Vec<RsdEntry>,
}

impl ExactRSD {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.prob).sum()
    }

    /// Builds a distribution from explicit `(rewards, prob)` pairs. Reward
    /// indices are assigned by first appearance of each value.
    pub fn from_pairs(pairs: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        let t = pairs.first().map(|p| p.0.len()).unwrap_or(0);
        if t == 0 || pairs.iter().any(|p| p.0.len() != t) {
            return Err(Error::param("reward sequences must share a positive length"));
        }
        let mut support: Vec<f64> = Vec::new();
        let entries = pairs
            .into_iter()
            .map(|(rewards, prob)| {
                let indices = rewards
                    .iter()
                    .map(|r| match support.iter().position(|v| v == r) {
                        Some(i) => i,
                        None => {
                            support.push(*r);
                            support.len() - 1
                        }
                    })
                    .collect();
                RsdEntry { indices, rewards, prob }
            })
            .collect();
        Ok(ExactRSD { t, entries })
    }

    /// Largest entry-wise probability difference over the union of supports.
    pub fn max_abs_diff(&self, other: &ExactRSD) -> f64 {
        let mut table: BTreeMap<&[usize], (f64, f64)> = BTreeMap::new();
        for e in &self.entries {
            table.entry(&e.indices).or_default().0 += e.prob;
        }
        for e in &other.entries {
            table.entry(&e.indices).or_default().1 += e.prob;
        }
        table.values().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn enumerate_rsd(core: &TaskCore, s: usize, actions: &ActionSeq) -> Result<ExactRSD> {
    if s >= core.num_states {
        return Err(Error::param(format!("state {s} out of range")));
    }
    if actions.is_empty() {
        return Err(Error::param("action sequence must be non-empty"));
    }
    let (ns, nr) = (core.num_states, core.num_rewards());
    let mut frontier: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let mut start = vec![0.0; ns];
    start[s] = 1.0;
    frontier.insert(Vec::new(), start);
    let mut expanded = 1usize;

    for &a in &actions.0 {
        if a >= core.num_actions {
            return Err(Error::param(format!("action {a} out of range")));
        }
        let mut next: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
        for (prefix, mass) in &frontier {
            for (state, &m) in mass.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                for (idx, &p) in core.row(state, a).iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let (to, r) = (idx / nr, idx % nr);
                    let mut key = prefix.clone();
                    key.push(r);
                    let slot = next.entry(key).or_insert_with(|| {
                        expanded += ns;
                        vec![0.0; ns]
                    });
                    slot[to] += m * p;
                }
            }
            if expanded > MAX_EXPANDED_NODES {
                return Err(Error::Resource(format!(
                    "reward-sequence enumeration exceeded {MAX_EXPANDED_NODES} nodes"
                )));
            }
        }
        frontier = next;
    }

    let entries = frontier
        .into_iter()
        .map(|(indices, mass)| RsdEntry {
            rewards: indices.iter().map(|&i| core.reward_support[i]).collect(),
            indices,
            prob: mass.iter().sum(),
        })
        .collect();
    Ok(ExactRSD { t: actions.len(), entries })
}

/// `sum_r p(r) exp(i <omega, r>)` over the enumerated distribution.
pub fn exact_cf(rsd: &ExactRSD, omega: &[f64], gamma_seq: f64) -> Result<CFValue> {
    if omega.len() != rsd.t {
        return Err(Error::param(format!("omega has length {}, RSD has T = {}", omega.len(), rsd.t)));
    }
    if !(gamma_seq > 0.0 && gamma_seq <= 1.0) {
        return Err(Error::param(format!("gamma_seq {gamma_seq} outside (0, 1]")));
    }
    let w = discount_weights(rsd.t, gamma_seq);
    let (mut re, mut im, mut mass) = (0.0, 0.0, 0.0);
    for e in &rsd.entries {
        let u: f64 = omega.iter().zip(&e.rewards).zip(&w).map(|((o, r), g)| g * o * r).sum();
        re += e.prob * u.cos();
        im += e.prob * u.sin();
        mass += e.prob;
    }
    // dividing by the accumulated mass (1 up to rounding) makes phi(0) = 1 exact
    Ok(CFValue::new(re / mass, im / mass))
}

/// Every sequence in `A^T`, lexicographic.
pub fn all_action_sequences(num_actions: usize, t: usize) -> Result<Vec<ActionSeq>> {
    let count = (num_actions as f64).powi(t as i32);
    if count > MAX_ACTION_SEQUENCES as f64 {
        return Err(Error::Resource(format!("|A|^T = {count} exceeds {MAX_ACTION_SEQUENCES}")));
    }
    if t == 0 || num_actions == 0 {
        return Err(Error::param("need T >= 1 and at least one action"));
    }
    let count = count as usize;
    Ok((0..count)
        .map(|mut code| {
            let mut seq = vec![0; t];
            for slot in seq.iter_mut().rev() {
                *slot = code % num_actions;
                code /= num_actions;
            }
            ActionSeq(seq)
        })
        .collect())
}

/// All length-`T` RSDs from state `s`, in [`all_action_sequences`] order.
pub fn rsd_table(core: &TaskCore, s: usize, t: usize) -> Result<Vec<ExactRSD>> {
    all_action_sequences(core.num_actions, t)?.iter().map(|a| enumerate_rsd(core, s, a)).collect()
}

/// Largest CF difference between two observations over `A^T` and the given
/// frequencies.
pub fn max_cf_gap(
    inst: &BMDPInstance,
    o: &ObservationVec,
    o2: &ObservationVec,
    omegas: &OmegaBatch,
    gamma_seq: f64,
) -> Result<f64> {
    let (s, _) = inst.decode(o)?;
    let (s2, _) = inst.decode(o2)?;
    let seqs = all_action_sequences(inst.core.num_actions, omegas.t)?;
    let gaps = par::map_slice(Exec::default(), &seqs, |a| -> Result<f64> {
        let p = enumerate_rsd(&inst.core, s, a)?;
        let q = enumerate_rsd(&inst.core, s2, a)?;
        let mut worst = 0.0_f64;
        for w in omegas.rows() {
            worst = worst.max(exact_cf(&p, w, gamma_seq)?.dist(exact_cf(&q, w, gamma_seq)?));
        }
        Ok(worst)
    });
    gaps.into_iter().try_fold(0.0_f64, |m, g| Ok(m.max(g?)))
}

/// True iff the two observations' length-`T` CFs agree within `tol` on every
/// action sequence and on `num_probe_omegas` standard-normal frequencies.
pub fn same_rsd(
    inst: &BMDPInstance,
    o: &ObservationVec,
    o2: &ObservationVec,
    t: usize,
    num_probe_omegas: usize,
    seed: u64,
    tol: f64,
) -> Result<bool> {
    let cfg = CFConfig { t, kappa: num_probe_omegas, gamma_seq: CFConfig::default().gamma_seq };
    let omegas = sample_omega(&cfg, seed)?;
    Ok(max_cf_gap(inst, o, o2, &omegas, cfg.gamma_seq)? <= tol)
}

/// Equivalence classes over states; blocks are numbered by their smallest
/// member.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub block_of: Vec<usize>,
    pub num_blocks: usize,
}

impl Partition {
    pub fn identity(n: usize) -> Self {
        Partition { block_of: (0..n).collect(), num_blocks: n }
    }

    pub fn single(n: usize) -> Self {
        Partition { block_of: vec![0; n], num_blocks: usize::from(n > 0) }
    }

    /// Normalises arbitrary labels into first-appearance block numbering.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut seen: Vec<usize> = Vec::new();
        let block_of = labels
            .iter()
            .map(|l| match seen.iter().position(|x| x == l) {
                Some(i) => i,
                None => {
                    seen.push(*l);
                    seen.len() - 1
                }
            })
            .collect();
        Partition { block_of, num_blocks: seen.len() }
    }

    pub fn num_states(&self) -> usize {
        self.block_of.len()
    }

    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_blocks];
        for (s, &b) in self.block_of.iter().enumerate() {
            out[b].push(s);
        }
        out
    }

    /// Every block of `self` sits inside a block of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        if self.num_states() != coarser.num_states() {
            return false;
        }
        let mut image = vec![None; self.num_blocks];
        self.block_of.iter().zip(&coarser.block_of).all(|(&fine, &coarse)| match image[fine] {
            None => {
                image[fine] = Some(coarse);
                true
            }
            Some(c) => c == coarse,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut used = vec![false; self.num_blocks];
        for &b in &self.block_of {
            if b >= self.num_blocks {
                return Err(Error::param(format!("block {b} out of range")));
            }
            used[b] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::param("partition has an empty block"));
        }
        Ok(())
    }
}

/// Groups states whose RSDs agree for every length-`T` action sequence.
pub fn t_level_partition(inst: &BMDPInstance, t: usize) -> Result<Partition> {
    t_level_partition_core(&inst.core, t)
}

pub fn t_level_partition_core(core: &TaskCore, t: usize) -> Result<Partition> {
    all_action_sequences(core.num_actions, t)?;
    let tables: Vec<Vec<ExactRSD>> = par::map_range(Exec::default(), core.num_states, |s| rsd_table(core, s, t))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut reps: Vec<usize> = Vec::new();
    let mut labels = vec![0; core.num_states];
    for s in 0..core.num_states {
        let matching =
            reps.iter().position(|&r| tables[r].iter().zip(&tables[s]).all(|(p, q)| p.max_abs_diff(q) <= RSD_EQ_TOL));
        labels[s] = match matching {
            Some(b) => b,
            None => {
                reps.push(s);
                reps.len() - 1
            }
        };
    }
    Ok(Partition::from_labels(&labels))
}
