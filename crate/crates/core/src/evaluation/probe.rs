use rand::seq::SliceRandom;
use serde::Serialize;

use crate::bmdp::{BMDPInstance, BehaviorPolicy};
use crate::diffnet::{grad_with, mlp, Activation, Matrix, NetVars, OptState, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rng;

/// Frozen representations with both label sets and a fixed 80/20 split.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeDataset {
    pub representations: Vec<Vec<f64>>,
    pub env_labels: Vec<usize>,
    pub state_labels: Vec<usize>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

pub const TRAIN_FRACTION: f64 = 0.8;

impl ProbeDataset {
    /// Shuffles indices with `seed` and splits them 80/20.
    pub fn new(
        representations: Vec<Vec<f64>>,
        env_labels: Vec<usize>,
        state_labels: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let n = representations.len();
        if env_labels.len() != n || state_labels.len() != n {
            return Err(Error::param("representations and labels must align"));
        }
        if n < 2 {
            return Err(Error::param("probe dataset needs at least two points"));
        }
        let dim = representations[0].len();
        if dim == 0 || representations.iter().any(|r| r.len() != dim) {
            return Err(Error::param("representations must share a positive dimension"));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::rng_from(seed));
        let cut = ((n as f64 * TRAIN_FRACTION).round() as usize).clamp(1, n - 1);
        let eval = idx.split_off(cut);
        Ok(ProbeDataset { representations, env_labels, state_labels, train: idx, eval })
    }

    pub fn len(&self) -> usize {
        self.representations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.representations.first().map_or(0, Vec::len)
    }

    /// Copy with every feature shifted and scaled by its training-split mean
    /// and standard deviation; constant features are only centred.
    pub fn standardized(&self) -> ProbeDataset {
        let dim = self.dim();
        let n = self.train.len() as f64;
        let mut mean = vec![0.0; dim];
        for &i in &self.train {
            mean.iter_mut().zip(&self.representations[i]).for_each(|(m, v)| *m += v / n);
        }
        let mut sd = vec![0.0; dim];
        for &i in &self.train {
            sd.iter_mut().zip(&self.representations[i]).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
        }
        let scale: Vec<f64> = sd.iter().map(|v| if v.sqrt() > 1e-12 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        let representations = self
            .representations
            .iter()
            .map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) * s).collect())
            .collect();
        ProbeDataset { representations, ..self.clone() }
    }
}

/// Observations from `envs` under the behavior policy, `per_env` each,
/// encoded by `encode`.
pub fn collect_probe_dataset<F>(
    inst: &BMDPInstance,
    envs: &[usize],
    per_env: usize,
    behavior: &BehaviorPolicy,
    seed: u64,
    encode: F,
) -> Result<ProbeDataset>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut reps = Vec::with_capacity(envs.len() * per_env);
    let (mut env_labels, mut state_labels) = (Vec::new(), Vec::new());
    for &env in envs {
        let mut act_rng = rng::stream(seed, 30, env as u64);
        let mut episodes = 0u64;
        let (mut ep, mut obs) = inst.reset(env, rng::derive_seed(seed, 31, (env as u64) << 32))?;
        for _ in 0..per_env {
            reps.push(encode(obs.as_slice())?);
            env_labels.push(env);
            state_labels.push(ep.state());
            let a = behavior.act(&mut act_rng, inst.core.num_actions, ep.elapsed());
            let out = ep.step(a)?;
            obs = out.obs;
            if out.done {
                episodes += 1;
                (ep, obs) = inst.reset(env, rng::derive_seed(seed, 31, ((env as u64) << 32) | episodes))?;
            }
        }
    }
    ProbeDataset::new(reps, env_labels, state_labels, rng::derive_seed(seed, 32, 0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub eval_every: usize,
    pub lr: f64,
    pub hidden: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Z-scores every feature with statistics of the training split, so the
    /// probe does not reward latents merely for their scale.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { epochs: 100, eval_every: 10, lr: 1e-3, hidden: 64, batch_size: 256, seed: 0, standardize: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub ce: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    pub num_classes: usize,
    /// Eval cross-entropy at epoch 0 and every `eval_every` epochs.
    pub curve: Vec<CurvePoint>,
    pub final_ce: f64,
    pub accuracy: f64,
}

/// Softmax cross-entropy of a classifier head over the rows of `x`.
pub fn probe_loss_graph(tape: &mut Tape, head: &NetVars, x: Var, labels: &[usize]) -> Result<Var> {
    let logits = tape.forward(head, x)?;
    tape.cross_entropy(logits, labels)
}

pub fn probe_loss(head: &ParamSet, x: &Matrix, labels: &[usize]) -> Result<f64> {
    crate::diffnet::eval(&[head], |tape, n| {
        let xv = tape.constant(x.clone());
        probe_loss_graph(tape, &n[0], xv, labels)
    })
}

/// Dense class indices in order of first sorted appearance.
fn dense_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mapped = labels.iter().map(|l| classes.binary_search(l).expect("label present")).collect();
    (mapped, classes.len())
}

fn gather(ds: &ProbeDataset, idx: &[usize]) -> Matrix {
    let dim = ds.dim();
    let mut data = Vec::with_capacity(idx.len() * dim);
    for &i in idx {
        data.extend_from_slice(&ds.representations[i]);
    }
    Matrix { rows: idx.len(), cols: dim, data }
}

fn accuracy(head: &ParamSet, x: &Matrix, labels: &[usize]) -> Result<f64> {
    let logits = head.forward_batch(x, Exec::Sequential)?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| {
            let row = logits.row(i);
            let arg = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            arg == l
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Trains a 3-layer classifier on the frozen representations and tracks the
/// eval cross-entropy.
pub fn train_probe(ds: &ProbeDataset, labels: &[usize], cfg: &ProbeConfig) -> Result<ProbeResult> {
    if labels.len() != ds.len() {
        return Err(Error::param("labels do not match the dataset"));
    }
    if cfg.eval_every == 0 || cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::param("probe needs positive eval interval, batch size and width"));
    }
    let (dense, num_classes) = dense_labels(labels);
    if num_classes < 2 {
        return Err(Error::param("probe needs at least two label classes"));
    }
    let standardized;
    let ds = if cfg.standardize {
        standardized = ds.standardized();
        &standardized
    } else {
        ds
    };
    let mut head =
        mlp(&[ds.dim(), cfg.hidden, cfg.hidden, num_classes], Activation::Identity, rng::derive_seed(cfg.seed, 33, 0))?;
    let mut opt = OptState::new(&head, cfg.lr);
    let eval_x = gather(ds, &ds.eval);
    let eval_y: Vec<usize> = ds.eval.iter().map(|&i| dense[i]).collect();
    let mut curve = vec![CurvePoint { epoch: 0, ce: probe_loss(&head, &eval_x, &eval_y)? }];
    let mut order = ds.train.clone();
    let mut shuffle_rng = rng::stream(cfg.seed, 34, 0);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x = gather(ds, chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| dense[i]).collect();
            let (_, g) = grad_with(Exec::Sequential, &[&head], |tape, n| {
                let xv = tape.constant(x);
                probe_loss_graph(tape, &n[0], xv, &y)
            })?;
            opt.update(&mut head, &g[0])?;
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            curve.push(CurvePoint { epoch, ce: probe_loss(&head, &eval_x, &eval_y)? });
        }
    }
    let final_ce = curve.last().expect("curve has the initial point").ce;
    Ok(ProbeResult { num_classes, curve, final_ce, accuracy: accuracy(&head, &eval_x, &eval_y)? })
}

/// Lower cross-entropy means the representation keeps more environment
/// (task-irrelevant) information.
pub fn probe_env_label(ds: &ProbeDataset, cfg: &ProbeConfig) -> Result<ProbeResult> {
    train_probe(ds, &ds.env_labels, cfg)
}

/// Lower cross-entropy means the representation keeps more latent-state
/// (task-relevant) information.
pub fn probe_state(ds: &ProbeDataset, cfg: &ProbeConfig) -> Result<ProbeResult> {
    train_probe(ds, &ds.state_labels, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn one_hot(k: usize, n: usize) -> Vec<f64> {
        (0..n).map(|j| f64::from(j == k)).collect()
    }

    fn synthetic(n: usize, classes: usize, informative: bool, seed: u64) -> ProbeDataset {
        let mut r = rng::rng_from(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let reps = labels
            .iter()
            .map(|&l| {
                if informative {
                    one_hot(l, classes)
                } else {
                    (0..4).map(|_| StandardNormal.sample(&mut r)).collect()
                }
            })
            .collect();
        ProbeDataset::new(reps, labels.clone(), labels, seed).unwrap()
    }

    fn quick() -> ProbeConfig {
        ProbeConfig { epochs: 40, eval_every: 10, hidden: 32, batch_size: 64, ..ProbeConfig::default() }
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let ds = synthetic(50, 2, true, 1);
        assert_eq!(ds.train.len(), 40);
        let mut all: Vec<usize> = ds.train.iter().chain(&ds.eval).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn informative_features_are_learned() {
        let ds = synthetic(600, 3, true, 2);
        let res = probe_state(&ds, &ProbeConfig { epochs: 100, ..quick() }).unwrap();
        assert!(res.final_ce <= 0.05, "{res:?}");
        assert_eq!(res.accuracy, 1.0);
        assert_eq!(res.curve.iter().map(|p| p.epoch).collect::<Vec<_>>(), (0..=10).map(|e| e * 10).collect::<Vec<_>>());
    }

    #[test]
    fn noise_stays_at_chance() {
        let ds = synthetic(1000, 2, false, 3);
        let res = probe_env_label(&ds, &ProbeConfig { epochs: 20, ..quick() }).unwrap();
        let chance = 2f64.ln();
        assert!((res.curve[0].ce - chance).abs() <= 0.2 * chance);
        assert!((res.final_ce - chance).abs() <= 0.1 * chance, "{res:?}");
    }

    #[test]
    fn single_class_is_rejected() {
        let ds = ProbeDataset::new(vec![vec![1.0]; 5], vec![3; 5], vec![0; 5], 0).unwrap();
        assert!(matches!(probe_env_label(&ds, &quick()), Err(Error::Parameter(_))));
    }

    #[test]
    fn deterministic_in_seed() {
        let ds = synthetic(200, 2, false, 4);
        let cfg = ProbeConfig { epochs: 5, ..quick() };
        assert_eq!(probe_state(&ds, &cfg).unwrap(), probe_state(&ds, &cfg).unwrap());
    }
}
