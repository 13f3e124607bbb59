use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::losses;
use super::{ReplayBuffer, TrajectorySegment, Transition};
use crate::bmdp::{BMDPInstance, BehaviorPolicy, Episode, ObservationVec};
use crate::charfn::{sample_omega, CFConfig, OmegaBatch};
use crate::diffnet::{grad_with, init_dense, mlp, Activation, NetVars, OptState, ParamSet, Tape, Var, DEFAULT_LR};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Cresp,
    Rp,
    RpSum,
    CrespSum,
    Rdp,
}

impl Objective {
    pub const ALL: [Objective; 5] =
        [Objective::Cresp, Objective::Rp, Objective::RpSum, Objective::CrespSum, Objective::Rdp];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Cresp => "cresp",
            Objective::Rp => "rp",
            Objective::RpSum => "rp_sum",
            Objective::CrespSum => "cresp_sum",
            Objective::Rdp => "rdp",
        }
    }

    pub fn predicts_cf(self) -> bool {
        matches!(self, Objective::Cresp | Objective::CrespSum)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL.into_iter().find(|o| o.name() == s).ok_or_else(|| {
            Error::param(format!("unknown objective '{s}' (expected cresp, rp, rp_sum, cresp_sum or rdp)"))
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorOutput {
    #[default]
    Identity,
    Tanh,
}

impl PredictorOutput {
    fn activation(self) -> Activation {
        match self {
            PredictorOutput::Identity => Activation::Identity,
            PredictorOutput::Tanh => Activation::Tanh,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub cf: CFConfig,
    pub batch_size: usize,
    pub gradient_steps: usize,
    pub objective: Objective,
    pub seed: u64,
    pub lr: f64,
    pub latent_dim: usize,
    pub hidden: usize,
    pub predictor_output: PredictorOutput,
    /// Collection rounds (one step in every training environment) before the
    /// first update.
    pub initial_steps: usize,
    /// Collection rounds between consecutive updates.
    pub env_steps_per_update: usize,
    pub buffer_capacity: usize,
    /// Environments that supply data; empty means all of them.
    pub train_envs: Vec<usize>,
    pub behavior: BehaviorPolicy,
    /// Records elapsed wall time per step. Off by default so that metrics are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            cf: CFConfig::default(),
            batch_size: 256,
            gradient_steps: 2000,
            objective: Objective::Cresp,
            seed: 0,
            lr: DEFAULT_LR,
            latent_dim: 16,
            hidden: 64,
            predictor_output: PredictorOutput::Identity,
            initial_steps: 1000,
            env_steps_per_update: 1,
            buffer_capacity: 100_000,
            train_envs: Vec::new(),
            behavior: BehaviorPolicy::UniformRandom,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.cf.validate()?;
        if self.batch_size == 0 || self.latent_dim == 0 || self.hidden == 0 || self.buffer_capacity == 0 {
            return Err(Error::param("batch size, latent size, hidden width and buffer capacity must be positive"));
        }
        if self.objective == Objective::Rdp && self.batch_size < 2 {
            return Err(Error::param("the contrastive objective needs a batch of at least 2"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size > self.buffer_capacity {
            return Err(Error::param("batch size exceeds buffer capacity"));
        }
        Ok(())
    }

    fn envs(&self, inst: &BMDPInstance) -> Result<Vec<usize>> {
        let envs: Vec<usize> =
            if self.train_envs.is_empty() { (0..inst.num_envs()).collect() } else { self.train_envs.clone() };
        if let Some(e) = envs.iter().find(|&&e| e >= inst.num_envs()) {
            return Err(Error::param(format!("training environment {e} not in instance")));
        }
        Ok(envs)
    }
}

/// Encoder plus objective-specific heads:
/// `cresp`/`cresp_sum`: `[psi_cos, psi_sin]`; `rp`/`rp_sum`: `[reward head]`;
/// `rdp`: `[reward head, projection]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub objective: Objective,
    pub encoder: ParamSet,
    pub heads: Vec<ParamSet>,
    pub t: usize,
    pub gamma_seq: f64,
}

impl Model {
    pub fn new(cfg: &TrainConfig, obs_dim: usize, num_actions: usize) -> Result<Self> {
        cfg.validate()?;
        let (t, l, h) = (cfg.cf.t, cfg.latent_dim, cfg.hidden);
        let seed = |i| rng::derive_seed(cfg.seed, 1, i);
        let encoder = init_dense(&[obs_dim, h, l], &[Activation::Relu, Activation::Tanh], seed(0))?;
        let out = cfg.predictor_output.activation();
        let actions = t * num_actions;
        let heads = match cfg.objective {
            Objective::Cresp | Objective::CrespSum => {
                let omega_dim = if cfg.objective == Objective::Cresp { t } else { 1 };
                let input = l + actions + omega_dim;
                vec![mlp(&[input, h, h, 1], out, seed(1))?, mlp(&[input, h, h, 1], out, seed(2))?]
            }
            Objective::Rp => vec![mlp(&[l + actions, h, t], Activation::Identity, seed(1))?],
            Objective::RpSum => vec![mlp(&[l + actions, h, 1], Activation::Identity, seed(1))?],
            Objective::Rdp => vec![
                mlp(&[l + actions, h, t], Activation::Identity, seed(1))?,
                mlp(&[l + num_actions, h, l], Activation::Identity, seed(2))?,
            ],
        };
        Ok(Model { objective: cfg.objective, encoder, heads, t, gamma_seq: cfg.cf.gamma_seq })
    }

    pub fn nets(&self) -> Vec<&ParamSet> {
        std::iter::once(&self.encoder).chain(&self.heads).collect()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn encode(&self, o: &ObservationVec) -> Result<Vec<f64>> {
        self.encoder.forward(o.as_slice())
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.objective {
            Objective::Cresp | Objective::CrespSum | Objective::Rdp => 2,
            Objective::Rp | Objective::RpSum => 1,
        };
        if self.heads.len() != expected {
            return Err(Error::param(format!("{} model needs {expected} heads", self.objective)));
        }
        self.nets().into_iter().try_for_each(ParamSet::validate)
    }

    /// Frequencies this objective draws at a given update.
    pub fn omegas(&self, cfg: &CFConfig, seed: u64) -> Result<Option<OmegaBatch>> {
        match self.objective {
            Objective::Cresp => Ok(Some(sample_omega(cfg, seed)?)),
            Objective::CrespSum => Ok(Some(sample_omega(&CFConfig { t: 1, ..cfg.clone() }, seed)?)),
            _ => Ok(None),
        }
    }

    /// The objective's graph over nets bound in the order of [`Model::nets`].
    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        nets: &[NetVars],
        batch: &[TrajectorySegment],
        omegas: Option<&OmegaBatch>,
    ) -> Result<Var> {
        let need = || omegas.ok_or_else(|| Error::param("objective needs frequencies"));
        match self.objective {
            Objective::Cresp => losses::cresp_graph(tape, &nets[0], &nets[1], &nets[2], batch, need()?, self.gamma_seq),
            Objective::CrespSum => {
                losses::cresp_sum_graph(tape, &nets[0], &nets[1], &nets[2], batch, need()?, self.gamma_seq)
            }
            Objective::Rp => losses::rp_graph(tape, &nets[0], &nets[1], batch),
            Objective::RpSum => losses::rp_sum_graph(tape, &nets[0], &nets[1], batch, self.gamma_seq),
            Objective::Rdp => {
                let rp = losses::rp_graph(tape, &nets[0], &nets[1], batch)?;
                let nce = losses::rdp_contrastive_graph(tape, &nets[0], &nets[2], batch)?;
                Ok(tape.add(rp, nce))
            }
        }
    }

    pub fn loss_and_grad(
        &self,
        exec: Exec,
        batch: &[TrajectorySegment],
        omegas: Option<&OmegaBatch>,
    ) -> Result<(f64, Vec<ParamSet>)> {
        grad_with(exec, &self.nets(), |tape, nets| self.loss_graph(tape, nets, batch, omegas))
    }

    fn nets_mut(&mut self) -> impl Iterator<Item = &mut ParamSet> {
        std::iter::once(&mut self.encoder).chain(self.heads.iter_mut())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub objective: Objective,
    pub loss: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<MetricRecord>,
}

const STREAM_RESET: u64 = 10;
const STREAM_ACTION: u64 = 11;
const STREAM_BATCH: u64 = 12;
const STREAM_OMEGA: u64 = 13;

/// One live episode per training environment, stepping under the behavior
/// policy and feeding a shared buffer.
struct Collector<'a> {
    inst: &'a BMDPInstance,
    seed: u64,
    behavior: BehaviorPolicy,
    slots: Vec<Slot<'a>>,
}

struct Slot<'a> {
    env_id: usize,
    episodes: u64,
    episode: Episode<'a>,
    obs: ObservationVec,
    rng: rng::Rng,
}

impl<'a> Collector<'a> {
    fn new(inst: &'a BMDPInstance, envs: &[usize], seed: u64, behavior: BehaviorPolicy) -> Result<Self> {
        let slots = envs
            .iter()
            .map(|&env_id| {
                let (episode, obs) = inst.reset(env_id, rng::derive_seed(seed, STREAM_RESET, (env_id as u64) << 32))?;
                Ok(Slot { env_id, episodes: 0, episode, obs, rng: rng::stream(seed, STREAM_ACTION, env_id as u64) })
            })
            .collect::<Result<_>>()?;
        Ok(Collector { inst, seed, behavior, slots })
    }

    /// Advances every environment by one step, in environment order.
    fn round(&mut self, buf: &mut ReplayBuffer) -> Result<()> {
        let num_actions = self.inst.core.num_actions;
        for slot in &mut self.slots {
            let action = self.behavior.act(&mut slot.rng, num_actions, slot.episode.elapsed());
            let state = slot.episode.state();
            let out = slot.episode.step(action)?;
            buf.push_transition(Transition {
                env_id: slot.env_id,
                obs: std::mem::replace(&mut slot.obs, out.obs.clone()),
                state,
                action,
                reward: out.reward,
                next_obs: out.obs,
                done: out.done,
            });
            if out.done {
                slot.episodes += 1;
                let seed = rng::derive_seed(self.seed, STREAM_RESET, ((slot.env_id as u64) << 32) | slot.episodes);
                let (episode, obs) = self.inst.reset(slot.env_id, seed)?;
                slot.episode = episode;
                slot.obs = obs;
            }
        }
        Ok(())
    }
}

pub fn train_representation(inst: &BMDPInstance, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(inst, cfg, Exec::default(), |_, _| Ok(()))
}

/// Training loop with an observer called after every update with the step
/// number (1-based) and the current model.
pub fn train_with<F>(inst: &BMDPInstance, cfg: &TrainConfig, exec: Exec, mut observer: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &Model) -> Result<()>,
{
    cfg.validate()?;
    let envs = cfg.envs(inst)?;
    let mut model = Model::new(cfg, inst.obs_dim, inst.core.num_actions)?;
    let mut history = Vec::with_capacity(cfg.gradient_steps);
    if cfg.gradient_steps == 0 {
        return Ok(TrainOutcome { model, history });
    }

    let mut buf = ReplayBuffer::new(cfg.buffer_capacity, cfg.cf.t)?;
    let mut collector = Collector::new(inst, &envs, cfg.seed, cfg.behavior.clone())?;
    for _ in 0..cfg.initial_steps {
        collector.round(&mut buf)?;
    }
    let mut opt: Vec<OptState> = model.nets().iter().map(|p| OptState::new(p, cfg.lr)).collect();
    let start = Instant::now();

    for step in 1..=cfg.gradient_steps {
        for _ in 0..cfg.env_steps_per_update {
            collector.round(&mut buf)?;
        }
        while buf.len() < cfg.batch_size {
            collector.round(&mut buf)?;
        }
        let batch = buf.sample_batch(cfg.batch_size, rng::derive_seed(cfg.seed, STREAM_BATCH, step as u64))?;
        let omegas = model.omegas(&cfg.cf, rng::derive_seed(cfg.seed, STREAM_OMEGA, step as u64))?;
        let (loss, grads) = model.loss_and_grad(exec, &batch, omegas.as_ref())?;
        for ((p, g), st) in model.nets_mut().zip(&grads).zip(&mut opt) {
            st.update(p, g)?;
        }
        let wall_ms = if cfg.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 };
        history.push(MetricRecord { step, objective: cfg.objective, loss, wall_ms });
        observer(step, &model)?;
    }
    Ok(TrainOutcome { model, history })
}
