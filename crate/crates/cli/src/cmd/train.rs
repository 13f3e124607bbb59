use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use cresp_core::par::Exec;
use cresp_core::training::{train_with, MetricRecord, Model, Objective, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::io;

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// One of cresp, rp, rp_sum, cresp_sum, rdp.
    #[arg(long)]
    pub objective: Option<Objective>,
    /// Reward-sequence length.
    #[arg(long = "T")]
    pub t: Option<usize>,
    /// Frequencies per update.
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long = "gamma-seq")]
    pub gamma_seq: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub initial_steps: Option<usize>,
    /// Comma-separated environment ids that supply data (default: all).
    #[arg(long, value_delimiter = ',')]
    pub train_envs: Option<Vec<usize>>,
    /// Record elapsed wall time in metrics.csv (makes the file run-dependent).
    #[arg(long)]
    pub wall_time: bool,
    #[arg(long, default_value = "run")]
    pub out_dir: PathBuf,
    /// Also write `checkpoint_<step>.json` every this many steps.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// JSON training config; its fields override the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub instance_digest: String,
    pub step: usize,
    pub config: TrainConfig,
    pub model: Model,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", path.display()))?;
        ck.model.validate()?;
        Ok(ck)
    }
}

fn from_flags(a: &TrainArgs) -> TrainConfig {
    let mut c = TrainConfig::default();
    if let Some(v) = a.objective {
        c.objective = v;
    }
    if let Some(v) = a.t {
        c.cf.t = v;
    }
    if let Some(v) = a.kappa {
        c.cf.kappa = v;
    }
    if let Some(v) = a.gamma_seq {
        c.cf.gamma_seq = v;
    }
    if let Some(v) = a.steps {
        c.gradient_steps = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if let Some(v) = a.latent_dim {
        c.latent_dim = v;
    }
    if let Some(v) = a.hidden {
        c.hidden = v;
    }
    if let Some(v) = a.initial_steps {
        c.initial_steps = v;
    }
    if let Some(v) = &a.train_envs {
        c.train_envs = v.clone();
    }
    c.record_wall_time = a.wall_time;
    c
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then flags, then the config file.
pub fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let cfg = from_flags(a);
    let Some(path) = &a.config else { return Ok(cfg) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let over: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if !over.is_object() {
        bail!("config {} must be a JSON object", path.display());
    }
    let mut base = serde_json::to_value(&cfg)?;
    merge(&mut base, over);
    serde_json::from_value(base).with_context(|| format!("config {}", path.display()))
}

pub fn write_metrics(path: &Path, history: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in history {
        w.serialize(rec)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    io::write_text(path, std::str::from_utf8(&bytes)?)
}

pub fn run(a: &TrainArgs) -> Result<ExitCode> {
    let inst = io::read_instance(&a.instance)?;
    let cfg = resolve_config(a)?;
    cfg.validate()?;
    if a.checkpoint_every == Some(0) {
        bail!("--checkpoint-every must be positive");
    }
    let digest = inst.digest();
    let out = &a.out_dir;
    io::write_json(&out.join("config.json"), &cfg)?;

    let outcome = train_with(&inst, &cfg, Exec::default(), |step, model| {
        if a.checkpoint_every.is_some_and(|k| step % k == 0) {
            let ck = Checkpoint { instance_digest: digest.clone(), step, config: cfg.clone(), model: model.clone() };
            io::write_json(&out.join(format!("checkpoint_{step}.json")), &ck)
                .map_err(|e| cresp_core::Error::Io(std::io::Error::other(format!("{e:#}"))))?;
        }
        Ok(())
    })?;

    write_metrics(&out.join("metrics.csv"), &outcome.history)?;
    let ck =
        Checkpoint { instance_digest: digest, step: cfg.gradient_steps, config: cfg.clone(), model: outcome.model };
    io::write_json(&out.join("checkpoint.json"), &ck)?;

    let tail = outcome.history.len().min(20);
    let recent = &outcome.history[outcome.history.len() - tail..];
    if tail > 0 {
        let mean = recent.iter().map(|r| r.loss).sum::<f64>() / tail as f64;
        println!("{}: {} steps, mean loss over last {tail}: {mean:.6}", cfg.objective, cfg.gradient_steps);
    }
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}
