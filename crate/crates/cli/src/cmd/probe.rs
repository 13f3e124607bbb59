use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Args;
use cresp_core::bmdp::{BMDPInstance, BehaviorPolicy};
use cresp_core::evaluation::{collect_probe_dataset, probe_env_label, probe_state, ProbeConfig, ProbeResult};
use cresp_core::rng::derive_seed;
use cresp_core::training::Objective;
use serde::Serialize;

use super::train::Checkpoint;
use crate::io;

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Encoder checkpoint; repeat once per training seed.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    /// Second encoder family to compare against; repeat once per training seed.
    #[arg(long)]
    pub compare: Vec<PathBuf>,
    /// Probe runs; run k uses the k-th checkpoint (cycling) and probe seed `seed + k`.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probe transitions collected per held-out environment.
    #[arg(long, default_value_t = 5000)]
    pub per_env: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Held-out environments (default: those the checkpoint was not trained on).
    #[arg(long, value_delimiter = ',')]
    pub envs: Option<Vec<usize>>,
    #[arg(long, default_value = "probe")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeRun {
    pub seed: u64,
    pub checkpoint: String,
    pub objective: Objective,
    pub envs: Vec<usize>,
    pub env_ce: f64,
    pub state_ce: f64,
    pub state_accuracy: f64,
    pub env_probe: ProbeResult,
    pub state_probe: ProbeResult,
}

#[derive(Clone, Debug, Serialize)]
pub struct Ordering {
    pub seeds: usize,
    /// Runs where the primary encoder's env CE is at least the comparison's.
    pub env_ce_not_lower: usize,
    /// Runs where the primary encoder's state CE is at most the comparison's.
    pub state_ce_not_higher: usize,
    pub min_state_accuracy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub instance_digest: String,
    pub runs: Vec<ProbeRun>,
    pub compare: Vec<ProbeRun>,
    pub ordering: Option<Ordering>,
}

fn held_out(inst: &BMDPInstance, ck: &Checkpoint, explicit: &Option<Vec<usize>>) -> Result<Vec<usize>> {
    let envs = match explicit {
        Some(envs) => envs.clone(),
        None => {
            let trained = &ck.config.train_envs;
            if trained.is_empty() {
                bail!("checkpoint was trained on every environment; pass --envs to choose probe environments");
            }
            (0..inst.num_envs()).filter(|e| !trained.contains(e)).collect()
        }
    };
    if envs.len() < 2 {
        bail!("the environment probe needs at least two held-out environments, got {envs:?}");
    }
    Ok(envs)
}

fn probe_one(inst: &BMDPInstance, path: &Path, seed: u64, a: &ProbeArgs) -> Result<ProbeRun> {
    let ck = Checkpoint::load(path)?;
    if ck.instance_digest != inst.digest() {
        bail!("checkpoint {} was trained on a different instance", path.display());
    }
    if ck.model.encoder.input_dim() != inst.obs_dim {
        bail!("checkpoint {} expects observations of size {}", path.display(), ck.model.encoder.input_dim());
    }
    let envs = held_out(inst, &ck, &a.envs)?;
    let ds =
        collect_probe_dataset(inst, &envs, a.per_env, &BehaviorPolicy::UniformRandom, derive_seed(seed, 34, 0), |o| {
            ck.model.encoder.forward(o)
        })?;
    let cfg = ProbeConfig { epochs: a.epochs, seed, ..ProbeConfig::default() };
    let env_probe = probe_env_label(&ds, &cfg)?;
    let state_probe = probe_state(&ds, &cfg)?;
    Ok(ProbeRun {
        seed,
        checkpoint: path.display().to_string(),
        objective: ck.model.objective,
        envs,
        env_ce: env_probe.final_ce,
        state_ce: state_probe.final_ce,
        state_accuracy: state_probe.accuracy,
        env_probe,
        state_probe,
    })
}

fn curves_csv(groups: &[(&str, &[ProbeRun])]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["family", "objective", "seed", "probe", "epoch", "ce"])?;
    for (family, runs) in groups {
        for r in *runs {
            for (probe, res) in [("env", &r.env_probe), ("state", &r.state_probe)] {
                for p in &res.curve {
                    w.serialize((family, r.objective, r.seed, probe, p.epoch, p.ce))?;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(String::from_utf8(bytes)?)
}

pub fn run(a: &ProbeArgs) -> Result<ExitCode> {
    if a.seeds == 0 {
        bail!("--seeds must be positive");
    }
    let inst = io::read_instance(&a.instance)?;
    let family = |paths: &[PathBuf]| -> Result<Vec<ProbeRun>> {
        (0..a.seeds).map(|k| probe_one(&inst, &paths[k % paths.len()], a.seed + k as u64, a)).collect()
    };
    let runs = family(&a.checkpoint)?;
    let compare = if a.compare.is_empty() { Vec::new() } else { family(&a.compare)? };
    let ordering = (!compare.is_empty()).then(|| Ordering {
        seeds: a.seeds,
        env_ce_not_lower: runs.iter().zip(&compare).filter(|(p, c)| p.env_ce >= c.env_ce).count(),
        state_ce_not_higher: runs.iter().zip(&compare).filter(|(p, c)| p.state_ce <= c.state_ce).count(),
        min_state_accuracy: runs.iter().map(|r| r.state_accuracy).fold(f64::INFINITY, f64::min),
    });

    for (family, rs) in [("primary", &runs), ("compare", &compare)] {
        for r in rs.iter() {
            println!(
                "{family:<8} {:<10} seed {}  env_ce {:.6}  state_ce {:.6}  state_acc {:.4}",
                r.objective.name(),
                r.seed,
                r.env_ce,
                r.state_ce,
                r.state_accuracy
            );
        }
    }
    if let Some(o) = &ordering {
        println!(
            "env ce not lower in {}/{} seeds; state ce not higher in {}/{} seeds",
            o.env_ce_not_lower, o.seeds, o.state_ce_not_higher, o.seeds
        );
    }
    io::write_text(&a.out_dir.join("curves.csv"), &curves_csv(&[("primary", &runs), ("compare", &compare)])?)?;
    let report = ProbeReport { instance_digest: inst.digest(), runs, compare, ordering };
    io::write_json(&a.out_dir.join("probe_report.json"), &report)?;
    Ok(ExitCode::SUCCESS)
}
