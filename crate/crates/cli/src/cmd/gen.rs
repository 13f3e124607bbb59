use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use cresp_core::bmdp::{make_random_bmdp, GridSpec};

use crate::io;

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Gridworld of the given size, e.g. `5x5`.
    #[arg(long, value_name = "WxH", conflicts_with = "random")]
    pub gridworld: Option<String>,
    /// Random Block MDP with a linear observation map.
    #[arg(long)]
    pub random: bool,
    #[arg(long, default_value_t = 2)]
    pub envs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4, help_heading = "Random instances")]
    pub states: usize,
    #[arg(long, default_value_t = 2, help_heading = "Random instances")]
    pub actions: usize,
    #[arg(long, default_value_t = 3, help_heading = "Random instances")]
    pub rewards: usize,
    /// Distractor factors shared by all environments.
    #[arg(long, default_value_t = 3, help_heading = "Random instances")]
    pub factors: usize,
    #[arg(long, default_value_t = 16, help_heading = "Random instances")]
    pub obs_dim: usize,
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s.split_once(['x', 'X']).with_context(|| format!("grid size '{s}' should look like 5x5"))?;
    let w: usize = w.trim().parse().with_context(|| format!("bad width in '{s}'"))?;
    let h: usize = h.trim().parse().with_context(|| format!("bad height in '{s}'"))?;
    Ok((w, h))
}

pub fn run(args: &GenArgs) -> Result<ExitCode> {
    let inst = match (&args.gridworld, args.random) {
        (Some(size), false) => {
            let (w, h) = parse_size(size)?;
            GridSpec::new(w, h, args.envs).build(args.seed)?
        }
        (None, true) => {
            make_random_bmdp(args.seed, args.states, args.actions, args.rewards, args.envs, args.factors, args.obs_dim)?
        }
        _ => bail!("pass exactly one of --gridworld WxH or --random"),
    };
    let report = inst.validate()?;
    io::write_text(&args.out, &(inst.to_json()? + "\n"))?;
    println!(
        "states: {}  actions: {}  envs: {}  factors: {}  obs_dim: {}",
        report.num_states, report.num_actions, report.num_envs, report.num_factors, report.obs_dim
    );
    println!("min observation distance: {:.6}", report.min_pairwise_distance);
    println!("injectivity: ok");
    println!("digest: {}", inst.digest());
    Ok(ExitCode::SUCCESS)
}
