use rand::Rng as _;

use super::{BMDPInstance, DistractorChain, ObsMap, TaskCore, DEFAULT_HORIZON};
use crate::error::{Error, Result};
use crate::rng;

const MAX_REDRAWS: usize = 1000;

/// Grid navigation task with scrolling background distractors.
///
/// The state is the agent's cell. Actions are up, down, left, right; with
/// probability `slip` the move is replaced by a uniformly random one. Reward is
/// 1 on entering (or staying in) the goal cell, 0 otherwise. The goal defaults
/// to the centre cell, which keeps every cell a few steps away from reward.
///
/// Each environment owns one background tile pattern. Its factors are the
/// `width * height` toroidal scroll offsets of that pattern, so the factor set
/// has `num_envs * width * height` elements and environment `e` only visits its
/// own block. Each step the background scrolls one column with probability
/// `scroll_prob` and, independently, one row with probability
/// `vertical_scroll_prob`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub num_envs: usize,
    pub slip: f64,
    pub scroll_prob: f64,
    pub vertical_scroll_prob: f64,
    /// Goal cell, row-major; `None` means the centre.
    pub goal: Option<usize>,
    pub gamma: f64,
    pub horizon: usize,
    /// Background intensities; the agent marker must not be one of them.
    pub levels: Vec<f64>,
    pub agent_value: f64,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, num_envs: usize) -> Self {
        GridSpec {
            width,
            height,
            num_envs,
            slip: 0.1,
            scroll_prob: 0.8,
            vertical_scroll_prob: 0.5,
            goal: None,
            gamma: 0.99,
            horizon: DEFAULT_HORIZON,
            levels: vec![0.0, 0.25, 0.5, 0.75],
            agent_value: 1.0,
        }
    }

    fn move_cell(&self, cell: usize, action: usize) -> usize {
        let (row, col) = (cell / self.width, cell % self.width);
        let (row, col) = match action {
            0 => (row.saturating_sub(1), col),
            1 => ((row + 1).min(self.height - 1), col),
            2 => (row, col.saturating_sub(1)),
            _ => (row, (col + 1).min(self.width - 1)),
        };
        row * self.width + col
    }

    pub fn build(&self, seed: u64) -> Result<BMDPInstance> {
        let cells = self.width * self.height;
        if cells < 2 {
            return Err(Error::param(format!("{}x{} grid is degenerate", self.width, self.height)));
        }
        if self.num_envs == 0 {
            return Err(Error::param("gridworld needs at least one environment"));
        }
        if self.levels.is_empty() || self.levels.contains(&self.agent_value) {
            return Err(Error::param("agent marker must differ from every background level"));
        }
        let goal = self.goal.unwrap_or((self.height / 2) * self.width + self.width / 2);
        if goal >= cells {
            return Err(Error::param(format!("goal cell {goal} outside the grid")));
        }
        let num_actions = 4;
        let support = vec![0.0, 1.0];
        let mut table = vec![0.0; cells * num_actions * cells * 2];
        for s in 0..cells {
            for a in 0..num_actions {
                let base = (s * num_actions + a) * cells * 2;
                for b in 0..num_actions {
                    let p = if a == b { 1.0 - self.slip } else { 0.0 } + self.slip / num_actions as f64;
                    let next = self.move_cell(s, b);
                    let r = usize::from(next == goal);
                    table[base + next * 2 + r] += p;
                }
            }
        }
        let core = TaskCore::new(cells, num_actions, support, table, self.gamma)?;

        let mut rng = rng::rng_from(seed);
        let offsets = cells;
        let num_factors = self.num_envs * offsets;
        let backgrounds = (0..MAX_REDRAWS)
            .find_map(|_| {
                let patterns: Vec<Vec<f64>> = (0..self.num_envs)
                    .map(|_| (0..cells).map(|_| self.levels[rng.random_range(0..self.levels.len())]).collect())
                    .collect();
                let rendered: Vec<Vec<f64>> =
                    patterns.iter().flat_map(|p| (0..offsets).map(move |k| self.scrolled(p, k))).collect();
                // the agent marker hides one cell, so patterns must differ in two
                let separated = (0..rendered.len()).all(|i| {
                    (i + 1..rendered.len())
                        .all(|j| rendered[i].iter().zip(&rendered[j]).filter(|(a, b)| a != b).count() >= 2)
                });
                separated.then_some(rendered)
            })
            .ok_or_else(|| Error::param("grid too small to separate the background patterns"))?;

        let chains = (0..self.num_envs)
            .map(|env_id| {
                let mut chain = vec![0.0; num_factors * num_factors];
                for x in 0..num_factors {
                    let (block, k) = (x / offsets, x % offsets);
                    let (dy, dx) = (k / self.width, k % self.width);
                    for (step_x, px) in [(0, 1.0 - self.scroll_prob), (1, self.scroll_prob)] {
                        for (step_y, py) in [(0, 1.0 - self.vertical_scroll_prob), (1, self.vertical_scroll_prob)] {
                            let next = block * offsets
                                + ((dy + step_y) % self.height) * self.width
                                + (dx + step_x) % self.width;
                            chain[x * num_factors + next] += px * py;
                        }
                    }
                }
                let mut init = vec![0.0; num_factors];
                init[env_id * offsets..(env_id + 1) * offsets].fill(1.0 / offsets as f64);
                DistractorChain { env_id, num_factors, chain, init }
            })
            .collect();

        let inst = BMDPInstance {
            core,
            chains,
            obs_map: ObsMap::Grid {
                width: self.width,
                height: self.height,
                agent_value: self.agent_value,
                backgrounds,
            },
            obs_dim: cells,
            num_factors,
            horizon: self.horizon,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn scrolled(&self, pattern: &[f64], offset: usize) -> Vec<f64> {
        let (dy, dx) = (offset / self.width, offset % self.width);
        (0..self.height)
            .flat_map(|row| {
                (0..self.width)
                    .map(move |col| pattern[((row + dy) % self.height) * self.width + (col + dx) % self.width])
            })
            .collect()
    }
}

pub fn make_gridworld(width: usize, height: usize, num_envs: usize, seed: u64) -> Result<BMDPInstance> {
    GridSpec::new(width, height, num_envs).build(seed)
}
