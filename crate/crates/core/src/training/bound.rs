use serde::Serialize;

use super::Model;
use crate::bmdp::{ObservationVec, TaskCore};
use crate::charfn::{cf_target, CFValue, OmegaBatch};
use crate::error::{Error, Result};
use crate::rng;
use crate::rsd_oracle::{enumerate_rsd, exact_cf, ActionSeq};

/// Sampled CF loss against the exact CF regression loss for one predictor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UpperBoundReport {
    /// Mean over samples and frequencies of the cos/sin target loss.
    pub monte_carlo: f64,
    /// Standard error of `monte_carlo`.
    pub sigma: f64,
    /// Mean over frequencies of `|psi - phi|^2`.
    pub exact: f64,
    /// Mean over frequencies of `1 - |phi|^2`.
    pub expected_gap: f64,
}

impl UpperBoundReport {
    pub fn gap(&self) -> f64 {
        self.monte_carlo - self.exact
    }

    pub fn bound_holds(&self, sigmas: f64) -> bool {
        self.monte_carlo >= self.exact - sigmas * self.sigma
    }

    pub fn gap_matches(&self, sigmas: f64) -> bool {
        (self.gap() - self.expected_gap).abs() <= sigmas * self.sigma
    }
}

/// Compares the sampled loss of fixed predictions `psi[k]` (one per frequency
/// row) with the exact loss, using `n` reward sequences drawn from `s` under
/// `actions`.
#[allow(clippy::too_many_arguments)]
pub fn upper_bound_check(
    core: &TaskCore,
    s: usize,
    actions: &ActionSeq,
    omegas: &OmegaBatch,
    gamma_seq: f64,
    psi: &[CFValue],
    n: usize,
    seed: u64,
) -> Result<UpperBoundReport> {
    if psi.len() != omegas.kappa || omegas.t != actions.len() {
        return Err(Error::param("need one prediction per frequency and frequencies of length T"));
    }
    if n < 2 {
        return Err(Error::param("need at least two samples"));
    }
    let rsd = enumerate_rsd(core, s, actions)?;
    let phis: Vec<CFValue> = omegas.rows().map(|w| exact_cf(&rsd, w, gamma_seq)).collect::<Result<_>>()?;
    let k = omegas.kappa as f64;
    let exact = psi.iter().zip(&phis).map(|(p, f)| p.dist(*f).powi(2)).sum::<f64>() / k;
    let expected_gap = phis.iter().map(|f| 1.0 - f.norm_sqr()).sum::<f64>() / k;

    let mut r = rng::rng_from(seed);
    let mut per_sample = Vec::with_capacity(n);
    for _ in 0..n {
        let rewards = core.sample_reward_sequence(&mut r, s, &actions.0);
        let mut total = 0.0;
        for (w, p) in omegas.rows().zip(psi) {
            let (c, sn) = cf_target(w, &rewards, gamma_seq)?;
            total += (p.re - c).powi(2) + (p.im - sn).powi(2);
        }
        per_sample.push(total / k);
    }
    let mean = per_sample.iter().sum::<f64>() / n as f64;
    let var = per_sample.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(UpperBoundReport { monte_carlo: mean, sigma: (var / n as f64).sqrt(), exact, expected_gap })
}

impl Model {
    /// Predicted `(psi_cos, psi_sin)` at each frequency row for observation
    /// `o` and action sequence `actions`. Only CF objectives have predictors.
    pub fn predict_cf(&self, o: &ObservationVec, actions: &[usize], omegas: &OmegaBatch) -> Result<Vec<CFValue>> {
        let (pc, ps) = match self.heads.as_slice() {
            [pc, ps] if self.objective.predicts_cf() => (pc, ps),
            _ => return Err(Error::param(format!("{} has no CF predictor", self.objective))),
        };
        let z = self.encode(o)?;
        let num_actions = (pc.input_dim() - z.len() - omegas.t) / actions.len().max(1);
        let mut base = z;
        for &a in actions {
            if a >= num_actions {
                return Err(Error::param(format!("action {a} out of range")));
            }
            base.extend((0..num_actions).map(|j| f64::from(j == a)));
        }
        omegas
            .rows()
            .map(|w| {
                let mut x = base.clone();
                x.extend_from_slice(w);
                Ok(CFValue::new(pc.forward(&x)?[0], ps.forward(&x)?[0]))
            })
            .collect()
    }
}
