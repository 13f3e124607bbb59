//! The property suite behind the `verify` command: CF identities, oracle
//! agreement, observation invariance of CFs, the sampled-loss upper bound,
//! the value-bound sweep and gradient checks for every loss.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::bmdp::{make_random_bmdp, ObservationVec, TaskCore};
use crate::charfn::{empirical_cf, sample_omega, CFConfig, CFValue};
use crate::diffnet::{fd, grad_with, mlp, Activation, Matrix, ParamSet};
use crate::error::{Error, Result};
use crate::evaluation::{bound_sweep, probe_loss, probe_loss_graph};
use crate::par::Exec;
use crate::rng;
use crate::rsd_oracle::{enumerate_rsd, exact_cf, max_cf_gap, ActionSeq, ExactRSD};
use crate::training::{losses, upper_bound_check, Model, Objective, TrainConfig, TrajectorySegment};

/// Deliberate defects used to show that the suite catches them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// The imaginary part ignores the sign of the phase.
    CfSign,
}

impl std::str::FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cf_sign" | "cf-sign" => Ok(Fault::CfSign),
            _ => Err(Error::param(format!("unknown fault '{s}' (expected cf_sign)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Instances in the value-bound sweep; 0 skips it.
    pub bound_sweep: usize,
    pub fault: Option<Fault>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { seed: 7, bound_sweep: 50, fault: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst measured deviation (or count, for counting checks).
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        CheckResult { name: name.into(), passed: measured <= tolerance, measured, tolerance, detail }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub fault: Option<Fault>,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

pub const CF_AGREEMENT_SAMPLES: usize = 20_000;
pub const CF_AGREEMENT_OMEGAS: usize = 64;
pub const CF_AGREEMENT_TOL: f64 = 0.05;
pub const IDENTITY_CASES: usize = 1000;
pub const SYMMETRY_TOL: f64 = 1e-12;
pub const INVARIANCE_INSTANCES: usize = 20;
pub const INVARIANCE_OMEGAS: usize = 128;
pub const INVARIANCE_TOL: f64 = 1e-12;
pub const DISTINGUISH_MIN: f64 = 1e-6;
pub const UPPER_BOUND_PREDICTORS: usize = 10;
pub const UPPER_BOUND_SAMPLES: usize = 10_000;
pub const FD_COORDS: usize = 100;
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// The CF under test: the oracle, or a faulty variant of it.
fn cf_under_test(rsd: &ExactRSD, omega: &[f64], gamma_seq: f64, fault: Option<Fault>) -> Result<CFValue> {
    match fault {
        None => exact_cf(rsd, omega, gamma_seq),
        Some(Fault::CfSign) => {
            let w = crate::charfn::discount_weights(rsd.t, gamma_seq);
            let (mut re, mut im, mut mass) = (0.0, 0.0, 0.0);
            for e in &rsd.entries {
                let u: f64 = omega.iter().zip(&e.rewards).zip(&w).map(|((o, r), g)| g * o * r).sum();
                re += e.prob * u.cos();
                im += e.prob * u.abs().sin();
                mass += e.prob;
            }
            Ok(CFValue::new(re / mass, im / mass))
        }
    }
}

fn normal_vec(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

/// Empirical CF from sampled sequences against the exact CF.
pub fn cf_agreement(seed: u64, fault: Option<Fault>) -> Result<CheckResult> {
    let inst = make_random_bmdp(rng::derive_seed(seed, 40, 0), 4, 2, 3, 1, 2, 8)?;
    let actions = ActionSeq::new(vec![0, 1, 1], 2)?;
    let gamma_seq = CFConfig::default().gamma_seq;
    let rsd = enumerate_rsd(&inst.core, 0, &actions)?;
    let mut r = rng::stream(seed, 40, 1);
    let samples: Vec<Vec<f64>> =
        (0..CF_AGREEMENT_SAMPLES).map(|_| inst.core.sample_reward_sequence(&mut r, 0, &actions.0)).collect();
    let omegas =
        sample_omega(&CFConfig { t: 3, kappa: CF_AGREEMENT_OMEGAS, gamma_seq }, rng::derive_seed(seed, 40, 2))?;
    let mut worst = 0.0_f64;
    for w in omegas.rows() {
        let emp = empirical_cf(&samples, w, gamma_seq)?;
        worst = worst.max(emp.dist(cf_under_test(&rsd, w, gamma_seq, fault)?));
    }
    Ok(CheckResult::at_most(
        "cf oracle agreement",
        worst,
        CF_AGREEMENT_TOL,
        format!("{CF_AGREEMENT_SAMPLES} samples, {CF_AGREEMENT_OMEGAS} frequencies, T = 3"),
    ))
}

/// `phi(0) = 1`, `phi(-w) = conj phi(w)` and `|phi| <= 1` on random RSDs.
pub fn cf_identities(seed: u64, fault: Option<Fault>) -> Result<Vec<CheckResult>> {
    let mut r = rng::stream(seed, 41, 0);
    let (mut zero, mut sym, mut modulus) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..IDENTITY_CASES {
        let t = r.random_range(1..=4);
        let n = r.random_range(1..=6);
        let weights: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let pairs = (0..n).map(|i| ((0..t).map(|_| r.random_range(-2.0..2.0)).collect(), weights[i] / total)).collect();
        let rsd = ExactRSD::from_pairs(pairs)?;
        let gamma_seq = r.random_range(0.5..=1.0);
        let w = normal_vec(&mut r, t).into_iter().map(|x| 3.0 * x).collect::<Vec<_>>();
        let neg: Vec<f64> = w.iter().map(|x| -x).collect();
        let phi0 = cf_under_test(&rsd, &vec![0.0; t], gamma_seq, fault)?;
        zero = zero.max(phi0.dist(CFValue::ONE));
        let p = cf_under_test(&rsd, &w, gamma_seq, fault)?;
        let q = cf_under_test(&rsd, &neg, gamma_seq, fault)?;
        sym = sym.max(q.dist(p.conj()));
        modulus = modulus.max(p.modulus() - 1.0);
    }
    let detail = format!("{IDENTITY_CASES} random distributions");
    Ok(vec![
        CheckResult {
            name: "cf at zero".into(),
            passed: zero == 0.0,
            measured: zero,
            tolerance: 0.0,
            detail: detail.clone(),
        },
        CheckResult::at_most("conjugate symmetry", sym, SYMMETRY_TOL, detail.clone()),
        CheckResult::at_most("cf modulus", modulus, SYMMETRY_TOL, detail),
    ])
}

/// Observations of one latent state share every CF; a distinguishing pair
/// is told apart; pair classification by CF gap matches the latent labels.
pub fn observation_invariance(seed: u64) -> Result<Vec<CheckResult>> {
    let gamma_seq = CFConfig::default().gamma_seq;
    let (mut worst_same, mut misclassified, mut pairs) = (0.0_f64, 0usize, 0usize);
    for i in 0..INVARIANCE_INSTANCES as u64 {
        let inst = make_random_bmdp(rng::derive_seed(seed, 42, i), 3, 2, 2, 2, 2, 8)?;
        let obs: Vec<(usize, ObservationVec)> = (0..3)
            .flat_map(|s| (0..2).map(move |x| (s, x)))
            .map(|(s, x)| Ok((s, inst.observe(s, x)?)))
            .collect::<Result<_>>()?;
        for t in 1..=2 {
            let omegas =
                sample_omega(&CFConfig { t, kappa: INVARIANCE_OMEGAS, gamma_seq }, rng::derive_seed(seed, 43, i))?;
            for (a, (sa, oa)) in obs.iter().enumerate() {
                for (sb, ob) in &obs[a + 1..] {
                    let gap = max_cf_gap(&inst, oa, ob, &omegas, gamma_seq)?;
                    pairs += 1;
                    if sa == sb {
                        worst_same = worst_same.max(gap);
                    }
                    if (gap <= INVARIANCE_TOL) != (sa == sb) {
                        misclassified += 1;
                    }
                }
            }
        }
    }

    // two states with equal one-step reward laws but different successors
    let mut t = vec![0.0; 2 * 2 * 2];
    t[0] = 0.5; // s0 -> s0, r = 0
    t[1] = 0.5; // s0 -> s0, r = 1
    t[4 + 2] = 0.5; // s1 -> s1, r = 0
    t[4 + 3] = 0.5; // s1 -> s1, r = 1
    let mut core = TaskCore::new(2, 1, vec![0.0, 1.0], t, 0.9)?;
    core.transition = vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    core.validate()?;
    let omegas = sample_omega(&CFConfig { t: 2, kappa: INVARIANCE_OMEGAS, gamma_seq }, seed)?;
    let a = ActionSeq::new(vec![0, 0], 1)?;
    let (p, q) = (enumerate_rsd(&core, 0, &a)?, enumerate_rsd(&core, 1, &a)?);
    let mut distinguish = 0.0_f64;
    for w in omegas.rows() {
        distinguish = distinguish.max(exact_cf(&p, w, gamma_seq)?.dist(exact_cf(&q, w, gamma_seq)?));
    }
    Ok(vec![
        CheckResult::at_most(
            "same-state cf invariance",
            worst_same,
            INVARIANCE_TOL,
            format!("{INVARIANCE_INSTANCES} instances, T in {{1, 2}}, {INVARIANCE_OMEGAS} frequencies"),
        ),
        CheckResult {
            name: "distinguishing pair".into(),
            passed: distinguish >= DISTINGUISH_MIN,
            measured: distinguish,
            tolerance: DISTINGUISH_MIN,
            detail: "largest CF difference must reach the tolerance".into(),
        },
        CheckResult::at_most("pair classification", misclassified as f64, 0.0, format!("{pairs} observation pairs")),
    ])
}

/// Sampled CF loss versus exact CF regression loss for random predictors.
pub fn upper_bound(seed: u64) -> Result<Vec<CheckResult>> {
    let inst = make_random_bmdp(rng::derive_seed(seed, 44, 0), 4, 2, 3, 1, 2, 8)?;
    let cf = CFConfig { t: 3, kappa: 16, gamma_seq: 0.8 };
    let actions = ActionSeq::new(vec![1, 0, 1], 2)?;
    let (mut below, mut mismatch, mut worst_z) = (0usize, 0usize, 0.0_f64);
    for k in 0..UPPER_BOUND_PREDICTORS as u64 {
        let cfg = TrainConfig {
            cf: cf.clone(),
            seed: rng::derive_seed(seed, 45, k),
            latent_dim: 8,
            hidden: 16,
            ..TrainConfig::default()
        };
        let model = Model::new(&cfg, inst.obs_dim, 2)?;
        let s = (k % 4) as usize;
        let omegas = sample_omega(&cf, rng::derive_seed(seed, 46, k))?;
        let psi = model.predict_cf(&inst.observe(s, 0)?, &actions.0, &omegas)?;
        let rep = upper_bound_check(
            &inst.core,
            s,
            &actions,
            &omegas,
            cf.gamma_seq,
            &psi,
            UPPER_BOUND_SAMPLES,
            rng::derive_seed(seed, 47, k),
        )?;
        below += usize::from(!rep.bound_holds(3.0));
        mismatch += usize::from(!rep.gap_matches(3.0));
        worst_z = worst_z.max((rep.gap() - rep.expected_gap).abs() / rep.sigma);
    }
    let detail = format!("{UPPER_BOUND_PREDICTORS} predictors, {UPPER_BOUND_SAMPLES} samples each");
    Ok(vec![
        CheckResult::at_most("sampled loss upper bound", below as f64, 0.0, detail.clone()),
        CheckResult {
            name: "upper bound gap".into(),
            passed: mismatch == 0,
            measured: worst_z,
            tolerance: 3.0,
            detail,
        },
    ])
}

fn random_batch(seed: u64, n: usize, obs_dim: usize, t: usize, num_actions: usize) -> Vec<TrajectorySegment> {
    let mut r = rng::stream(seed, 48, 0);
    (0..n)
        .map(|i| TrajectorySegment {
            o_start: ObservationVec(normal_vec(&mut r, obs_dim)),
            actions: (0..t).map(|_| r.random_range(0..num_actions)).collect(),
            rewards: (0..t).map(|_| [0.0, 0.5, 1.0][r.random_range(0..3)]).collect(),
            next_obs: ObservationVec(normal_vec(&mut r, obs_dim)),
            env_id: i % 2,
            state_id: i % 3,
        })
        .collect()
}

fn fd_result(
    name: &str,
    params: &[ParamSet],
    analytic: &[ParamSet],
    loss: impl Fn(&[&ParamSet]) -> Result<f64>,
    seed: u64,
) -> Result<CheckResult> {
    let rep = fd::check(params, analytic, loss, FD_COORDS, FD_STEP, seed)?;
    Ok(CheckResult {
        name: format!("gradient {name}"),
        passed: rep.max_rel_err <= FD_TOL && rep.checked >= FD_COORDS,
        measured: rep.max_rel_err,
        tolerance: FD_TOL,
        detail: format!("{} coordinates, h = {FD_STEP}", rep.checked),
    })
}

/// Central finite differences against reverse-mode gradients for every loss.
pub fn gradient_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let (obs_dim, t, na) = (6, 3, 2);
    let batch = random_batch(seed, 8, obs_dim, t, na);
    let cf = CFConfig { t, kappa: 4, gamma_seq: 0.8 };
    let exec = Exec::Sequential;
    let mut out = Vec::new();
    for objective in [Objective::Cresp, Objective::CrespSum, Objective::Rp, Objective::RpSum] {
        let cfg = TrainConfig { cf: cf.clone(), objective, seed, latent_dim: 4, hidden: 8, ..TrainConfig::default() };
        let model = Model::new(&cfg, obs_dim, na)?;
        let omegas = model.omegas(&cf, rng::derive_seed(seed, 49, 0))?;
        let (_, g) = model.loss_and_grad(exec, &batch, omegas.as_ref())?;
        let params: Vec<ParamSet> = model.nets().into_iter().cloned().collect();
        let loss = |p: &[&ParamSet]| -> Result<f64> {
            match objective {
                Objective::Cresp => losses::cresp_loss(p[0], p[1], p[2], &batch, omegas.as_ref().expect("cf"), 0.8),
                Objective::CrespSum => {
                    losses::cresp_sum_loss(p[0], p[1], p[2], &batch, omegas.as_ref().expect("cf"), 0.8)
                }
                Objective::Rp => losses::rp_loss(p[0], p[1], &batch),
                _ => losses::rp_sum_loss(p[0], p[1], &batch, 0.8),
            }
        };
        out.push(fd_result(&format!("{objective}_loss"), &params, &g, loss, seed)?);
    }

    let enc = mlp(&[obs_dim, 8, 4], Activation::Tanh, rng::derive_seed(seed, 50, 0))?;
    let proj = mlp(&[4 + na, 8, 4], Activation::Identity, rng::derive_seed(seed, 50, 1))?;
    let (_, g) = grad_with(exec, &[&enc, &proj], |tape, n| losses::rdp_contrastive_graph(tape, &n[0], &n[1], &batch))?;
    out.push(fd_result(
        "rdp_contrastive_loss",
        &[enc, proj],
        &g,
        |p| losses::rdp_contrastive_loss(p[0], p[1], &batch),
        seed,
    )?);

    let mut r = rng::stream(seed, 51, 0);
    let x = Matrix::from_vec(32, 5, normal_vec(&mut r, 160))?;
    for (name, classes) in [("env probe loss", 2usize), ("state probe loss", 4)] {
        let head = mlp(&[5, 12, 12, classes], Activation::Identity, rng::derive_seed(seed, 52, classes as u64))?;
        let labels: Vec<usize> = (0..32).map(|i| (i * 7 + 3) % classes).collect();
        let (_, g) = grad_with(exec, &[&head], |tape, n| {
            let xv = tape.constant(x.clone());
            probe_loss_graph(tape, &n[0], xv, &labels)
        })?;
        out.push(fd_result(name, &[head], &g, |p| probe_loss(p[0], &x, &labels), seed)?);
    }
    Ok(out)
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let seed = cfg.seed;
    let mut checks = vec![cf_agreement(seed, cfg.fault)?];
    checks.extend(cf_identities(seed, cfg.fault)?);
    checks.extend(observation_invariance(seed)?);
    checks.extend(upper_bound(seed)?);
    if cfg.bound_sweep > 0 {
        let sweep = bound_sweep(cfg.bound_sweep, seed, Exec::default())?;
        let detail = format!(
            "{} instances, T in {{1, 2, 3}}, gamma {}; largest gap/bound ratio {:.4}",
            cfg.bound_sweep,
            crate::evaluation::SWEEP_GAMMA,
            sweep.max_ratio
        );
        checks.push(CheckResult::at_most("value bound", sweep.violations as f64, 0.0, detail.clone()));
        checks.push(CheckResult::at_most("identity partition", sweep.identity_failures as f64, 0.0, detail.clone()));
        checks.push(CheckResult::at_most("horizon monotonicity", sweep.monotonicity_failures as f64, 0.0, detail));
    }
    checks.extend(gradient_checks(seed)?);
    let passed = checks.iter().all(|c| c.passed);
    Ok(SuiteReport { seed, fault: cfg.fault, passed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_suite_passes() {
        let rep = run_suite(&SuiteConfig { bound_sweep: 5, ..SuiteConfig::default() }).unwrap();
        assert!(rep.passed, "{:#?}", rep.checks.iter().filter(|c| !c.passed).collect::<Vec<_>>());
    }

    #[test]
    fn sign_fault_breaks_symmetry() {
        let checks = cf_identities(7, Some(Fault::CfSign)).unwrap();
        let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["conjugate symmetry"]);
        assert!("cf_sign".parse::<Fault>().is_ok() && "x".parse::<Fault>().is_err());
    }
}
