//! Representation objectives.
//!
//! Every loss is written once as a graph builder (`*_graph`) over a
//! [`Tape`]; the plain `*_loss` functions evaluate that graph without a
//! backward pass. Predictor inputs are `[encoder(o), one-hot actions, omega]`.

use crate::charfn::{discounted_sum, weighted_inner, OmegaBatch};
use crate::diffnet::{eval, Matrix, NetVars, ParamSet, Tape, Var};
use crate::error::{Error, Result};

use super::TrajectorySegment;

fn observations(batch: &[TrajectorySegment], next: bool) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> =
        batch.iter().map(|s| if next { s.next_obs.0.clone() } else { s.o_start.0.clone() }).collect();
    Matrix::from_rows(&rows)
}

fn check_batch(batch: &[TrajectorySegment]) -> Result<usize> {
    let t = batch.first().map(TrajectorySegment::len).ok_or_else(|| Error::param("empty batch"))?;
    if t == 0 || batch.iter().any(|s| s.len() != t || s.rewards.len() != t) {
        return Err(Error::param("segments must share a positive length"));
    }
    Ok(t)
}

/// One-hot encoding of the full action sequence, `T * num_actions` columns.
fn action_codes(batch: &[TrajectorySegment], num_actions: usize, steps: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(batch.len(), steps * num_actions);
    for (i, s) in batch.iter().enumerate() {
        for (k, &a) in s.actions.iter().take(steps).enumerate() {
            if a >= num_actions {
                return Err(Error::param(format!("action {a} out of range for {num_actions} actions")));
            }
            m.data[i * m.cols + k * num_actions + a] = 1.0;
        }
    }
    Ok(m)
}

/// Recovers `num_actions` from the predictor's input width.
fn infer_num_actions(pred_in: usize, latent: usize, omega_dim: usize, t: usize) -> Result<usize> {
    let rest = pred_in.saturating_sub(latent + omega_dim);
    if rest == 0 || !rest.is_multiple_of(t) {
        return Err(Error::param(format!(
            "predictor input {pred_in} does not fit latent {latent} + {t} one-hot actions + omega {omega_dim}"
        )));
    }
    Ok(rest / t)
}

/// Shared structure of the CF objectives: every segment is paired with every
/// frequency row; targets are `(cos u, sin u)` with `u` from `phase`.
#[allow(clippy::too_many_arguments)]
fn cf_pairs_graph(
    tape: &mut Tape,
    enc: &NetVars,
    pred_cos: &NetVars,
    pred_sin: &NetVars,
    batch: &[TrajectorySegment],
    omegas: &OmegaBatch,
    phase: impl Fn(&TrajectorySegment, &[f64]) -> Result<f64>,
) -> Result<Var> {
    let t = check_batch(batch)?;
    let (b, k) = (batch.len(), omegas.kappa);
    if k == 0 {
        return Err(Error::param("need at least one frequency"));
    }
    let obs = tape.constant(observations(batch, false)?);
    let z = tape.forward(enc, obs)?;
    let latent = tape.value(z).cols;
    let num_actions = infer_num_actions(pred_cos.input_dim(tape), latent, omegas.t, t)?;

    let codes = action_codes(batch, num_actions, t)?;
    let mut side = Matrix::zeros(b * k, codes.cols + omegas.t);
    let mut cos_t = Matrix::zeros(b * k, 1);
    let mut sin_t = Matrix::zeros(b * k, 1);
    for (i, seg) in batch.iter().enumerate() {
        for (j, w) in omegas.rows().enumerate() {
            let r = i * k + j;
            let row = &mut side.data[r * side.cols..(r + 1) * side.cols];
            row[..codes.cols].copy_from_slice(codes.row(i));
            row[codes.cols..].copy_from_slice(w);
            let u = phase(seg, w)?;
            cos_t.data[r] = u.cos();
            sin_t.data[r] = u.sin();
        }
    }
    let zr = tape.repeat_rows(z, k);
    let side = tape.constant(side);
    let x = tape.concat(&[zr, side]);
    let cos_t = tape.constant(cos_t);
    let sin_t = tape.constant(sin_t);

    let pc = tape.forward(pred_cos, x)?;
    let ps = tape.forward(pred_sin, x)?;
    let dc = tape.sub(pc, cos_t);
    let ds = tape.sub(ps, sin_t);
    let sc = tape.square(dc);
    let ss = tape.square(ds);
    let mc = tape.mean(sc);
    let ms = tape.mean(ss);
    Ok(tape.add(mc, ms))
}

/// Mean over segments and frequencies of
/// `(psi_cos - cos<w, r>)^2 + (psi_sin - sin<w, r>)^2`.
pub fn cresp_graph(
    tape: &mut Tape,
    enc: &NetVars,
    pred_cos: &NetVars,
    pred_sin: &NetVars,
    batch: &[TrajectorySegment],
    omegas: &OmegaBatch,
    gamma_seq: f64,
) -> Result<Var> {
    let t = check_batch(batch)?;
    if omegas.t != t {
        return Err(Error::param(format!("omega length {} differs from T = {t}", omegas.t)));
    }
    cf_pairs_graph(tape, enc, pred_cos, pred_sin, batch, omegas, |seg, w| weighted_inner(w, &seg.rewards, gamma_seq))
}

/// CF objective for the scalar discounted return `G = sum_t g^t r_t` with
/// scalar frequencies (`omegas.t == 1`).
pub fn cresp_sum_graph(
    tape: &mut Tape,
    enc: &NetVars,
    pred_cos: &NetVars,
    pred_sin: &NetVars,
    batch: &[TrajectorySegment],
    omegas: &OmegaBatch,
    gamma_seq: f64,
) -> Result<Var> {
    if omegas.t != 1 {
        return Err(Error::param("sum objective takes scalar frequencies"));
    }
    cf_pairs_graph(tape, enc, pred_cos, pred_sin, batch, omegas, |seg, w| {
        Ok(w[0] * discounted_sum(&seg.rewards, gamma_seq))
    })
}

/// `enc(o)`, optionally followed by the one-hot action sequence when the
/// head's input is wider than the latent.
fn reward_head_input(
    tape: &mut Tape,
    enc: &NetVars,
    head: &NetVars,
    batch: &[TrajectorySegment],
    t: usize,
) -> Result<Var> {
    let obs = tape.constant(observations(batch, false)?);
    let z = tape.forward(enc, obs)?;
    let latent = tape.value(z).cols;
    let extra = head.input_dim(tape).saturating_sub(latent);
    if extra == 0 {
        return Ok(z);
    }
    if !extra.is_multiple_of(t) {
        return Err(Error::param(format!("head input {} does not fit latent {latent} + {t} actions", latent + extra)));
    }
    let codes = tape.constant(action_codes(batch, extra / t, t)?);
    Ok(tape.concat(&[z, codes]))
}

/// Mean absolute error of a `T`-dimensional reward-sequence head. The head
/// sees `enc(o)` and, if it is wide enough, the action sequence.
pub fn rp_graph(tape: &mut Tape, enc: &NetVars, head: &NetVars, batch: &[TrajectorySegment]) -> Result<Var> {
    let t = check_batch(batch)?;
    let x = reward_head_input(tape, enc, head, batch, t)?;
    let pred = tape.forward(head, x)?;
    if tape.value(pred).cols != t {
        return Err(Error::param(format!("reward head outputs {} values, T = {t}", tape.value(pred).cols)));
    }
    let rewards: Vec<Vec<f64>> = batch.iter().map(|s| s.rewards.clone()).collect();
    let target = tape.constant(Matrix::from_rows(&rewards)?);
    let d = tape.sub(pred, target);
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Absolute error of a scalar head against the discounted reward sum.
pub fn rp_sum_graph(
    tape: &mut Tape,
    enc: &NetVars,
    head: &NetVars,
    batch: &[TrajectorySegment],
    gamma_seq: f64,
) -> Result<Var> {
    let t = check_batch(batch)?;
    let x = reward_head_input(tape, enc, head, batch, t)?;
    let pred = tape.forward(head, x)?;
    if tape.value(pred).cols != 1 {
        return Err(Error::param("sum head must output one value"));
    }
    let sums: Vec<f64> = batch.iter().map(|s| discounted_sum(&s.rewards, gamma_seq)).collect();
    let target = tape.constant(Matrix::from_vec(sums.len(), 1, sums)?);
    let d = tape.sub(pred, target);
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// InfoNCE with dot-product scores: row `i` of `queries` should pick key `i`
/// among all keys in the batch.
pub fn info_nce_graph(tape: &mut Tape, queries: Var, keys: Var) -> Result<Var> {
    let n = tape.value(queries).rows;
    if n < 2 || tape.value(keys).rows != n {
        return Err(Error::param("contrastive loss needs at least two matched pairs"));
    }
    let scores = tape.matmul_nt(queries, keys);
    let labels: Vec<usize> = (0..n).collect();
    tape.cross_entropy(scores, &labels)
}

/// InfoNCE of fixed query/key matrices.
pub fn info_nce(queries: &Matrix, keys: &Matrix) -> Result<f64> {
    let mut tape = Tape::default();
    let q = tape.constant(queries.clone());
    let k = tape.constant(keys.clone());
    let out = info_nce_graph(&mut tape, q, k)?;
    Ok(tape.scalar(out))
}

/// Queries `proj([enc(o_t), onehot(a_t)])` against keys `enc(o_{t+1})`.
pub fn rdp_contrastive_graph(
    tape: &mut Tape,
    enc: &NetVars,
    proj: &NetVars,
    batch: &[TrajectorySegment],
) -> Result<Var> {
    check_batch(batch)?;
    if batch.len() < 2 {
        return Err(Error::param("contrastive loss needs a batch of at least 2"));
    }
    let obs = tape.constant(observations(batch, false)?);
    let next = tape.constant(observations(batch, true)?);
    let z = tape.forward(enc, obs)?;
    let latent = tape.value(z).cols;
    let num_actions = proj
        .input_dim(tape)
        .checked_sub(latent)
        .filter(|&a| a > 0)
        .ok_or_else(|| Error::param("projection input must be latent + one-hot action"))?;
    let codes = tape.constant(action_codes(batch, num_actions, 1)?);
    let qin = tape.concat(&[z, codes]);
    let q = tape.forward(proj, qin)?;
    let k = tape.forward(enc, next)?;
    if tape.value(q).cols != tape.value(k).cols {
        return Err(Error::param("projection output must match the latent size"));
    }
    info_nce_graph(tape, q, k)
}

pub fn cresp_loss(
    enc: &ParamSet,
    pred_cos: &ParamSet,
    pred_sin: &ParamSet,
    batch: &[TrajectorySegment],
    omegas: &OmegaBatch,
    gamma_seq: f64,
) -> Result<f64> {
    eval(&[enc, pred_cos, pred_sin], |tape, n| cresp_graph(tape, &n[0], &n[1], &n[2], batch, omegas, gamma_seq))
}

pub fn cresp_sum_loss(
    enc: &ParamSet,
    pred_cos: &ParamSet,
    pred_sin: &ParamSet,
    batch: &[TrajectorySegment],
    scalar_omegas: &OmegaBatch,
    gamma_seq: f64,
) -> Result<f64> {
    eval(&[enc, pred_cos, pred_sin], |tape, n| {
        cresp_sum_graph(tape, &n[0], &n[1], &n[2], batch, scalar_omegas, gamma_seq)
    })
}

pub fn rp_loss(enc: &ParamSet, head: &ParamSet, batch: &[TrajectorySegment]) -> Result<f64> {
    eval(&[enc, head], |tape, n| rp_graph(tape, &n[0], &n[1], batch))
}

pub fn rp_sum_loss(enc: &ParamSet, head: &ParamSet, batch: &[TrajectorySegment], gamma_seq: f64) -> Result<f64> {
    eval(&[enc, head], |tape, n| rp_sum_graph(tape, &n[0], &n[1], batch, gamma_seq))
}

pub fn rdp_contrastive_loss(enc: &ParamSet, proj: &ParamSet, batch: &[TrajectorySegment]) -> Result<f64> {
    eval(&[enc, proj], |tape, n| rdp_contrastive_graph(tape, &n[0], &n[1], batch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bmdp::ObservationVec;
    use crate::charfn::{cf_target, sample_omega, CFConfig};
    use crate::diffnet::{mlp, Activation, Dense};

    fn seg(obs: Vec<f64>, actions: Vec<usize>, rewards: Vec<f64>) -> TrajectorySegment {
        TrajectorySegment {
            next_obs: ObservationVec(obs.iter().map(|v| v + 0.5).collect()),
            o_start: ObservationVec(obs),
            actions,
            rewards,
            env_id: 0,
            state_id: 0,
        }
    }

    fn batch() -> Vec<TrajectorySegment> {
        vec![
            seg(vec![1.0, 0.0, 0.5], vec![0, 1], vec![1.0, 0.0]),
            seg(vec![0.0, 1.0, 0.25], vec![1, 1], vec![0.5, 1.0]),
            seg(vec![0.2, 0.3, 0.0], vec![0, 0], vec![0.0, 0.0]),
        ]
    }

    /// A predictor with zero weights and the given constant output.
    fn constant_net(input: usize, value: f64) -> ParamSet {
        ParamSet {
            layers: vec![Dense {
                weight: Matrix::zeros(1, input),
                bias: vec![value],
                activation: Activation::Identity,
            }],
        }
    }

    #[test]
    fn zero_predictors_give_unit_loss() {
        let enc = mlp(&[3, 8, 4], Activation::Tanh, 1).unwrap();
        let omegas = sample_omega(&CFConfig { t: 2, kappa: 7, gamma_seq: 0.8 }, 4).unwrap();
        let zero = constant_net(4 + 2 * 2 + 2, 0.0);
        let loss = cresp_loss(&enc, &zero, &zero, &batch(), &omegas, 0.8).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);

        let scalar = sample_omega(&CFConfig { t: 1, kappa: 5, gamma_seq: 0.8 }, 4).unwrap();
        let zero = constant_net(4 + 2 * 2 + 1, 0.0);
        let loss = cresp_sum_loss(&enc, &zero, &zero, &batch(), &scalar, 0.8).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_traced_single_segment() {
        // one segment, rewards (1, 0.5), one frequency (0.3, -1.2), g = 0.8:
        // u = 0.8 * 0.3 * 1 + 0.64 * (-1.2) * 0.5 = 0.24 - 0.384 = -0.144
        let enc = mlp(&[3, 4], Activation::Tanh, 1).unwrap();
        let b = vec![seg(vec![1.0, 2.0, 3.0], vec![0, 1], vec![1.0, 0.5])];
        let omegas = OmegaBatch { kappa: 1, t: 2, values: vec![0.3, -1.2], seed: 0 };
        let c = constant_net(4 + 4 + 2, 0.9);
        let s = constant_net(4 + 4 + 2, -0.1);
        let u: f64 = -0.144;
        let expected = (0.9 - u.cos()).powi(2) + (-0.1 - u.sin()).powi(2);
        let loss = cresp_loss(&enc, &c, &s, &b, &omegas, 0.8).unwrap();
        assert!((loss - expected).abs() < 1e-10, "{loss} vs {expected}");

        // perfect prediction drives the loss to zero
        let (tc, ts) = cf_target(&[0.3, -1.2], &[1.0, 0.5], 0.8).unwrap();
        let loss = cresp_loss(&enc, &constant_net(10, tc), &constant_net(10, ts), &b, &omegas, 0.8).unwrap();
        assert!(loss.abs() < 1e-24);

        // scalar version: G = 0.8 + 0.64 * 0.5 = 1.12, w = 0.7
        let scalar = OmegaBatch { kappa: 1, t: 1, values: vec![0.7], seed: 0 };
        let g: f64 = 0.7 * 1.12;
        let loss =
            cresp_sum_loss(&enc, &constant_net(9, g.cos()), &constant_net(9, g.sin()), &b, &scalar, 0.8).unwrap();
        assert!(loss.abs() < 1e-24);
        let loss = cresp_sum_loss(&enc, &constant_net(9, 0.5), &constant_net(9, 0.0), &b, &scalar, 0.8).unwrap();
        assert!((loss - ((0.5 - g.cos()).powi(2) + g.sin().powi(2))).abs() < 1e-10);
    }

    #[test]
    fn reward_prediction_losses() {
        let enc = mlp(&[3, 4], Activation::Tanh, 1).unwrap();
        let ones = vec![
            seg(vec![1.0, 0.0, 0.0], vec![0, 0], vec![1.0, 1.0]),
            seg(vec![0.0, 1.0, 0.0], vec![1, 0], vec![1.0, 1.0]),
        ];
        let zero_head = ParamSet {
            layers: vec![Dense { weight: Matrix::zeros(2, 4), bias: vec![0.0, 0.0], activation: Activation::Identity }],
        };
        assert!((rp_loss(&enc, &zero_head, &ones).unwrap() - 1.0).abs() < 1e-15);
        let perfect = ParamSet {
            layers: vec![Dense { weight: Matrix::zeros(2, 4), bias: vec![1.0, 1.0], activation: Activation::Identity }],
        };
        assert_eq!(rp_loss(&enc, &perfect, &ones).unwrap(), 0.0);
        assert!(rp_loss(&enc, &constant_net(4, 0.0), &ones).is_err());

        assert!((rp_sum_loss(&enc, &constant_net(4, 0.0), &ones, 0.8).unwrap() - 1.44).abs() < 1e-12);
        assert!(rp_sum_loss(&enc, &constant_net(4, 1.44), &ones, 0.8).unwrap() < 1e-12);
    }

    #[test]
    fn rp_matches_independent_recomputation() {
        let enc = mlp(&[3, 6, 4], Activation::Tanh, 3).unwrap();
        let head = mlp(&[4, 5, 2], Activation::Identity, 4).unwrap();
        let b = batch();
        let mut total = 0.0;
        for s in &b {
            let z = enc.forward(&s.o_start.0).unwrap();
            let y = head.forward(&z).unwrap();
            total += y.iter().zip(&s.rewards).map(|(p, r)| (p - r).abs()).sum::<f64>();
        }
        let expected = total / (b.len() * 2) as f64;
        assert!((rp_loss(&enc, &head, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn info_nce_examples() {
        let q = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let same = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!((info_nce(&q, &same).unwrap() - 3f64.ln()).abs() < 1e-12);

        // scores +10 on the diagonal, -10 elsewhere
        let q = Matrix::from_rows(&[vec![10.0, -10.0], vec![-10.0, 10.0]]).unwrap();
        let k = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(info_nce(&q, &k).unwrap() <= 1e-3);

        // symmetric pair: diag score a, off-diagonal b => ln(1 + e^{b - a})
        let q = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 2.0]]).unwrap();
        let (a, b) = (2.0f64, 0.5f64);
        assert!((info_nce(&q, &k).unwrap() - (1.0 + (b - a).exp()).ln()).abs() < 1e-10);

        assert!(info_nce(&Matrix::from_rows(&[vec![1.0]]).unwrap(), &Matrix::from_rows(&[vec![1.0]]).unwrap()).is_err());
    }

    #[test]
    fn contrastive_requires_two_pairs() {
        let enc = mlp(&[3, 4], Activation::Tanh, 1).unwrap();
        let proj = mlp(&[4 + 2, 4], Activation::Identity, 2).unwrap();
        assert!(rdp_contrastive_loss(&enc, &proj, &batch()[..1]).is_err());
        assert!(rdp_contrastive_loss(&enc, &proj, &batch()).unwrap() > 0.0);
    }
}
