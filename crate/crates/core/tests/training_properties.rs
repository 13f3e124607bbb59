use cresp_core::bmdp::{make_random_bmdp, BMDPInstance};
use cresp_core::charfn::{sample_omega, CFConfig};
use cresp_core::diffnet::{mlp, Activation, Matrix, ParamSet};
use cresp_core::par::Exec;
use cresp_core::training::{
    cresp_loss, info_nce, rp_loss, train_representation, Model, Objective, ReplayBuffer, TrainConfig,
    TrajectorySegment, Transition,
};
use proptest::prelude::*;

fn instance() -> BMDPInstance {
    make_random_bmdp(3, 4, 2, 3, 2, 3, 10).unwrap()
}

/// Transitions from `episodes` uniform-random episodes in env 0, plus the
/// latent state at every step.
fn rollout(inst: &BMDPInstance, episodes: u64, seed: u64) -> Vec<Transition> {
    let mut out = Vec::new();
    for e in 0..episodes {
        let (mut ep, mut obs) = inst.reset(0, seed + e).unwrap();
        let mut k = 0;
        while !ep.is_done() {
            let state = ep.state();
            let action = (k * 7 + e as usize) % inst.core.num_actions;
            let step = ep.step(action).unwrap();
            out.push(Transition {
                env_id: 0,
                obs: obs.clone(),
                state,
                action,
                reward: step.reward,
                next_obs: step.obs.clone(),
                done: step.done,
            });
            obs = step.obs;
            k += 1;
        }
    }
    out
}

#[test]
fn segments_align_with_the_latent_trajectory() {
    let inst = instance();
    let t = 3;
    let trs = rollout(&inst, 3, 50);
    let mut buf = ReplayBuffer::new(100_000, t).unwrap();
    for tr in trs.clone() {
        buf.push_transition(tr);
    }
    let horizon = inst.horizon;
    assert_eq!(buf.len(), 3 * (horizon - t + 1));
    for (i, seg) in buf.segments().enumerate() {
        let start = (i / (horizon - t + 1)) * horizon + i % (horizon - t + 1);
        let (s, _) = inst.decode(&seg.o_start).unwrap();
        assert_eq!(s, seg.state_id);
        assert_eq!(s, trs[start].state);
        for k in 0..t {
            let tr = &trs[start + k];
            assert_eq!(seg.actions[k], tr.action);
            assert_eq!(seg.rewards[k], tr.reward);
            assert_eq!(inst.decode(&tr.obs).unwrap().0, tr.state);
        }
        assert_eq!(seg.next_obs, trs[start].next_obs);
    }
}

fn batch(inst: &BMDPInstance, t: usize, n: usize, seed: u64) -> Vec<TrajectorySegment> {
    let mut buf = ReplayBuffer::new(10_000, t).unwrap();
    for tr in rollout(inst, 2, seed) {
        buf.push_transition(tr);
    }
    buf.sample_batch(n, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn losses_are_nonnegative(seed in any::<u64>(), t in 1usize..4, n in 2usize..10) {
        let inst = instance();
        let b = batch(&inst, t, n, seed % 1000);
        for objective in Objective::ALL {
            let cfg = TrainConfig { cf: CFConfig { t, kappa: 4, gamma_seq: 0.8 }, objective, seed, latent_dim: 4, hidden: 8, ..TrainConfig::default() };
            let model = Model::new(&cfg, inst.obs_dim, 2).unwrap();
            let omegas = model.omegas(&cfg.cf, seed).unwrap();
            let (loss, _) = model.loss_and_grad(Exec::Sequential, &b, omegas.as_ref()).unwrap();
            prop_assert!(loss >= 0.0 && loss.is_finite(), "{objective}: {loss}");
        }
    }

    #[test]
    fn evaluation_does_not_mutate_inputs(seed in any::<u64>()) {
        let inst = instance();
        let b = batch(&inst, 2, 6, seed % 1000);
        let enc = mlp(&[10, 8, 4], Activation::Tanh, seed).unwrap();
        let head = mlp(&[4 + 2 * 2, 8, 2], Activation::Identity, seed ^ 3).unwrap();
        let (enc0, head0, b0) = (enc.clone(), head.clone(), b.clone());
        rp_loss(&enc, &head, &b).unwrap();
        let x = Matrix::row_vector(&[0.5; 10]);
        enc.forward_batch(&x, Exec::Sequential).unwrap();
        let cfg = TrainConfig { cf: CFConfig { t: 2, kappa: 4, gamma_seq: 0.8 }, latent_dim: 4, hidden: 8, seed, ..TrainConfig::default() };
        let model = Model::new(&cfg, 10, 2).unwrap();
        let model0 = model.clone();
        let omegas = model.omegas(&cfg.cf, 1).unwrap();
        model.loss_and_grad(Exec::Sequential, &b, omegas.as_ref()).unwrap();
        prop_assert_eq!(enc, enc0);
        prop_assert_eq!(head, head0);
        prop_assert_eq!(b, b0);
        prop_assert_eq!(model, model0);
    }
}

#[test]
fn zero_loss_needs_exact_predictions() {
    let inst = instance();
    let b = batch(&inst, 2, 8, 4);
    let enc = mlp(&[10, 8, 4], Activation::Tanh, 1).unwrap();
    let mut head: ParamSet = mlp(&[4 + 2 * 2, 8, 2], Activation::Identity, 2).unwrap();
    assert!(rp_loss(&enc, &head, &b).unwrap() > 0.0);
    // a head that outputs only its bias predicts the rewards exactly when all are equal
    let zero_rewards: Vec<TrajectorySegment> = b
        .iter()
        .cloned()
        .map(|mut s| {
            s.rewards.iter_mut().for_each(|r| *r = 0.25);
            s
        })
        .collect();
    head.flat_iter_mut().for_each(|w| *w = 0.0);
    let last = head.layers.last_mut().unwrap();
    last.bias.iter_mut().for_each(|v| *v = 0.25);
    assert_eq!(rp_loss(&enc, &head, &zero_rewards).unwrap(), 0.0);

    let omegas = sample_omega(&CFConfig { t: 2, kappa: 4, gamma_seq: 0.8 }, 3).unwrap();
    let pc = mlp(&[4 + 4 + 2, 8, 1], Activation::Identity, 4).unwrap();
    let ps = mlp(&[4 + 4 + 2, 8, 1], Activation::Identity, 5).unwrap();
    assert!(cresp_loss(&enc, &pc, &ps, &b, &omegas, 0.8).unwrap() > 0.0);
    let q = Matrix::from_rows(&[vec![5.0, 0.0], vec![0.0, 5.0]]).unwrap();
    assert!(info_nce(&q, &q).unwrap() > 0.0);
}

#[test]
fn cresp_training_halves_the_loss() {
    let inst = make_random_bmdp(11, 4, 2, 3, 2, 3, 10).unwrap();
    let cfg = TrainConfig {
        cf: CFConfig { t: 3, kappa: 32, gamma_seq: 0.8 },
        batch_size: 64,
        gradient_steps: 2000,
        seed: 0,
        initial_steps: 200,
        ..TrainConfig::default()
    };
    let out = train_representation(&inst, &cfg).unwrap();
    assert_eq!(out.history.len(), 2000);
    let mean =
        |recs: &[cresp_core::training::MetricRecord]| recs.iter().map(|r| r.loss).sum::<f64>() / recs.len() as f64;
    let first = mean(&out.history[..20]);
    let last = mean(&out.history[1980..]);
    assert!(last < 0.5 * first, "initial {first:.4}, final {last:.4}");
}
