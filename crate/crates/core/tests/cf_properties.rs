use cresp_core::bmdp::{make_aliased_core, random_core, TaskCore};
use cresp_core::charfn::{empirical_cf, sample_omega, CFConfig, CFValue};
use cresp_core::rng::rng_from;
use cresp_core::rsd_oracle::{all_action_sequences, enumerate_rsd, exact_cf, ActionSeq};
use proptest::prelude::*;

const G: f64 = 0.8;

fn core(seed: u64, s: usize, a: usize) -> TaskCore {
    random_core(&mut rng_from(seed), s, a, vec![0.0, 0.5, 1.0], 0.9).unwrap()
}

fn actions_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..2, 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_cf_identities(seed in any::<u64>(), s in 0usize..4, acts in actions_strategy(),
                           omega in prop::collection::vec(-5.0f64..5.0, 3)) {
        let c = core(seed, 4, 2);
        let rsd = enumerate_rsd(&c, s, &ActionSeq::new(acts.clone(), 2).unwrap()).unwrap();
        let w = &omega[..acts.len()];
        let zero = vec![0.0; acts.len()];
        prop_assert_eq!(exact_cf(&rsd, &zero, G).unwrap(), CFValue::new(1.0, 0.0));
        let phi = exact_cf(&rsd, w, G).unwrap();
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let phi_neg = exact_cf(&rsd, &neg, G).unwrap();
        prop_assert!(phi_neg.dist(phi.conj()) <= 1e-12);
        prop_assert!(phi.modulus() <= 1.0 + 1e-12);
    }

    #[test]
    fn empirical_cf_is_bounded_and_exact_at_zero(seed in any::<u64>(), n in 1usize..200,
                                                   omega in prop::collection::vec(-10.0f64..10.0, 2)) {
        let c = core(seed, 3, 2);
        let mut rng = rng_from(seed ^ 1);
        let samples: Vec<Vec<f64>> = (0..n).map(|_| c.sample_reward_sequence(&mut rng, 0, &[0, 1])).collect();
        prop_assert_eq!(empirical_cf(&samples, &[0.0, 0.0], G).unwrap(), CFValue::new(1.0, 0.0));
        prop_assert!(empirical_cf(&samples, &omega, G).unwrap().modulus() <= 1.0);
    }

    #[test]
    fn rsd_marginals_match_one_step_tables(seed in any::<u64>(), s in 0usize..4, a0 in 0usize..2, a1 in 0usize..2) {
        let c = core(seed, 4, 2);
        let rsd = enumerate_rsd(&c, s, &ActionSeq::new(vec![a0, a1], 2).unwrap()).unwrap();
        let mut first = vec![0.0; c.num_rewards()];
        for e in &rsd.entries {
            first[e.indices[0]] += e.prob;
        }
        let one = c.reward_marginal(s, a0);
        for (x, y) in first.iter().zip(&one) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        let single = enumerate_rsd(&c, s, &ActionSeq::new(vec![a0], 2).unwrap()).unwrap();
        for e in &single.entries {
            prop_assert!((e.prob - one[e.indices[0]]).abs() <= 1e-15);
        }
    }
}

/// Equal distributions iff equal characteristic functions on 128 random
/// frequencies, over every state pair of aliased cores.
#[test]
fn distributions_and_cfs_agree_on_equality() {
    let (mut equal, mut different) = (0, 0);
    for seed in 0..30u64 {
        let c = make_aliased_core(seed, 5, 2, vec![0.0, 0.5, 1.0], 2, 0.9).unwrap();
        for t in 1..=2 {
            let omegas = sample_omega(&CFConfig { t, kappa: 128, gamma_seq: G }, seed + 1000).unwrap();
            for acts in all_action_sequences(2, t).unwrap() {
                let rsds: Vec<_> = (0..5).map(|s| enumerate_rsd(&c, s, &acts).unwrap()).collect();
                for i in 0..5 {
                    for j in i + 1..5 {
                        let same_law = rsds[i].max_abs_diff(&rsds[j]) <= 1e-12;
                        let same_cf = omegas
                            .rows()
                            .all(|w| exact_cf(&rsds[i], w, G).unwrap().dist(exact_cf(&rsds[j], w, G).unwrap()) <= 1e-9);
                        assert_eq!(same_law, same_cf, "seed {seed} states {i},{j} actions {:?}", acts.0);
                        if same_law {
                            equal += 1;
                        } else {
                            different += 1;
                        }
                    }
                }
            }
        }
    }
    assert!(equal > 0 && different > 0, "equal {equal} different {different}");
}

#[test]
fn empirical_error_shrinks_with_sample_size() {
    let c = core(5, 4, 2);
    let acts = [1, 0, 1];
    let rsd = enumerate_rsd(&c, 2, &ActionSeq::new(acts.to_vec(), 2).unwrap()).unwrap();
    let omegas = sample_omega(&CFConfig { t: 3, kappa: 64, gamma_seq: G }, 77).unwrap();
    let mut rng = rng_from(78);
    let small: Vec<Vec<f64>> = (0..100).map(|_| c.sample_reward_sequence(&mut rng, 2, &acts)).collect();
    let large: Vec<Vec<f64>> = (0..10_000).map(|_| c.sample_reward_sequence(&mut rng, 2, &acts)).collect();
    let better = omegas
        .rows()
        .filter(|w| {
            let exact = exact_cf(&rsd, w, G).unwrap();
            let e_small = empirical_cf(&small, w, G).unwrap().dist(exact);
            let e_large = empirical_cf(&large, w, G).unwrap().dist(exact);
            e_large < e_small
        })
        .count();
    assert!(better as f64 >= 0.9 * 64.0, "larger sample more accurate at only {better}/64 frequencies");
}

#[test]
fn empirical_cf_within_clt_tolerance() {
    let c = core(9, 4, 2);
    let acts = [0, 1, 1];
    let rsd = enumerate_rsd(&c, 1, &ActionSeq::new(acts.to_vec(), 2).unwrap()).unwrap();
    let mut rng = rng_from(10);
    let n = 20_000;
    let samples: Vec<Vec<f64>> = (0..n).map(|_| c.sample_reward_sequence(&mut rng, 1, &acts)).collect();
    let omegas = sample_omega(&CFConfig { t: 3, kappa: 64, gamma_seq: G }, 11).unwrap();
    for w in omegas.rows() {
        let err = empirical_cf(&samples, w, G).unwrap().dist(exact_cf(&rsd, w, G).unwrap());
        assert!(err <= 5.0 / (n as f64).sqrt(), "error {err} at {w:?}");
    }
}
