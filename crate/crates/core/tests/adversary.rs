mod common;

use mousegate::adversary::*;
use mousegate::authenticator::{features_matrix, AuthenticatorModel, DecisionThreshold};
use mousegate::data_synth::Label;
use mousegate::nn::Tensor;
use mousegate::physical_noise::NoiseModel;
use mousegate::rng::rng_from_seed;
use mousegate::Result;
use proptest::prelude::*;
use rand::RngCore;

use common::{world, World};

const TAU: DecisionThreshold = DecisionThreshold::DEFAULT;

fn cfg(steps: usize, seed: u64) -> AttackConfig {
    AttackConfig { steps, hidden: 32, eval_draws: 5, seed, ..AttackConfig::default() }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn trained(w: &World, steps: usize) -> AttackSuite {
    train_attack_suite(&w.auth, &w.attackers, &w.noise, &cfg(steps, 1)).unwrap()
}

#[test]
fn attack_raises_valid_scores_and_leaves_auth_untouched() {
    let w = world(21, 40);
    let before = w.auth.clone();
    let gen = train_attack_generator(&w.auth, &w.attackers, 4, &w.noise, &cfg(60, 2)).unwrap();
    assert_eq!(w.auth, before);
    assert_eq!(gen.ideal_blocks(&features_matrix(&w.attackers[..1])).shape(), &[1, 2 * common::LENGTH]);
    let mut rng = rng_from_seed(3);
    let samples: Vec<AdversarialSample> =
        w.attackers.iter().map(|b| generate_adversarial_sample(&gen, b, &w.noise, None, &mut rng).unwrap()).collect();
    let adv: Vec<f64> = samples.iter().map(|s| w.auth.score(&s.to_trial()).unwrap()).collect();
    let clean = w.auth.valid_scores(&features_matrix(&w.attackers)).unwrap();
    assert!(mean(&adv) > mean(&clean), "{} vs {}", mean(&adv), mean(&clean));
}

#[test]
fn untrained_generators_have_no_effect() {
    let w = world(22, 40);
    let suite = trained(&w, 0);
    let r = evaluate_suite(&suite, &w.auth, &w.auth, TAU, &w.attackers, &w.noise, 5, 4).unwrap();
    let clean = tpr_of(&w.auth.valid_scores(&features_matrix(&w.attackers)).unwrap(), TAU).unwrap();
    for t in &r.tpr_classifier {
        assert!((t - clean).abs() <= 0.05, "{t} vs {clean}");
    }
}

#[test]
fn samples_replace_exactly_one_movement() {
    let w = world(23, 2);
    let suite = trained(&w, 5);
    let mut rng = rng_from_seed(5);
    for gen in &suite.generators {
        let base = &w.attackers[gen.j % w.attackers.len()];
        let s = generate_adversarial_sample(gen, base, &w.noise, None, &mut rng).unwrap();
        let t = s.to_trial();
        assert_eq!(t.label, Some(Label::Invalid));
        assert_eq!(s.label(), Label::Invalid);
        let differing: Vec<usize> = (0..t.n_movements()).filter(|&k| t.movements[k] != base.movements[k]).collect();
        assert_eq!(differing, vec![gen.j]);
        let exact = generate_adversarial_sample(gen, base, &w.noise, Some(0.0), &mut rng).unwrap();
        assert_eq!(exact.realized, exact.ideal);
    }
}

#[test]
fn realised_noise_has_the_model_variance() {
    let w = world(24, 2);
    let gen = train_attack_generator(&w.auth, &w.attackers, 0, &w.noise, &cfg(5, 0)).unwrap();
    let base = &w.attackers[0];
    let mut rng = rng_from_seed(6);
    let first = generate_adversarial_sample(&gen, base, &w.noise, None, &mut rng).unwrap();
    let (mut s2, mut n) = (0.0, 0usize);
    for _ in 0..2000 {
        let s = generate_adversarial_sample(&gen, base, &w.noise, None, &mut rng).unwrap();
        for (a, b) in s.realized.velocities.iter().zip(&s.ideal.velocities) {
            s2 += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            n += 2;
        }
    }
    let var = s2 / n as f64;
    assert!((var / first.sigma.powi(2) - 1.0).abs() < 0.05, "{var} vs {}", first.sigma.powi(2));
}

#[test]
fn tpr_matches_a_direct_tally() {
    let w = world(25, 20);
    let suite = trained(&w, 10);
    let mut rng = rng_from_seed(7);
    let samples: Vec<AdversarialSample> = w
        .attackers
        .iter()
        .enumerate()
        .map(|(i, b)| generate_adversarial_sample(&suite.generators[i % suite.len()], b, &w.noise, None, &mut rng).unwrap())
        .collect();
    let tally = samples.iter().filter(|s| w.auth.score(&s.to_trial()).unwrap() < 0.5).count() as f64 / samples.len() as f64;
    assert_eq!(tpr_under_attack(&w.auth, TAU, &samples).unwrap(), tally);
    assert!(tpr_under_attack(&w.auth, TAU, &[]).is_err());
}

#[test]
fn scenario1_picks_the_minimum() {
    let w = world(26, 40);
    let suite = trained(&w, 20);
    let r = evaluate_suite(&suite, &w.auth, &w.auth, TAU, &w.attackers, &w.noise, 5, 8).unwrap();
    let min = r.tpr_classifier.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(r.tpr_classifier[r.scenario1], min);
    assert!(r.tpr_classifier[..r.scenario1].iter().all(|&t| t > min));
    let j = select_attack_scenario1(&suite, &w.auth, TAU, &w.attackers, &w.noise, 5, 8).unwrap();
    assert_eq!(j, r.scenario1);
}

#[test]
fn identical_attacks_tie_break_to_zero() {
    let w = world(27, 10);
    let suite = trained(&w, 0);
    let silent = NoiseModel { skill_multiplier: 0.0, ..w.noise };
    let r = evaluate_suite(&suite, &w.auth, &w.auth, TAU, &w.attackers, &silent, 3, 9).unwrap();
    assert!(r.tpr_classifier.windows(2).all(|p| p[0] == p[1]));
    assert_eq!(r.scenario1, 0);
}

/// Plain classifier behind a fixed movement selection.
struct FixedSelection<'a> {
    auth: &'a AuthenticatorModel,
    keep: Vec<usize>,
}

impl Defense for FixedSelection<'_> {
    fn valid_scores(&self, x: &Tensor, _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.auth.valid_scores(x)
    }

    fn selected(&self, x: &Tensor) -> Result<Option<Vec<Vec<bool>>>> {
        let row: Vec<bool> = (0..self.auth.n_movements).map(|j| self.keep.contains(&j)).collect();
        Ok(Some(vec![row; x.rows()]))
    }
}

#[test]
fn scenario2_respects_eligibility_and_falls_back() {
    let w = world(28, 20);
    let suite = trained(&w, 10);
    let d = FixedSelection { auth: &w.auth, keep: vec![1, 2] };
    let r = evaluate_suite(&suite, &w.auth, &d, TAU, &w.attackers, &w.noise, 3, 10).unwrap();
    let eligible: Vec<usize> = (0..r.eligible.len()).filter(|&j| r.eligible[j]).collect();
    assert_eq!(eligible, vec![1, 2]);
    assert!([1, 2].contains(&r.scenario2));
    assert!(!r.scenario2_fallback);

    let none = FixedSelection { auth: &w.auth, keep: vec![] };
    let (j, fallback) = select_attack_scenario2(&suite, &w.auth, &none, TAU, &w.attackers, &w.noise, 3, 10).unwrap();
    assert!(fallback);
    assert_eq!(j, r.scenario1);
}

#[test]
fn noise_aware_training_is_no_weaker() {
    let w = world(29, 40);
    let (mut aware, mut naive) = (0.0, 0.0);
    let seeds = 5;
    for seed in 0..seeds {
        let with = AttackConfig { noise_in_training: true, ..cfg(30, seed) };
        let without = AttackConfig { noise_in_training: false, ..cfg(30, seed) };
        for (c, acc) in [(with, &mut aware), (without, &mut naive)] {
            let gen = train_attack_generator(&w.auth, &w.attackers, 3, &w.noise, &c).unwrap();
            let suite_one = IdealBatch::new(&gen, features_matrix(&w.attackers), &w.noise);
            let mut rng = rng_from_seed(100 + seed);
            let mut rej = 0.0;
            for _ in 0..10 {
                rej += tpr_of(&w.auth.valid_scores(&suite_one.realize(&mut rng)).unwrap(), TAU).unwrap();
            }
            *acc += rej / 10.0;
        }
    }
    assert!(aware / seeds as f64 <= naive / seeds as f64 + 1e-12, "{aware} vs {naive}");
}

#[test]
fn suite_indices_are_validated() {
    let w = world(30, 0);
    let suite = trained(&w, 0);
    let mut gens = suite.generators.clone();
    gens[1] = gens[0].clone();
    assert!(AttackSuite::new(gens).is_err());
    let mut rev = suite.generators.clone();
    rev.reverse();
    assert_eq!(AttackSuite::new(rev).unwrap(), suite);
    assert!(train_attack_generator(&w.auth, &[], 0, &w.noise, &cfg(1, 0)).is_err());
    assert!(train_attack_generator(&w.auth, &w.attackers, 10, &w.noise, &cfg(1, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn replace_block_touches_only_its_slot(j in 0usize..10, seed in 0u64..1000) {
        let (n_mov, l) = (10, 4);
        let mut rng = rng_from_seed(seed);
        let x = Tensor::new(vec![2, 2 * n_mov * l], (0..2 * 2 * n_mov * l).map(|_| (rng.next_u32() % 100) as f64).collect());
        let blocks = Tensor::full(vec![2, 2 * l], -1.0);
        let idx = mousegate::data_synth::movement_feature_indices(n_mov, l, j);
        let out = replace_block(&x, &idx, &blocks);
        for (k, (a, b)) in out.data().iter().zip(x.data()).enumerate() {
            let col = k % (2 * n_mov * l);
            if idx.contains(&col) {
                prop_assert_eq!(*a, -1.0);
            } else {
                prop_assert_eq!(a, b);
            }
        }
    }
}
