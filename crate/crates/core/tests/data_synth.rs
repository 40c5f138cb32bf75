use std::io::Write;
use std::time::Instant;

use mousegate::data_synth::*;
use mousegate::Error;
use proptest::prelude::*;

fn profile(id: u32, speed: f64, tremor: f64, jitter: f64) -> SubjectProfile {
    SubjectProfile {
        subject_id: id,
        speed_scale: vec![speed; 10],
        curvature_bias: 0.1,
        tremor_amplitude: tremor,
        timing_jitter: jitter,
        seed: 100 + id as u64,
    }
}

fn trial_speed(t: &Trial) -> f64 {
    t.movements.iter().map(Movement::mean_speed).sum::<f64>() / t.n_movements() as f64
}

#[test]
fn speed_scales_are_separable_by_a_threshold() {
    let pattern = TaskPattern::with_length(40);
    let corpus = synthesize_with_profiles(&pattern, vec![profile(0, 0.5, 8.0, 0.1), profile(1, 2.0, 8.0, 0.1)], 30, 4).unwrap();
    let slow: Vec<f64> = corpus.trials_of(0).map(|(_, t)| trial_speed(t)).collect();
    let fast: Vec<f64> = corpus.trials_of(1).map(|(_, t)| trial_speed(t)).collect();
    let mut cands: Vec<f64> = slow.iter().chain(&fast).copied().collect();
    cands.sort_by(f64::total_cmp);
    let best = cands
        .iter()
        .map(|&th| {
            let correct = slow.iter().filter(|&&s| s < th).count() + fast.iter().filter(|&&s| s >= th).count();
            correct as f64 / (slow.len() + fast.len()) as f64
        })
        .fold(0.0, f64::max);
    assert_eq!(best, 1.0);
}

#[test]
fn default_corpus_shape_and_determinism() {
    let p = TaskPattern::default_login();
    let a = synthesize_corpus(&p, 8, 66, 1).unwrap();
    let b = synthesize_corpus(&p, 8, 66, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trials.len(), 8 * 66);
    for t in &a.trials {
        assert_eq!(t.n_movements(), 10);
        assert_eq!(t.movement_length(), 160);
        assert!(t.features().iter().all(|v| v.is_finite()));
    }
    let c = synthesize_corpus(&p, 8, 66, 2).unwrap();
    assert_ne!(a.trials, c.trials);
}

#[test]
fn save_load_round_trip_is_fast_and_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthesize_corpus(&TaskPattern::default_login(), 8, 66, 1).unwrap();
    let path = dir.path().join("c.jsonl");
    let t0 = Instant::now();
    save_corpus(&corpus, &path).unwrap();
    let back = load_corpus(&path).unwrap();
    let took = t0.elapsed();
    assert_eq!(back, corpus);
    assert!(took.as_secs_f64() < 5.0, "round trip took {took:?}");
}

#[test]
fn truncated_file_is_rejected_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthesize_corpus(&TaskPattern::with_length(8), 5, 10, 1).unwrap();
    let path = dir.path().join("c.jsonl");
    save_corpus(&corpus, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let keep: Vec<&str> = text.lines().take(20).collect();
    std::fs::write(&path, keep.join("\n")).unwrap();
    match load_corpus(&path) {
        Err(Error::Parse { line, msg, .. }) => {
            assert_eq!(line, 20);
            assert!(msg.contains("truncated"), "{msg}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }

    let half = &text.lines().nth(3).unwrap()[..40];
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "{}", text.lines().next().unwrap()).unwrap();
    writeln!(f, "{}", text.lines().nth(1).unwrap()).unwrap();
    writeln!(f, "{half}").unwrap();
    drop(f);
    assert!(matches!(load_corpus(&path), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn split_matches_ratios_and_holds_out_attackers() {
    let corpus = synthesize_corpus(&TaskPattern::with_length(8), 8, 66, 1).unwrap();
    let ratios = SplitRatios { balanced_test: false, ..SplitRatios::default() };
    let s = make_split(&corpus, 2, 3, ratios, 9).unwrap();
    assert_eq!(s.invalid_users.len(), 4);
    assert_eq!(s.attackers.len(), 3);
    for part in [&s.train, &s.validation, &s.test] {
        for &i in part.iter() {
            assert!(!s.attackers.contains(&corpus.trials[i].subject_id));
        }
    }
    for (class, n_subjects) in [(Label::Valid, 1.0), (Label::Invalid, 4.0)] {
        let count = |idx: &[usize]| idx.iter().filter(|&&i| s.label_of(&corpus, i) == class).count() as f64;
        let total = 66.0 * n_subjects;
        assert!((count(&s.train) - 0.6 * total).abs() <= n_subjects + 1.0);
        assert!((count(&s.validation) - 0.2 * total).abs() <= n_subjects + 1.0);
    }
    assert!(make_split(&corpus, 0, 7, ratios, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn position_velocity_round_trip(
        steps in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..60),
        x0 in -500.0f64..500.0,
        y0 in -500.0f64..500.0,
    ) {
        let period = 0.01;
        let mut raw = vec![(x0, y0, 0.0)];
        for (k, (dx, dy)) in steps.iter().enumerate() {
            let last = raw[k];
            raw.push((last.0 + dx, last.1 + dy, (k + 1) as f64 * period));
        }
        let v = velocities_from_raw(&raw).unwrap();
        prop_assert_eq!(v.len(), raw.len() - 1);
        let p = positions_from_velocities(&v, [x0, y0], period);
        for (got, want) in p.iter().zip(&raw[1..]) {
            prop_assert!((got[0] - want.0).abs() < 1e-9 && (got[1] - want.1).abs() < 1e-9);
        }
    }

    #[test]
    fn generation_is_pure(seed in 0u64..1000) {
        let p = TaskPattern::with_length(6);
        let profiles = default_profiles(5, 10, seed);
        let a = synthesize_with_profiles(&p, profiles.clone(), 10, seed).unwrap();
        let b = synthesize_with_profiles(&p, profiles, 10, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
