mod common;

use mousegate::config::parse_config_str;
use mousegate::evalkit::fixtures::{CellCheck, FixtureRow, FULL_SELECTION, SELECTION_SIZES};
use mousegate::evalkit::stats::binomial_upper_tail;
use mousegate::evalkit::*;
use mousegate::rng::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;
use statrs::function::gamma::ln_gamma;

/// Upper tail of Student's t by Simpson integration of the density.
fn t_sf_by_quadrature(t: f64, df: f64) -> f64 {
    let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
    let pdf = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    let n = 20_000;
    let (a, b) = (0.0, t.abs());
    let h = (b - a) / n as f64;
    let mut s = pdf(a) + pdf(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(a + i as f64 * h);
    }
    let area = s * h / 3.0;
    if t >= 0.0 {
        0.5 - area
    } else {
        0.5 + area
    }
}

#[test]
fn t_test_matches_quadrature_oracle() {
    let mut rng = rng_from_seed(1);
    for _ in 0..100 {
        let n = rng.random_range(3..25);
        let shift = rng.random_range(-0.3..0.3);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| x - shift + rng.random_range(-0.4..0.4)).collect();
        let r = paired_t_test_one_tailed(&a, &b).unwrap();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let m = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let t = m / (sd / (n as f64).sqrt());
        assert!((r.t - t).abs() < 1e-9 * (1.0 + t.abs()));
        assert_eq!(r.df, (n - 1) as f64);
        let oracle = t_sf_by_quadrature(t, (n - 1) as f64);
        assert!((r.p - oracle).abs() < 1e-6, "t={t} df={} p={} oracle={oracle}", n - 1, r.p);
    }
}

#[test]
fn t_test_errors() {
    assert!(paired_t_test_one_tailed(&[1.0, 2.0], &[1.0]).is_err());
    assert!(paired_t_test_one_tailed(&[1.0], &[0.0]).is_err());
    assert!(paired_t_test_one_tailed(&[1.0, 2.0], &[0.5, 1.5]).is_err());
}

fn mann_whitney_auc(valid: &[f64], attacker: &[f64]) -> f64 {
    let mut s = 0.0;
    for a in attacker {
        for v in valid {
            s += if a < v {
                1.0
            } else if a == v {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (valid.len() * attacker.len()) as f64
}

#[test]
fn roc_auc_matches_mann_whitney() {
    let mut rng = rng_from_seed(2);
    for _ in 0..50 {
        let valid: Vec<f64> = (0..rng.random_range(1..40)).map(|_| (rng.random_range(0.0..1.0f64) * 20.0).round() / 20.0).collect();
        let attacker: Vec<f64> = (0..rng.random_range(1..40)).map(|_| (rng.random_range(0.0..0.8f64) * 20.0).round() / 20.0).collect();
        let roc = roc_curve(&valid, &attacker).unwrap();
        assert!((roc.auc - mann_whitney_auc(&valid, &attacker)).abs() < 1e-6);
        let first = roc.points.first().unwrap();
        let last = roc.points.last().unwrap();
        assert_eq!((first.0, first.1), (0.0, 0.0));
        assert_eq!((last.0, last.1), (1.0, 1.0));
    }
    assert!(roc_curve(&[], &[0.1]).is_err());
}

#[test]
fn identical_distributions_give_half_auc() {
    let mut rng = rng_from_seed(3);
    let valid: Vec<f64> = (0..4000).map(|_| rng.random_range(0.0..1.0)).collect();
    let attacker: Vec<f64> = (0..4000).map(|_| rng.random_range(0.0..1.0)).collect();
    let auc = roc_curve(&valid, &attacker).unwrap().auc;
    assert!((auc - 0.5).abs() < 0.02, "{auc}");
}

#[test]
fn sign_test_counts() {
    let pairs = [(1.0, 0.0), (1.0, 0.0), (0.5, 0.5), (0.0, 1.0), (2.0, 1.0)];
    let s = sign_test(&pairs, Relation::Greater);
    assert_eq!((s.n, s.successes, s.ties), (4, 3, 1));
    assert!((s.p - 5.0 / 16.0).abs() < 1e-12);
    let s = sign_test(&pairs, Relation::GreaterOrEqual);
    assert_eq!((s.n, s.successes), (5, 4));
    assert!((s.p - 6.0 / 32.0).abs() < 1e-12);
    assert!((binomial_upper_tail(10, 8) - 56.0 / 1024.0).abs() < 1e-12);
}

#[test]
fn fixture_means_match_printed() {
    let f = load_paper_fixtures();
    let means = f.all_means();
    assert!(means.len() >= 30);
    for (name, printed, got) in &means {
        assert!((printed - got).abs() <= 0.001 + 1e-12, "{name}: printed {printed}, recomputed {got}");
    }
    let m = |r: Option<&FixtureRow>| (r.unwrap().mean() * 1000.0).round() / 1000.0;
    assert_eq!(m(f.improved(Metric::TprScenario1, 2)), 0.724);
    assert_eq!(m(f.improved_accuracy.get(5)), 0.851);
    assert_eq!(m(f.basic_accuracy.get(4)), 0.805);
    assert_eq!(m(f.basic_tpr.scenario1.get(5)), 0.388);
    assert_eq!((m(Some(&f.adversarial_training.accuracy)), m(Some(&f.adversarial_training.tpr))), (0.876, 0.195));
    assert_eq!((m(Some(&f.distillation.accuracy)), m(Some(&f.distillation.tpr))), (0.896, 0.118));
    assert_eq!(m(f.improved_accuracy.get(FULL_SELECTION)), 0.913);
    assert_eq!(m(f.improved(Metric::TprScenario1, FULL_SELECTION)), 0.048);
    for r in means.iter() {
        assert!(r.2.is_finite());
    }
}

#[test]
fn printed_grid_has_one_cell_per_metric_ne_opponent() {
    let cells = printed_comparisons();
    assert_eq!(cells.len(), 3 * SELECTION_SIZES.len() * 3);
    let mut seen = std::collections::HashSet::new();
    for c in &cells {
        assert!(seen.insert((c.metric.label(), c.against.tag(), c.n_e)));
    }
}

#[test]
fn printed_grid_is_reproduced_except_one_p_value() {
    let checks = check_printed_comparisons(&load_paper_fixtures()).unwrap();
    assert!(checks.iter().all(CellCheck::direction_matches));
    let off: Vec<&CellCheck> = checks.iter().filter(|c| c.p_factor() > 1.5).collect();
    assert_eq!(off.len(), 1, "{off:?}");
    let c = off[0];
    assert_eq!((c.cell.metric, c.cell.against, c.cell.n_e), (Metric::Accuracy, StrategyKind::AdversarialTraining, 4));
    assert!((c.p_factor() - 1.747).abs() < 0.01, "{}", c.p_factor());
}

#[test]
fn experiment_resumes_from_cache_and_reports_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config_str("", &common::tiny_overrides(dir.path()), "tiny").unwrap();
    let first = run_full_experiment(&cfg).unwrap();
    assert_eq!((first.cache_hits, first.computed), (0, 4));
    let second = run_full_experiment(&cfg).unwrap();
    assert_eq!((second.cache_hits, second.computed), (4, 0));
    assert_eq!(first.tables, second.tables);
    assert_eq!(load_cached_outcomes(&cfg).unwrap(), first.outcomes);

    assert_eq!(first.comparisons.len(), 3 * 2 * 3);
    let names: Vec<String> = first.tables.iter().map(|t| t.strategy.name()).collect();
    for want in ["improved_selector_ne2", "basic_selector_ne3", "adv_training", "distillation", "none"] {
        assert!(names.iter().any(|n| n == want), "{names:?}");
    }
    for t in &first.tables {
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.seeds, vec![0, 1]);
        let tsv = std::fs::read_to_string(first.out_dir.join("tables").join(format!("{}.tsv", t.strategy.name()))).unwrap();
        assert_eq!(tsv, t.to_tsv());
    }
    for f in ["comparison.tsv", "summary.json", "plots/accuracy.svg", "plots/roc_adversarial.tsv"] {
        assert!(first.out_dir.join(f).exists(), "{f}");
    }
    assert!(!first.trends.checks.is_empty());

    let mut other = cfg.clone();
    other.seed = 1;
    assert!(matches!(load_cached_outcomes(&other), Err(mousegate::Error::MissingCheckpoint(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn table_means_are_row_means(rows in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..30)) {
        let rows: Vec<ResultRow> = rows
            .iter()
            .enumerate()
            .map(|(i, &(a, s1, s2))| ResultRow { user: i as u32, seed: 0, accuracy: a, tpr_s1: s1, tpr_s2: Some(s2) })
            .collect();
        let t = ResultsTable::new(StrategyUnderTest::new(StrategyKind::ImprovedSelector, Some(2)).unwrap(), rows.clone(), "h".into()).unwrap();
        let n = rows.len() as f64;
        prop_assert!((t.mean.accuracy - rows.iter().map(|r| r.accuracy).sum::<f64>() / n).abs() < 1e-12);
        prop_assert!((t.mean.tpr_s1 - rows.iter().map(|r| r.tpr_s1).sum::<f64>() / n).abs() < 1e-12);
        prop_assert!((t.mean.tpr_s2.unwrap() - rows.iter().map(|r| r.tpr_s2.unwrap()).sum::<f64>() / n).abs() < 1e-12);
        prop_assert_eq!(t.to_tsv().lines().count(), rows.len() + 3);
    }
}
