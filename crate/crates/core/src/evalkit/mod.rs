//! Experiment orchestration, result tables, significance tests and plots.

mod experiment;
pub mod fixtures;
pub mod plots;
pub mod stats;
mod trends;

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use experiment::{
    build_tables, evaluate_strategy, load_cached_outcomes, resolve_corpus, run_full_experiment, run_user_seed, write_report,
    ExperimentReport, RocScores, StrategyOutcome, UserSeedOutcome,
};
pub use fixtures::{check_printed_comparisons, load_paper_fixtures, printed_comparisons, PaperFixtures};
pub use stats::{mean, paired_t_test_one_tailed, roc_curve, sign_test, Relation, RocCurve, SignTest, TTest};
pub use trends::{trend_report, TrendCheck, TrendReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    ImprovedSelector,
    BasicSelector,
    #[serde(rename = "adv_training")]
    AdversarialTraining,
    Distillation,
    #[serde(rename = "none")]
    Plain,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Plain,
        StrategyKind::ImprovedSelector,
        StrategyKind::BasicSelector,
        StrategyKind::AdversarialTraining,
        StrategyKind::Distillation,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            StrategyKind::ImprovedSelector => "improved_selector",
            StrategyKind::BasicSelector => "basic_selector",
            StrategyKind::AdversarialTraining => "adv_training",
            StrategyKind::Distillation => "distillation",
            StrategyKind::Plain => "none",
        }
    }

    pub fn uses_selector(self) -> bool {
        matches!(self, StrategyKind::ImprovedSelector | StrategyKind::BasicSelector)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    TprScenario1,
    TprScenario2,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Accuracy, Metric::TprScenario1, Metric::TprScenario2];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::TprScenario1 => "tpr_classifier_accessible",
            Metric::TprScenario2 => "tpr_classifier_and_selector_accessible",
        }
    }
}

pub fn ordering_symbol(o: Ordering) -> &'static str {
    match o {
        Ordering::Less => "<",
        Ordering::Equal => "=",
        Ordering::Greater => ">",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrategyUnderTest {
    pub tag: StrategyKind,
    pub n_e: Option<usize>,
    /// Checkpoint stems the strategy is evaluated from, when loaded from disk.
    #[serde(default)]
    pub checkpoints: Vec<String>,
}

impl StrategyUnderTest {
    pub fn new(tag: StrategyKind, n_e: Option<usize>) -> Result<Self> {
        let s = Self { tag, n_e, checkpoints: Vec::new() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.tag.uses_selector(), self.n_e) {
            (true, None) => Err(Error::InvalidInput(format!("{} needs n_e", self.tag.tag()))),
            (false, Some(_)) => Err(Error::InvalidInput(format!("{} takes no n_e", self.tag.tag()))),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self.n_e {
            Some(n) => format!("{}_ne{n}", self.tag.tag()),
            None => self.tag.tag().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub user: u32,
    pub seed: u64,
    pub accuracy: f64,
    pub tpr_s1: f64,
    pub tpr_s2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub accuracy: f64,
    pub tpr_s1: f64,
    pub tpr_s2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub strategy: StrategyUnderTest,
    pub rows: Vec<ResultRow>,
    pub mean: MeanRow,
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

impl ResultsTable {
    pub fn new(strategy: StrategyUnderTest, rows: Vec<ResultRow>, config_hash: String) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("results table"));
        }
        let col = |f: &dyn Fn(&ResultRow) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
        let tpr_s2 = if rows.iter().all(|r| r.tpr_s2.is_some()) {
            Some(col(&|r| r.tpr_s2.unwrap_or(f64::NAN)))
        } else {
            None
        };
        let mean = MeanRow { accuracy: col(&|r| r.accuracy), tpr_s1: col(&|r| r.tpr_s1), tpr_s2 };
        let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        Ok(Self { strategy, rows, mean, seeds, config_hash })
    }

    pub fn column(&self, metric: Metric) -> Option<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| match metric {
                Metric::Accuracy => Some(r.accuracy),
                Metric::TprScenario1 => Some(r.tpr_s1),
                Metric::TprScenario2 => r.tpr_s2,
            })
            .collect()
    }

    /// Tab-separated rows followed by the mean row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# strategy={} config={}", self.strategy.name(), self.config_hash);
        s.push_str("user\tseed\taccuracy\ttpr_classifier_accessible\ttpr_classifier_and_selector_accessible\n");
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{:.6}\t{:.6}\t{}", r.user, r.seed, r.accuracy, r.tpr_s1, opt(r.tpr_s2));
        }
        let m = &self.mean;
        let _ = writeln!(s, "mean\t-\t{:.6}\t{:.6}\t{}", m.accuracy, m.tpr_s1, opt(m.tpr_s2));
        s
    }
}

/// One cell of the improved-selector comparison grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub metric: Metric,
    pub against: StrategyKind,
    pub n_e: usize,
    pub improved_mean: f64,
    pub other_mean: f64,
    /// One-tailed p in the observed direction; `None` with fewer than two
    /// pairs or constant differences.
    pub p: Option<f64>,
}

impl ComparisonCell {
    pub fn direction(&self) -> Ordering {
        self.improved_mean.total_cmp(&self.other_mean)
    }

    pub fn render(&self) -> String {
        let p = self.p.map_or_else(|| "p=n/a".to_string(), |p| format!("p={p:.3e}"));
        format!("{:.3}{}{:.3} {p}", self.improved_mean, ordering_symbol(self.direction()), self.other_mean)
    }
}

pub fn compare(metric: Metric, against: StrategyKind, n_e: usize, improved: &[f64], other: &[f64]) -> Result<ComparisonCell> {
    let (ma, mb) = (mean(improved), mean(other));
    let t = match ma.total_cmp(&mb) {
        Ordering::Less => paired_t_test_one_tailed(other, improved),
        _ => paired_t_test_one_tailed(improved, other),
    };
    let p = match t {
        Ok(t) => Some(t.p),
        Err(Error::Degenerate(_)) => None,
        Err(_) if improved.len() < 2 && improved.len() == other.len() => None,
        Err(e) => return Err(e),
    };
    Ok(ComparisonCell { metric, against, n_e, improved_mean: ma, other_mean: mb, p })
}

const OPPONENTS: [StrategyKind; 3] =
    [StrategyKind::AdversarialTraining, StrategyKind::Distillation, StrategyKind::BasicSelector];

/// Improved selector against adversarial training, distillation and the
/// basic selector, for every metric and selection size. Baselines have a
/// single TPR column, reused for both scenarios.
pub fn comparison_matrix(tables: &[ResultsTable], n_es: &[usize]) -> Result<Vec<ComparisonCell>> {
    let find = |tag: StrategyKind, n_e: Option<usize>| {
        tables.iter().find(|t| t.strategy.tag == tag && t.strategy.n_e == n_e)
    };
    let mut cells = Vec::new();
    for metric in Metric::ALL {
        for &n_e in n_es {
            let Some(imp) = find(StrategyKind::ImprovedSelector, Some(n_e)) else { continue };
            for against in OPPONENTS {
                let other = if against.uses_selector() { find(against, Some(n_e)) } else { find(against, None) };
                let Some(other) = other else { continue };
                let other_metric = if against.uses_selector() || metric == Metric::Accuracy {
                    metric
                } else {
                    Metric::TprScenario1
                };
                let a = imp.column(metric).ok_or(Error::Empty("improved column"))?;
                let b = other.column(other_metric).ok_or(Error::Empty("comparison column"))?;
                cells.push(compare(metric, against, n_e, &a, &b)?);
            }
        }
    }
    Ok(cells)
}

/// Renders the grid as delimited text: one line per metric, one column per
/// `(n_e, opponent)`.
pub fn render_comparison_matrix(cells: &[ComparisonCell]) -> String {
    let rank = |k: StrategyKind| OPPONENTS.iter().position(|o| *o == k).unwrap_or(OPPONENTS.len());
    let mut cols: Vec<(usize, StrategyKind)> = cells.iter().map(|c| (c.n_e, c.against)).collect();
    cols.sort_by_key(|&(n, k)| (n, rank(k)));
    cols.dedup();
    let mut s = String::from("metric");
    for (n_e, against) in &cols {
        let _ = write!(s, "\tn_e={n_e} vs {}", against.tag());
    }
    s.push('\n');
    for metric in Metric::ALL {
        let _ = write!(s, "{}", metric.label());
        for (n_e, against) in &cols {
            let cell = cells.iter().find(|c| c.metric == metric && c.n_e == *n_e && c.against == *against);
            let _ = write!(s, "\t{}", cell.map_or_else(|| "-".to_string(), ComparisonCell::render));
        }
        s.push('\n');
    }
    s
}
