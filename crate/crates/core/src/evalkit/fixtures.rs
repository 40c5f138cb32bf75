//! Published per-user results for 18 users, embedded for validating the
//! statistics pipeline without training anything.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::stats::{mean, paired_t_test_one_tailed};
use super::{Metric, StrategyKind};
use crate::error::Result;

pub const N_USERS: usize = 18;
/// Selection size meaning "every movement kept", i.e. the bare authenticator.
pub const FULL_SELECTION: usize = 10;
pub const SELECTION_SIZES: [usize; 4] = [2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub values: Vec<f64>,
    pub printed_mean: f64,
}

impl FixtureRow {
    fn new(values: [f64; N_USERS], printed_mean: f64) -> Self {
        Self { values: values.to_vec(), printed_mean }
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }
}

/// Rows keyed by selection size, with [`FULL_SELECTION`] for the baseline row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorRows {
    pub rows: Vec<(usize, FixtureRow)>,
}

impl SelectorRows {
    pub fn get(&self, n_e: usize) -> Option<&FixtureRow> {
        self.rows.iter().find(|(k, _)| *k == n_e).map(|(_, r)| r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorTpr {
    pub scenario1: SelectorRows,
    pub scenario2: SelectorRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRows {
    pub accuracy: FixtureRow,
    pub tpr: FixtureRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperFixtures {
    pub improved_tpr: SelectorTpr,
    pub basic_tpr: SelectorTpr,
    pub adversarial_training: BaselineRows,
    pub distillation: BaselineRows,
    pub basic_accuracy: SelectorRows,
    pub improved_accuracy: SelectorRows,
}

impl PaperFixtures {
    /// `(printed, recomputed)` for every mean in the fixtures, labelled.
    pub fn all_means(&self) -> Vec<(String, f64, f64)> {
        let mut out = Vec::new();
        let mut rows = |name: &str, r: &SelectorRows| {
            for (n_e, row) in &r.rows {
                out.push((format!("{name} n_e={n_e}"), row.printed_mean, row.mean()));
            }
        };
        rows("improved tpr s1", &self.improved_tpr.scenario1);
        rows("improved tpr s2", &self.improved_tpr.scenario2);
        rows("basic tpr s1", &self.basic_tpr.scenario1);
        rows("basic tpr s2", &self.basic_tpr.scenario2);
        rows("basic accuracy", &self.basic_accuracy);
        rows("improved accuracy", &self.improved_accuracy);
        for (name, b) in [("adversarial training", &self.adversarial_training), ("distillation", &self.distillation)] {
            out.push((format!("{name} accuracy"), b.accuracy.printed_mean, b.accuracy.mean()));
            out.push((format!("{name} tpr"), b.tpr.printed_mean, b.tpr.mean()));
        }
        out
    }

    /// Per-user values the improved selector is compared on.
    pub fn improved(&self, metric: Metric, n_e: usize) -> Option<&FixtureRow> {
        match metric {
            Metric::Accuracy => self.improved_accuracy.get(n_e),
            Metric::TprScenario1 => self.improved_tpr.scenario1.get(n_e),
            Metric::TprScenario2 => self.improved_tpr.scenario2.get(n_e),
        }
    }

    /// Per-user values of a comparison strategy. Baselines have no selection
    /// size and use one TPR row for both scenarios.
    pub fn baseline(&self, strategy: StrategyKind, metric: Metric, n_e: usize) -> Option<&FixtureRow> {
        fn plain(b: &BaselineRows, metric: Metric) -> &FixtureRow {
            match metric {
                Metric::Accuracy => &b.accuracy,
                _ => &b.tpr,
            }
        }
        match strategy {
            StrategyKind::AdversarialTraining => Some(plain(&self.adversarial_training, metric)),
            StrategyKind::Distillation => Some(plain(&self.distillation, metric)),
            StrategyKind::BasicSelector => match metric {
                Metric::Accuracy => self.basic_accuracy.get(n_e),
                Metric::TprScenario1 => self.basic_tpr.scenario1.get(n_e),
                Metric::TprScenario2 => self.basic_tpr.scenario2.get(n_e),
            },
            StrategyKind::ImprovedSelector | StrategyKind::Plain => None,
        }
    }
}

const SHARED_S1_FULL: [f64; N_USERS] =
    [0.068, 0.035, 0.13, 0.035, 0.0, 0.276, 0.085, 0.0, 0.004, 0.0, 0.004, 0.087, 0.0, 0.0, 0.034, 0.013, 0.0, 0.087];
const SHARED_ACC_FULL: [f64; N_USERS] =
    [0.923, 0.911, 0.894, 0.947, 0.962, 0.965, 0.953, 0.918, 0.833, 0.863, 0.91, 0.903, 0.841, 0.922, 0.934, 0.882, 0.966, 0.913];

fn rows(list: Vec<(usize, [f64; N_USERS], f64)>) -> SelectorRows {
    SelectorRows { rows: list.into_iter().map(|(k, v, m)| (k, FixtureRow::new(v, m))).collect() }
}

pub fn load_paper_fixtures() -> PaperFixtures {
    let improved_tpr = SelectorTpr {
        scenario1: rows(vec![
            (FULL_SELECTION, SHARED_S1_FULL, 0.048),
            (2, [0.817, 0.667, 0.492, 0.987, 1.0, 0.874, 0.908, 1.0, 0.511, 0.667, 0.969, 1.0, 0.719, 0.307, 0.015, 0.962, 0.143, 0.996], 0.724),
            (3, [0.909, 0.667, 0.408, 0.948, 1.0, 0.841, 0.913, 0.0, 0.473, 1.0, 0.328, 1.0, 0.687, 0.903, 0.025, 0.919, 0.126, 0.978], 0.674),
            (4, [0.908, 0.662, 0.385, 0.974, 0.667, 0.882, 0.894, 1.0, 0.235, 0.667, 0.333, 1.0, 0.835, 0.307, 0.024, 0.97, 0.134, 0.965], 0.658),
            (5, [0.566, 0.0, 0.667, 0.948, 0.649, 0.118, 0.849, 0.0, 0.013, 1.0, 0.313, 1.0, 0.812, 0.299, 0.004, 0.004, 1.0, 0.096], 0.463),
        ]),
        scenario2: rows(vec![
            (2, [0.258, 0.415, 0.229, 1.0, 0.87, 0.253, 0.499, 0.333, 0.734, 0.0, 0.0, 0.571, 0.25, 0.0, 0.02, 0.329, 0.143, 1.0], 0.384),
            (3, [0.272, 0.088, 0.144, 0.758, 0.341, 0.212, 0.585, 0.0, 0.004, 0.996, 0.0, 0.556, 0.123, 0.157, 0.034, 0.299, 0.126, 1.0], 0.316),
            (4, [0.395, 0.108, 0.177, 0.587, 0.035, 0.301, 0.497, 0.333, 0.0, 0.494, 0.0, 0.854, 0.181, 0.0, 0.02, 0.342, 0.134, 1.0], 0.303),
            (5, [0.245, 0.233, 0.532, 0.537, 0.052, 0.118, 0.484, 0.0, 0.018, 0.973, 0.0, 0.569, 0.162, 0.0, 0.004, 0.307, 0.75, 0.122], 0.284),
        ]),
    };
    let basic_tpr = SelectorTpr {
        scenario1: rows(vec![
            (FULL_SELECTION, SHARED_S1_FULL, 0.048),
            (2, [0.817, 0.325, 0.492, 0.987, 1.0, 0.874, 0.908, 0.0, 0.424, 0.667, 0.969, 1.0, 0.719, 0.299, 0.015, 0.962, 0.134, 0.996], 0.644),
            (3, [0.909, 0.662, 0.408, 0.948, 1.0, 0.841, 0.913, 0.0, 0.0, 1.0, 0.328, 1.0, 0.687, 0.299, 0.025, 0.919, 0.143, 0.978], 0.614),
            (4, [0.908, 0.654, 0.385, 0.974, 0.333, 0.882, 0.894, 0.004, 0.004, 0.667, 0.333, 1.0, 0.835, 0.281, 0.024, 0.97, 0.126, 0.965], 0.569),
            (5, [0.566, 0.005, 0.667, 0.948, 0.0, 0.118, 0.849, 0.0, 0.271, 1.0, 0.313, 1.0, 0.812, 0.0, 0.004, 0.004, 0.333, 0.096], 0.388),
        ]),
        scenario2: rows(vec![
            (2, [0.258, 0.039, 0.229, 1.0, 0.488, 0.253, 0.499, 0.0, 0.635, 0.0, 0.0, 0.571, 0.25, 0.0, 0.02, 0.329, 0.134, 1.0], 0.317),
            (3, [0.272, 0.135, 0.144, 0.758, 0.607, 0.212, 0.585, 0.0, 0.022, 0.996, 0.0, 0.556, 0.123, 0.0, 0.034, 0.299, 0.143, 1.0], 0.327),
            (4, [0.395, 0.151, 0.177, 0.587, 0.0, 0.301, 0.497, 0.004, 0.009, 0.494, 0.0, 0.854, 0.181, 0.0, 0.02, 0.342, 0.126, 1.0], 0.285),
            (5, [0.245, 0.005, 0.532, 0.537, 0.0, 0.118, 0.484, 0.0, 0.014, 0.973, 0.0, 0.569, 0.162, 0.0, 0.004, 0.307, 0.333, 0.122], 0.245),
        ]),
    };
    let adversarial_training = BaselineRows {
        accuracy: FixtureRow::new(
            [0.882, 0.863, 0.788, 0.911, 0.917, 0.894, 0.974, 0.966, 0.873, 0.788, 0.833, 0.882, 0.821, 0.923, 0.833, 0.833, 0.981, 0.807],
            0.876,
        ),
        tpr: FixtureRow::new(
            [0.0, 0.061, 0.0, 0.056, 0.139, 0.0, 0.014, 0.058, 0.0, 0.122, 0.991, 0.121, 0.087, 0.0, 1.0, 0.0, 0.004, 0.849],
            0.195,
        ),
    };
    let distillation = BaselineRows {
        accuracy: FixtureRow::new(
            [0.871, 0.931, 0.831, 0.953, 0.926, 0.821, 0.931, 0.929, 0.826, 0.857, 0.894, 0.902, 0.784, 0.918, 0.933, 0.898, 1.0, 0.929],
            0.896,
        ),
        tpr: FixtureRow::new(
            [0.0, 0.0, 0.0, 0.265, 0.0, 1.0, 0.0, 0.052, 0.214, 0.346, 0.0, 0.004, 0.0, 0.0, 0.005, 0.0, 0.004, 0.229],
            0.118,
        ),
    };
    let basic_accuracy = rows(vec![
        (FULL_SELECTION, SHARED_ACC_FULL, 0.913),
        (2, [0.613, 0.776, 0.615, 0.641, 0.685, 0.732, 0.621, 0.804, 0.638, 0.653, 0.809, 0.647, 0.745, 0.918, 0.733, 0.729, 0.796, 0.75], 0.717),
        (3, [0.661, 0.845, 0.708, 0.781, 0.667, 0.857, 0.721, 0.786, 0.681, 0.674, 0.851, 0.647, 0.804, 0.857, 0.717, 0.797, 0.898, 0.804], 0.764),
        (4, [0.71, 0.914, 0.677, 0.828, 0.778, 0.911, 0.855, 0.875, 0.638, 0.714, 0.872, 0.784, 0.726, 0.837, 0.8, 0.831, 0.918, 0.821], 0.805),
        (5, [0.855, 0.914, 0.677, 0.859, 0.852, 0.946, 0.972, 0.857, 0.797, 0.735, 0.915, 0.843, 0.765, 0.837, 0.867, 0.881, 0.918, 0.839], 0.852),
    ]);
    let improved_accuracy = rows(vec![
        (FULL_SELECTION, SHARED_ACC_FULL, 0.913),
        (2, [0.613, 0.655, 0.615, 0.641, 0.685, 0.732, 0.621, 0.804, 0.681, 0.653, 0.809, 0.647, 0.549, 0.918, 0.733, 0.729, 0.878, 0.679], 0.702),
        (3, [0.661, 0.828, 0.708, 0.781, 0.685, 0.857, 0.721, 0.893, 0.71, 0.674, 0.851, 0.647, 0.49, 0.837, 0.717, 0.797, 0.918, 0.749], 0.751),
        (4, [0.71, 0.862, 0.677, 0.828, 0.815, 0.911, 0.855, 0.857, 0.826, 0.714, 0.872, 0.784, 0.608, 0.898, 0.8, 0.831, 0.898, 0.816], 0.809),
        (5, [0.855, 0.897, 0.677, 0.859, 0.852, 0.946, 0.972, 0.839, 0.812, 0.735, 0.915, 0.843, 0.667, 0.898, 0.867, 0.881, 0.918, 0.886], 0.851),
    ]);
    PaperFixtures { improved_tpr, basic_tpr, adversarial_training, distillation, basic_accuracy, improved_accuracy }
}

/// One published comparison of the improved selector against another strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrintedCell {
    pub metric: Metric,
    pub against: StrategyKind,
    pub n_e: usize,
    /// Printed order of improved vs `against`.
    #[serde(with = "ordering_serde")]
    pub direction: Ordering,
    pub p: f64,
}

pub(crate) mod ordering_serde {
    use std::cmp::Ordering;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(o: &Ordering, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(super::super::ordering_symbol(*o))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ordering, D::Error> {
        match String::deserialize(d)?.as_str() {
            "<" => Ok(Ordering::Less),
            ">" => Ok(Ordering::Greater),
            "=" => Ok(Ordering::Equal),
            other => Err(serde::de::Error::custom(format!("unknown ordering {other:?}"))),
        }
    }
}

/// The 36 printed comparison cells in grid order: metric, n_e, opponent.
pub fn printed_comparisons() -> Vec<PrintedCell> {
    use Ordering::{Greater as G, Less as L};
    use StrategyKind::{AdversarialTraining as Adv, BasicSelector as Bas, Distillation as Dis};
    let acc = [
        (2, [(L, 1.992e-07), (L, 1.260e-08), (L, 0.161)]),
        (3, [(L, 2.372e-05), (L, 9.243e-07), (L, 0.256)]),
        (4, [(L, 5.092e-04), (L, 1.749e-05), (G, 0.385)]),
        (5, [(L, 0.106), (L, 0.005), (L, 0.468)]),
    ];
    let s1 = [
        (2, [(G, 1.266e-04), (G, 9.750e-07), (G, 0.090)]),
        (3, [(G, 0.001), (G, 5.431e-06), (G, 0.086)]),
        (4, [(G, 0.001), (G, 4.768e-06), (G, 0.070)]),
        (5, [(G, 0.040), (G, 0.005), (G, 0.094)]),
    ];
    let s2 = [
        (2, [(G, 0.064), (G, 0.006), (G, 0.029)]),
        (3, [(G, 0.144), (G, 0.016), (L, 0.279)]),
        (4, [(G, 0.160), (G, 0.018), (G, 0.176)]),
        (5, [(G, 0.243), (G, 0.040), (G, 0.074)]),
    ];
    let mut out = Vec::with_capacity(36);
    for (metric, grid) in [(Metric::Accuracy, acc), (Metric::TprScenario1, s1), (Metric::TprScenario2, s2)] {
        for (n_e, cells) in grid {
            for (against, (direction, p)) in [Adv, Dis, Bas].into_iter().zip(cells) {
                out.push(PrintedCell { metric, against, n_e, direction, p });
            }
        }
    }
    out
}

/// A printed cell recomputed from the fixture rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellCheck {
    pub cell: PrintedCell,
    pub improved_mean: f64,
    pub other_mean: f64,
    #[serde(with = "ordering_serde")]
    pub direction: Ordering,
    pub p: f64,
}

impl CellCheck {
    pub fn direction_matches(&self) -> bool {
        self.direction == self.cell.direction
    }

    /// `max(p / printed, printed / p)`.
    pub fn p_factor(&self) -> f64 {
        (self.p / self.cell.p).max(self.cell.p / self.p)
    }
}

/// Recomputes every printed comparison; the p-value is one-tailed in the
/// observed direction.
pub fn check_printed_comparisons(f: &PaperFixtures) -> Result<Vec<CellCheck>> {
    printed_comparisons()
        .into_iter()
        .map(|cell| {
            let a = f.improved(cell.metric, cell.n_e).expect("fixture row");
            let b = f.baseline(cell.against, cell.metric, cell.n_e).expect("fixture row");
            let (ma, mb) = (a.mean(), b.mean());
            let direction = ma.total_cmp(&mb);
            let t = match direction {
                Ordering::Less => paired_t_test_one_tailed(&b.values, &a.values)?,
                _ => paired_t_test_one_tailed(&a.values, &b.values)?,
            };
            Ok(CellCheck { cell, improved_mean: ma, other_mean: mb, direction, p: t.p })
        })
        .collect()
}
