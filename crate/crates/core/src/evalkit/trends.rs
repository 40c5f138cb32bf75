//! Sign tests over (valid user, seed) pairs on synthetic runs.

use serde::{Deserialize, Serialize};

use super::experiment::UserSeedOutcome;
use super::stats::{mean, sign_test, Relation, SignTest};
use super::StrategyKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub name: String,
    pub test: SignTest,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub alpha: f64,
    pub checks: Vec<TrendCheck>,
}

impl TrendReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Mean over selection sizes of one selector metric, or the baseline value.
fn averaged(o: &UserSeedOutcome, tag: StrategyKind, f: impl Fn(&super::StrategyOutcome) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = o.strategies.iter().filter(|s| s.strategy.tag == tag).filter_map(&f).collect();
    (!vals.is_empty()).then(|| mean(&vals))
}

fn tpr1(s: &super::StrategyOutcome) -> Option<f64> {
    Some(s.tpr_s1)
}

/// Runs the trend suite. Selector metrics are averaged over selection sizes
/// within each (user, seed) pair; accuracy monotonicity pools the adjacent
/// steps of every pair.
pub fn trend_report(outcomes: &[UserSeedOutcome], margin: f64, alpha: f64) -> TrendReport {
    let mut checks = Vec::new();
    let mut push = |name: String, pairs: Vec<(f64, f64)>, rel: Relation| {
        let test = sign_test(&pairs, rel);
        checks.push(TrendCheck { name, passed: test.passes(alpha), test });
    };
    use StrategyKind::*;

    let pairs = outcomes
        .iter()
        .filter_map(|o| Some((o.clean_rejection, averaged(o, Plain, tpr1)? + margin)))
        .collect();
    push(format!("clean rejection exceeds undefended scenario-1 TPR by {margin}"), pairs, Relation::GreaterOrEqual);

    let pair_of = |a: StrategyKind, b: StrategyKind| -> Vec<(f64, f64)> {
        outcomes.iter().filter_map(|o| Some((averaged(o, a, tpr1)?, averaged(o, b, tpr1)?))).collect()
    };
    push("scenario-1 TPR improved > basic".into(), pair_of(ImprovedSelector, BasicSelector), Relation::Greater);
    for sel in [ImprovedSelector, BasicSelector] {
        for base in [AdversarialTraining, Distillation] {
            push(format!("scenario-1 TPR {} > {}", sel.tag(), base.tag()), pair_of(sel, base), Relation::Greater);
        }
    }
    for sel in [ImprovedSelector, BasicSelector] {
        let mut pairs = Vec::new();
        for o in outcomes {
            let mut acc: Vec<(usize, f64)> = o
                .strategies
                .iter()
                .filter(|s| s.strategy.tag == sel)
                .filter_map(|s| Some((s.strategy.n_e?, s.accuracy)))
                .collect();
            acc.sort_by_key(|p| p.0);
            pairs.extend(acc.windows(2).map(|w| (w[1].1, w[0].1)));
        }
        push(format!("{} accuracy nondecreasing in n_e", sel.tag()), pairs, Relation::GreaterOrEqual);
    }
    for sel in [ImprovedSelector, BasicSelector] {
        let pairs = outcomes
            .iter()
            .filter_map(|o| Some((averaged(o, sel, tpr1)?, averaged(o, sel, |s| s.tpr_s2)?)))
            .collect();
        push(format!("{} scenario-2 TPR <= scenario-1 TPR", sel.tag()), pairs, Relation::GreaterOrEqual);
    }
    TrendReport { alpha, checks }
}
