//! Paired t-test, sign tests and ROC analysis.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// One-tailed p for `mean(a − b) > 0`.
    pub p: f64,
}

/// Paired t on `d = a − b` with the sample variance, one-tailed upward.
pub fn paired_t_test_one_tailed(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} pairs", a.len()), got: format!("{}", b.len()) });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::Degenerate("paired differences have zero variance".into()));
    }
    let t = m / (var / n as f64).sqrt();
    let df = (n - 1) as f64;
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    Ok(TTest { t, df, p: dist.sf(t) })
}

/// Relation a sign test checks pair by pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `a > b`; ties are dropped.
    Greater,
    /// `a ≥ b`; ties count as successes.
    GreaterOrEqual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub relation: Relation,
    pub n: usize,
    pub successes: usize,
    pub ties: usize,
    /// `P(X ≥ successes)` for `X ~ Binomial(n, 1/2)`.
    pub p: f64,
}

impl SignTest {
    pub fn passes(&self, alpha: f64) -> bool {
        self.n > 0 && self.p < alpha
    }
}

/// One-sided exact sign test of `relation(a_i, b_i)` against chance.
pub fn sign_test(pairs: &[(f64, f64)], relation: Relation) -> SignTest {
    let ties = pairs.iter().filter(|(a, b)| a == b).count();
    let wins = pairs.iter().filter(|(a, b)| a > b).count();
    let (n, successes) = match relation {
        Relation::Greater => (pairs.len() - ties, wins),
        Relation::GreaterOrEqual => (pairs.len(), wins + ties),
    };
    SignTest { relation, n, successes, ties, p: binomial_upper_tail(n, successes) }
}

/// `P(X ≥ k)` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if n == 0 || k > n {
        return if k > n { 0.0 } else { 1.0 };
    }
    let b = Binomial::new(0.5, n as u64).expect("valid binomial");
    1.0 - b.cdf(k as u64 - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(FPR, TPR)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC of a valid-probability score where the positive event is rejecting
/// an attacker: at threshold τ a sample is rejected when its score is < τ.
pub fn roc_curve(valid_scores: &[f64], attacker_scores: &[f64]) -> Result<RocCurve> {
    if valid_scores.is_empty() || attacker_scores.is_empty() {
        return Err(Error::SingleClass);
    }
    let mut all: Vec<(f64, bool)> =
        valid_scores.iter().map(|&s| (s, false)).chain(attacker_scores.iter().map(|&s| (s, true))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (np, nn) = (attacker_scores.len() as f64, valid_scores.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / nn, tp as f64 / np));
    }
    let auc = points.windows(2).map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1)).sum();
    Ok(RocCurve { points, auc })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation_has_unit_auc() {
        let r = roc_curve(&[0.9, 0.8, 0.95], &[0.1, 0.2]).unwrap();
        assert!((r.auc - 1.0).abs() < 1e-12);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn dominated_pairs_are_significant() {
        let b: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).collect();
        let a: Vec<f64> = b.iter().enumerate().map(|(i, v)| v + 1.0 + 1e-3 * (i as f64).sin()).collect();
        assert!(paired_t_test_one_tailed(&a, &b).unwrap().p < 0.01);
        assert!(matches!(paired_t_test_one_tailed(&[1.0, 2.0], &[0.0, 1.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn sign_test_tie_conventions() {
        let pairs = [(1.0, 0.0), (1.0, 1.0), (2.0, 1.0), (0.0, 1.0)];
        let g = sign_test(&pairs, Relation::Greater);
        assert_eq!((g.n, g.successes, g.ties), (3, 2, 1));
        let ge = sign_test(&pairs, Relation::GreaterOrEqual);
        assert_eq!((ge.n, ge.successes), (4, 3));
        assert!((binomial_upper_tail(5, 5) - 1.0 / 32.0).abs() < 1e-12);
        assert!((binomial_upper_tail(4, 3) - 5.0 / 16.0).abs() < 1e-12);
    }
}
