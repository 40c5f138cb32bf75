//! Closed-form model of the gap between a generated movement and an
//! attacker's manual replication of it.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_synth::Movement;
use crate::error::{Error, Result};

/// Speed-to-distance ratio between the average cursor speed and the average
/// tracking distance a human can hold.
pub const TRACKING_RATIO: f64 = 8.0;

/// How the average velocity of a movement is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedMeasure {
    /// Mean of `sqrt(v_x^2 + v_y^2)`.
    #[default]
    Magnitude,
    /// Mean of `|v_x|` and `|v_y|` pooled over both coordinates.
    PerCoordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub movement_length: usize,
    pub tracking_ratio: f64,
    pub speed_measure: SpeedMeasure,
    /// Scalar on σ standing in for attacker practice; 1 leaves the model unchanged.
    pub skill_multiplier: f64,
}

impl NoiseModel {
    pub fn new(movement_length: usize) -> Self {
        Self {
            movement_length,
            tracking_ratio: TRACKING_RATIO,
            speed_measure: SpeedMeasure::Magnitude,
            skill_multiplier: 1.0,
        }
    }

    pub fn coefficient(&self) -> f64 {
        mean_distance_coefficient(self.movement_length)
    }

    /// Per-unit-speed σ, i.e. `σ / v̄`.
    pub fn sigma_per_speed(&self) -> f64 {
        self.skill_multiplier / (self.tracking_ratio * self.coefficient())
    }

    pub fn sigma_for(&self, movement: &Movement) -> Result<f64> {
        if movement.is_empty() {
            return Err(Error::Empty("movement"));
        }
        let vbar = average_speed(movement, self.speed_measure);
        if !(vbar > 0.0) {
            return Err(Error::Degenerate("movement has zero average speed".into()));
        }
        Ok(vbar * self.sigma_per_speed())
    }
}

pub fn average_speed(movement: &Movement, measure: SpeedMeasure) -> f64 {
    let n = movement.len() as f64;
    match measure {
        SpeedMeasure::Magnitude => movement.mean_speed(),
        SpeedMeasure::PerCoordinate => {
            movement.velocities.iter().map(|v| v[0].abs() + v[1].abs()).sum::<f64>() / (2.0 * n)
        }
    }
}

/// `E|d|` for `d ~ N(0, σ_p²)`.
pub fn expected_abs_gaussian(sigma_p: f64) -> Result<f64> {
    if !(sigma_p >= 0.0) {
        return Err(Error::InvalidInput(format!("sigma_p = {sigma_p} must be non-negative")));
    }
    Ok((2.0 / std::f64::consts::PI).sqrt() * sigma_p)
}

/// Standard deviation of the position error after `i` steps of constant
/// per-step perturbation σ.
pub fn accumulated_sigma(i: usize, sigma: f64) -> Result<f64> {
    if i == 0 {
        return Err(Error::InvalidInput("sample index must be >= 1".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidInput(format!("sigma = {sigma} must be non-negative")));
    }
    Ok((i as f64).sqrt() * sigma)
}

/// `c(L) = (0.8 / L) · Σ_{i=1..L} √i`.
pub fn mean_distance_coefficient(l: usize) -> f64 {
    assert!(l >= 1, "movement length must be >= 1");
    0.8 / l as f64 * (1..=l).map(|i| (i as f64).sqrt()).sum::<f64>()
}

/// σ for a movement under the default model (speed magnitude, ratio 8).
pub fn sigma_for_movement(movement: &Movement) -> Result<f64> {
    NoiseModel::new(movement.len().max(1)).sigma_for(movement)
}

pub fn apply_replication_noise<R: Rng + ?Sized>(movement: &Movement, sigma: f64, rng: &mut R) -> Movement {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    if sigma == 0.0 {
        return movement.clone();
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    Movement::new(movement.velocities.iter().map(|v| [v[0] + n.sample(rng), v[1] + n.sample(rng)]).collect())
}

/// Monte-Carlo mean absolute position error, per coordinate and sample, of
/// `n` simulated trackings of length `l` with per-step velocity noise σ
/// (unit sample period).
pub fn simulate_tracking_error<R: Rng + ?Sized>(l: usize, sigma: f64, n: usize, rng: &mut R) -> f64 {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    if n == 0 || l == 0 || sigma == 0.0 {
        return 0.0;
    }
    let dist = Normal::new(0.0, sigma).expect("finite sigma");
    let mut total = 0.0;
    for _ in 0..n {
        let (mut px, mut py) = (0.0f64, 0.0f64);
        for _ in 0..l {
            px += dist.sample(rng);
            py += dist.sample(rng);
            total += px.abs() + py.abs();
        }
    }
    total / (2 * n * l) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;

    fn movement(l: usize, speed: f64) -> Movement {
        Movement::new(vec![[speed * 0.6, speed * 0.8]; l])
    }

    #[test]
    fn expected_abs_examples() {
        assert!((expected_abs_gaussian(1.0).unwrap() - 0.7979).abs() < 1e-4);
        assert_eq!(expected_abs_gaussian(0.0).unwrap(), 0.0);
        assert!(expected_abs_gaussian(-1.0).is_err());
    }

    #[test]
    fn accumulated_examples() {
        assert_eq!(accumulated_sigma(4, 0.5).unwrap(), 1.0);
        assert_eq!(accumulated_sigma(1, 0.3).unwrap(), 0.3);
        assert!(accumulated_sigma(0, 1.0).is_err());
    }

    #[test]
    fn coefficient_examples() {
        assert!((mean_distance_coefficient(160) - 6.777).abs() < 0.005);
        assert_relative_eq!(mean_distance_coefficient(1), 0.8, epsilon = 1e-15);
        let direct = 0.2 * (1.0 + 2f64.sqrt() + 3f64.sqrt() + 2.0);
        assert_relative_eq!(mean_distance_coefficient(4), direct, epsilon = 1e-12);
        assert!((mean_distance_coefficient(4) - 1.2293).abs() < 1e-4);
    }

    #[test]
    fn coefficient_monotone_and_bounded() {
        let mut prev = 0.0;
        for l in 1..=400 {
            let c = mean_distance_coefficient(l);
            assert!(c > prev);
            assert!(c <= 0.8 * (l as f64).sqrt());
            prev = c;
        }
    }

    #[test]
    fn sigma_examples() {
        let s = sigma_for_movement(&movement(160, 100.0)).unwrap();
        assert!((s - 1.844).abs() < 1e-3, "{s}");
        assert_eq!((s / 100.0 * 1e4).round() / 1e4, 0.0184);
        assert_relative_eq!(sigma_for_movement(&movement(1, 8.0)).unwrap(), 1.25, epsilon = 1e-12);
        assert!(sigma_for_movement(&movement(10, 0.0)).is_err());
    }

    #[test]
    fn per_coordinate_measure() {
        let mut m = NoiseModel::new(4);
        m.speed_measure = SpeedMeasure::PerCoordinate;
        let mv = Movement::new(vec![[3.0, -4.0]; 4]);
        assert_relative_eq!(average_speed(&mv, SpeedMeasure::PerCoordinate), 3.5);
        assert_relative_eq!(m.sigma_for(&mv).unwrap(), 3.5 / (8.0 * mean_distance_coefficient(4)));
    }

    #[test]
    fn sigma_is_linear_in_speed() {
        let m = Movement::new((0..50).map(|i| [(i as f64).sin() * 30.0, 40.0 + i as f64]).collect());
        let s = sigma_for_movement(&m).unwrap();
        for k in [0.1, 2.0, 7.5] {
            assert_relative_eq!(sigma_for_movement(&m.scaled(k)).unwrap(), k * s, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_sigma_is_identity_and_fresh_draws_differ() {
        let m = movement(20, 50.0);
        let mut rng = rng_from_seed(1);
        assert_eq!(apply_replication_noise(&m, 0.0, &mut rng), m);
        let a = apply_replication_noise(&m, 1.0, &mut rng);
        let b = apply_replication_noise(&m, 1.0, &mut rng);
        assert_ne!(a, b);
    }
}
