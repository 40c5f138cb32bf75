//! Synthetic mouse-behaviour corpus: task pattern, subject profiles, trial
//! synthesis, raw/velocity conversion, splits and the line-oriented corpus
//! file format.
//!
//! Every movement is stored as `L` velocity samples spread uniformly over the
//! movement's own duration, so a fast subject produces proportionally larger
//! velocities while every movement keeps the same length.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPattern {
    waypoints: Vec<Point>,
    movement_length: usize,
    sample_period: f64,
}

impl TaskPattern {
    pub fn new(waypoints: Vec<Point>, movement_length: usize, sample_period: f64) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidInput("a task pattern needs at least two waypoints".into()));
        }
        if movement_length < 2 {
            return Err(Error::InvalidInput(format!("movement length {movement_length} < 2")));
        }
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::InvalidInput(format!("sample period {sample_period} must be positive")));
        }
        for (i, w) in waypoints.windows(2).enumerate() {
            if w[0] == w[1] {
                return Err(Error::DegeneratePattern(i, i + 1));
            }
        }
        Ok(Self { waypoints, movement_length, sample_period })
    }

    /// Ten-movement zig-zag across a 1920x1080 screen, 160 samples per
    /// movement, 10 ms nominal period.
    pub fn default_login() -> Self {
        Self::with_length(160)
    }

    pub fn with_length(movement_length: usize) -> Self {
        let waypoints = vec![
            [240.0, 200.0],
            [820.0, 260.0],
            [520.0, 700.0],
            [1180.0, 620.0],
            [900.0, 180.0],
            [1620.0, 300.0],
            [1420.0, 860.0],
            [720.0, 900.0],
            [320.0, 580.0],
            [1000.0, 440.0],
            [1700.0, 720.0],
        ];
        Self::new(waypoints, movement_length, 0.01).expect("built-in pattern is valid")
    }

    pub fn waypoints(&self) -> &[Point] {
        &self.waypoints
    }

    pub fn n_movements(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn movement_length(&self) -> usize {
        self.movement_length
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    /// Flattened feature count `2 · N_mov · L`.
    pub fn feature_len(&self) -> usize {
        2 * self.n_movements() * self.movement_length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: u32,
    /// Per-movement speed multiplier, dimensionless.
    pub speed_scale: Vec<f64>,
    /// Lateral bulge as a fraction of movement distance.
    pub curvature_bias: f64,
    /// Standard deviation of the correlated velocity tremor, px/s.
    pub tremor_amplitude: f64,
    /// Relative per-trial variation of speed and curvature.
    pub timing_jitter: f64,
    pub seed: u64,
}

impl SubjectProfile {
    /// Draws a profile from the subject's seed; equal seeds give equal profiles.
    pub fn sample(subject_id: u32, n_movements: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let base = rng.random_range(0.7..1.5);
        let speed_scale = (0..n_movements).map(|_| base * rng.random_range(0.8..1.25)).collect();
        Self {
            subject_id,
            speed_scale,
            curvature_bias: rng.random_range(-0.25..0.25),
            tremor_amplitude: rng.random_range(4.0..12.0),
            timing_jitter: rng.random_range(0.06..0.14),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speed_scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidInput(format!("subject {}: speed scale must be > 0", self.subject_id)));
        }
        if !(self.tremor_amplitude >= 0.0) || !(self.timing_jitter >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "subject {}: tremor and jitter must be non-negative",
                self.subject_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Movement {
    pub velocities: Vec<Point>,
}

impl Movement {
    pub fn new(velocities: Vec<Point>) -> Self {
        Self { velocities }
    }

    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn mean_speed(&self) -> f64 {
        if self.velocities.is_empty() {
            return 0.0;
        }
        self.velocities.iter().map(|v| v[0].hypot(v[1])).sum::<f64>() / self.velocities.len() as f64
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { velocities: self.velocities.iter().map(|v| [v[0] * k, v[1] * k]).collect() }
    }

    /// Channel-major `[v_x × L, v_y × L]`.
    pub fn to_channels(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.velocities.iter().map(|v| v[0]).collect();
        out.extend(self.velocities.iter().map(|v| v[1]));
        out
    }

    pub fn from_channels(data: &[f64]) -> Self {
        let l = data.len() / 2;
        Self { velocities: (0..l).map(|i| [data[i], data[l + i]]).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Valid,
    Invalid,
}

impl Label {
    /// Output-class index used by every classifier (valid = 0).
    pub fn class(self) -> usize {
        match self {
            Label::Valid => 0,
            Label::Invalid => 1,
        }
    }

    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Label::Valid => [1.0, 0.0],
            Label::Invalid => [0.0, 1.0],
        }
    }
}

/// Provenance attached to dumped adversarial samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub replaced_movement: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub subject_id: u32,
    pub trial_id: u32,
    pub movements: Vec<Movement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl Trial {
    pub fn n_movements(&self) -> usize {
        self.movements.len()
    }

    pub fn movement_length(&self) -> usize {
        self.movements.first().map_or(0, Movement::len)
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    /// Channel-major flattening: all `v_x` over the `N_mov · L` timeline, then all `v_y`.
    pub fn features(&self) -> Vec<f64> {
        let n: usize = self.movements.iter().map(Movement::len).sum();
        let mut out = Vec::with_capacity(2 * n);
        for c in 0..2 {
            for m in &self.movements {
                out.extend(m.velocities.iter().map(|v| v[c]));
            }
        }
        out
    }

    pub fn from_features(subject_id: u32, trial_id: u32, n_movements: usize, features: &[f64]) -> Self {
        let total = features.len() / 2;
        let l = total / n_movements;
        let movements = (0..n_movements)
            .map(|j| Movement::new((0..l).map(|t| [features[j * l + t], features[total + j * l + t]]).collect()))
            .collect();
        Self { subject_id, trial_id, movements, label: None, provenance: None }
    }

    pub fn check_shape(&self, n_movements: usize, length: usize) -> Result<()> {
        if self.movements.len() != n_movements || self.movements.iter().any(|m| m.len() != length) {
            return Err(Error::ShapeMismatch {
                expected: format!("{n_movements} movements x {length} samples"),
                got: format!(
                    "{} movements x {:?} samples",
                    self.movements.len(),
                    self.movements.iter().map(Movement::len).collect::<BTreeSet<_>>()
                ),
            });
        }
        Ok(())
    }
}

/// Feature indices (channel-major) covered by movement `j`.
pub fn movement_feature_indices(n_movements: usize, length: usize, j: usize) -> Vec<usize> {
    let total = n_movements * length;
    (0..2).flat_map(|c| (0..length).map(move |t| c * total + j * length + t)).collect()
}

/// Finite-difference velocities of a raw `(x, y, t)` capture.
pub fn velocities_from_raw(raw: &[(f64, f64, f64)]) -> Result<Vec<Point>> {
    if raw.len() < 2 {
        return Err(Error::InvalidCapture(format!("{} point(s); velocity needs at least two", raw.len())));
    }
    raw.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let dt = w[1].2 - w[0].2;
            if !(dt > 0.0) {
                return Err(Error::InvalidCapture(format!(
                    "timestamps not strictly increasing at sample {} ({} -> {})",
                    i + 1,
                    w[0].2,
                    w[1].2
                )));
            }
            Ok([(w[1].0 - w[0].0) / dt, (w[1].1 - w[0].1) / dt])
        })
        .collect()
}

/// Cumulative integration from `origin`; the origin itself is not emitted.
pub fn positions_from_velocities(vel: &[Point], origin: Point, sample_period: f64) -> Vec<Point> {
    let mut p = origin;
    vel.iter()
        .map(|v| {
            p = [p[0] + v[0] * sample_period, p[1] + v[1] * sample_period];
            p
        })
        .collect()
}

fn minimum_jerk(tau: f64) -> f64 {
    tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau)
}

fn bulge(tau: f64) -> f64 {
    16.0 * tau * tau * (1.0 - tau) * (1.0 - tau)
}

/// Synthesises one trial; per-trial randomness is scaled by the profile's
/// jitter and tremor, so a profile with both at zero is deterministic.
pub fn synthesize_trial<R: Rng + ?Sized>(
    pattern: &TaskPattern,
    profile: &SubjectProfile,
    trial_id: u32,
    rng: &mut R,
) -> Result<Trial> {
    let l = pattern.movement_length;
    let nominal = l as f64 * pattern.sample_period;
    let mut movements = Vec::with_capacity(pattern.n_movements());
    for (j, w) in pattern.waypoints.windows(2).enumerate() {
        let d = [w[1][0] - w[0][0], w[1][1] - w[0][1]];
        let dist = d[0].hypot(d[1]);
        let normal = [-d[1] / dist, d[0] / dist];
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let speed = (profile.speed_scale[j] * (1.0 + profile.timing_jitter * z1)).max(0.2);
        let curve = profile.curvature_bias + 0.5 * profile.timing_jitter * z2;
        let duration = nominal / speed;
        let raw: Vec<(f64, f64, f64)> = (0..=l)
            .map(|k| {
                let tau = k as f64 / l as f64;
                let (s, b) = (minimum_jerk(tau), curve * dist * bulge(tau));
                (w[0][0] + d[0] * s + normal[0] * b, w[0][1] + d[1] * s + normal[1] * b, tau * duration)
            })
            .collect();
        let mut vel = velocities_from_raw(&raw)?;
        if profile.tremor_amplitude > 0.0 {
            // AR(1) tremor with unit stationary variance.
            let rho: f64 = 0.8;
            let innov = (1.0 - rho * rho).sqrt();
            let mut e: [f64; 2] = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
            for v in vel.iter_mut() {
                for c in 0..2 {
                    let z: f64 = StandardNormal.sample(rng);
                    e[c] = rho * e[c] + innov * z;
                    v[c] += profile.tremor_amplitude * e[c];
                }
            }
        }
        movements.push(Movement::new(vel));
    }
    Ok(Trial { subject_id: profile.subject_id, trial_id, movements, label: None, provenance: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub pattern: TaskPattern,
    pub seed: u64,
    pub profiles: Vec<SubjectProfile>,
    pub trials_per_subject: usize,
    pub n_trials: usize,
    pub units: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub trials: Vec<Trial>,
}

impl Corpus {
    pub fn pattern(&self) -> &TaskPattern {
        &self.manifest.pattern
    }

    pub fn subject_ids(&self) -> Vec<u32> {
        self.trials.iter().map(|t| t.subject_id).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn trials_of(&self, subject: u32) -> impl Iterator<Item = (usize, &Trial)> {
        self.trials.iter().enumerate().filter(move |(_, t)| t.subject_id == subject)
    }
}

/// Builds the default subject profiles for a corpus seed.
pub fn default_profiles(n_subjects: usize, n_movements: usize, seed: u64) -> Vec<SubjectProfile> {
    (0..n_subjects as u32)
        .map(|s| SubjectProfile::sample(s, n_movements, derive_seed(seed, &format!("profile/{s}"))))
        .collect()
}

pub fn synthesize_corpus(
    pattern: &TaskPattern,
    n_subjects: usize,
    trials_per_subject: usize,
    seed: u64,
) -> Result<Corpus> {
    if n_subjects < 5 {
        return Err(Error::InvalidInput(format!("need at least 5 subjects, got {n_subjects}")));
    }
    if trials_per_subject < 10 {
        return Err(Error::InvalidInput(format!("need at least 10 trials per subject, got {trials_per_subject}")));
    }
    let profiles = default_profiles(n_subjects, pattern.n_movements(), seed);
    synthesize_with_profiles(pattern, profiles, trials_per_subject, seed)
}

/// Pure function of `(pattern, profiles, seed)`.
pub fn synthesize_with_profiles(
    pattern: &TaskPattern,
    profiles: Vec<SubjectProfile>,
    trials_per_subject: usize,
    seed: u64,
) -> Result<Corpus> {
    TaskPattern::new(pattern.waypoints.clone(), pattern.movement_length, pattern.sample_period)?;
    let mut trials = Vec::with_capacity(profiles.len() * trials_per_subject);
    for p in &profiles {
        p.validate()?;
        if p.speed_scale.len() != pattern.n_movements() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} speed scales", pattern.n_movements()),
                got: format!("{}", p.speed_scale.len()),
            });
        }
        let mut rng = rng_from_seed(derive_seed(seed, &format!("trials/{}", p.subject_id)));
        for t in 0..trials_per_subject {
            trials.push(synthesize_trial(pattern, p, t as u32, &mut rng)?);
        }
    }
    let manifest = CorpusManifest {
        pattern: pattern.clone(),
        seed,
        n_trials: trials.len(),
        trials_per_subject,
        profiles,
        units: "px/s".into(),
    };
    Ok(Corpus { manifest, trials })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    /// Subsample invalid test trials down to the valid test count.
    #[serde(default)]
    pub balanced_test: bool,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.6, validation: 0.2, balanced_test: true }
    }
}

/// Indices into `Corpus::trials`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub valid_user: u32,
    pub invalid_users: Vec<u32>,
    pub attackers: Vec<u32>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Attacker trials used to fit attack generators.
    pub attacker_train: Vec<usize>,
    /// Attacker trials used to measure attacks.
    pub attacker_eval: Vec<usize>,
}

impl DatasetSplit {
    pub fn label_of(&self, corpus: &Corpus, idx: usize) -> Label {
        if corpus.trials[idx].subject_id == self.valid_user {
            Label::Valid
        } else {
            Label::Invalid
        }
    }

    /// Clones the referenced trials with labels attached.
    pub fn labeled(&self, corpus: &Corpus, idx: &[usize]) -> Vec<Trial> {
        idx.iter().map(|&i| corpus.trials[i].clone().with_label(self.label_of(corpus, i))).collect()
    }

    pub fn attacker_trials(&self, corpus: &Corpus, idx: &[usize]) -> Vec<Trial> {
        idx.iter().map(|&i| corpus.trials[i].clone().with_label(Label::Invalid)).collect()
    }
}

/// The last `n_attackers` subject ids are held out as attackers; the rest
/// are split per class into train/validation/test.
pub fn make_split(
    corpus: &Corpus,
    valid_user: u32,
    n_attackers: usize,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit> {
    let ids = corpus.subject_ids();
    if ids.len() < n_attackers + 2 {
        return Err(Error::InvalidInput(format!(
            "{} subjects cannot provide {n_attackers} attackers plus a valid and an invalid user",
            ids.len()
        )));
    }
    if !ids.contains(&valid_user) {
        return Err(Error::InvalidInput(format!("valid user {valid_user} not in corpus")));
    }
    let attackers: Vec<u32> = ids[ids.len() - n_attackers..].to_vec();
    if attackers.contains(&valid_user) {
        return Err(Error::InvalidInput(format!("valid user {valid_user} is reserved as an attacker")));
    }
    let invalid_users: Vec<u32> =
        ids.iter().copied().filter(|s| *s != valid_user && !attackers.contains(s)).collect();
    let mut rng = rng_from_seed(derive_seed(seed, &format!("split/{valid_user}")));
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut n_valid_test = usize::MAX;
    for class in [vec![valid_user], invalid_users.clone()] {
        let mut pool: Vec<usize> =
            corpus.trials.iter().enumerate().filter(|(_, t)| class.contains(&t.subject_id)).map(|(i, _)| i).collect();
        pool.shuffle(&mut rng);
        let n = pool.len();
        let n_train = (ratios.train * n as f64).round() as usize;
        let n_val = ((ratios.validation * n as f64).round() as usize).min(n - n_train);
        train.extend_from_slice(&pool[..n_train]);
        validation.extend_from_slice(&pool[n_train..n_train + n_val]);
        let rest = &pool[n_train + n_val..];
        let keep = if ratios.balanced_test { rest.len().min(n_valid_test) } else { rest.len() };
        test.extend_from_slice(&rest[..keep]);
        n_valid_test = n_valid_test.min(rest.len());
    }
    let mut atk: Vec<usize> = corpus
        .trials
        .iter()
        .enumerate()
        .filter(|(_, t)| attackers.contains(&t.subject_id))
        .map(|(i, _)| i)
        .collect();
    atk.shuffle(&mut rng);
    let half = atk.len() / 2;
    let attacker_eval = atk.split_off(half);
    for v in [&mut train, &mut validation, &mut test] {
        v.sort_unstable();
    }
    let mut attacker_train = atk;
    attacker_train.sort_unstable();
    let mut attacker_eval = attacker_eval;
    attacker_eval.sort_unstable();
    Ok(DatasetSplit { valid_user, invalid_users, attackers, train, validation, test, attacker_train, attacker_eval })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Manifest(CorpusManifest),
    Trial(Trial),
}

/// Writes the manifest line followed by one JSON record per trial.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_records(&mut w, &corpus.manifest, &corpus.trials).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_records(w: &mut impl Write, manifest: &CorpusManifest, trials: &[Trial]) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, &Record::Manifest(manifest.clone()))?;
    w.write_all(b"\n")?;
    for t in trials {
        serde_json::to_writer(&mut *w, &Record::Trial(t.clone()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut manifest: Option<CorpusManifest> = None;
    let mut trials = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| perr(lineno, e.to_string()))?;
        match (rec, &manifest) {
            (Record::Manifest(m), None) if lineno == 1 => manifest = Some(m),
            (Record::Manifest(_), _) => return Err(perr(lineno, "unexpected manifest record".into())),
            (Record::Trial(_), None) => return Err(perr(lineno, "trial record before manifest".into())),
            (Record::Trial(t), Some(m)) => {
                t.check_shape(m.pattern.n_movements(), m.pattern.movement_length)
                    .map_err(|e| perr(lineno, e.to_string()))?;
                trials.push(t);
            }
        }
    }
    let manifest = manifest.ok_or_else(|| perr(1, "missing manifest record".into()))?;
    if trials.len() != manifest.n_trials {
        return Err(perr(
            trials.len() + 1,
            format!("truncated corpus: manifest declares {} trials, found {}", manifest.n_trials, trials.len()),
        ));
    }
    Ok(Corpus { manifest, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_velocity_capture() {
        let v = velocities_from_raw(&[(0.0, 0.0, 0.0), (1.0, 2.0, 0.1), (2.0, 4.0, 0.2)]).unwrap();
        for p in v {
            assert!((p[0] - 10.0).abs() < 1e-12 && (p[1] - 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn capture_errors() {
        assert!(matches!(velocities_from_raw(&[(0.0, 0.0, 0.0)]), Err(Error::InvalidCapture(_))));
        assert!(matches!(
            velocities_from_raw(&[(0.0, 0.0, 0.0), (1.0, 1.0, 0.0)]),
            Err(Error::InvalidCapture(_))
        ));
    }

    #[test]
    fn integration_examples() {
        let p = positions_from_velocities(&[[0.0, 0.0]; 3], [5.0, 6.0], 0.1);
        assert!(p.iter().all(|q| *q == [5.0, 6.0]));
        let p = positions_from_velocities(&[[10.0, 20.0]; 2], [0.0, 0.0], 0.1);
        assert!((p[0][0] - 1.0).abs() < 1e-12 && (p[0][1] - 2.0).abs() < 1e-12);
        assert!((p[1][0] - 2.0).abs() < 1e-12 && (p[1][1] - 4.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn raw_velocity_round_trip(
            steps in prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 1..60),
            x0 in -1000.0f64..1000.0,
            y0 in -1000.0f64..1000.0,
        ) {
            let dt = 0.01;
            let mut raw = vec![(x0, y0, 0.0)];
            for (i, (dx, dy)) in steps.iter().enumerate() {
                let last = raw[i];
                raw.push((last.0 + dx, last.1 + dy, (i + 1) as f64 * dt));
            }
            let vel = velocities_from_raw(&raw).unwrap();
            prop_assert_eq!(vel.len(), raw.len() - 1);
            let pos = positions_from_velocities(&vel, [x0, y0], dt);
            for (p, r) in pos.iter().zip(&raw[1..]) {
                prop_assert!((p[0] - r.0).abs() < 1e-9 && (p[1] - r.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_pattern_rejected() {
        let e = TaskPattern::new(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 1.0]], 10, 0.01).unwrap_err();
        assert!(matches!(e, Error::DegeneratePattern(1, 2)));
    }

    #[test]
    fn corpus_is_deterministic() {
        let p = TaskPattern::with_length(20);
        let a = synthesize_corpus(&p, 8, 12, 1).unwrap();
        let b = synthesize_corpus(&p, 8, 12, 1).unwrap();
        assert_eq!(a, b);
        let c = synthesize_corpus(&p, 8, 12, 2).unwrap();
        assert_ne!(a.trials, c.trials);
    }

    #[test]
    fn corpus_preconditions() {
        let p = TaskPattern::with_length(20);
        assert!(synthesize_corpus(&p, 4, 12, 1).is_err());
        assert!(synthesize_corpus(&p, 5, 9, 1).is_err());
    }

    #[test]
    fn noiseless_subject_repeats_itself() {
        let p = TaskPattern::with_length(30);
        let mut prof = SubjectProfile::sample(0, 10, 42);
        prof.tremor_amplitude = 0.0;
        prof.timing_jitter = 0.0;
        let c = synthesize_with_profiles(&p, vec![prof], 10, 3).unwrap();
        assert!(c.trials.windows(2).all(|w| w[0].movements == w[1].movements));
    }

    #[test]
    fn profile_from_seed_is_stable() {
        assert_eq!(SubjectProfile::sample(3, 10, 77), SubjectProfile::sample(3, 10, 77));
    }

    #[test]
    fn features_round_trip_through_layout() {
        let c = synthesize_corpus(&TaskPattern::with_length(8), 5, 10, 4).unwrap();
        let t = &c.trials[7];
        let back = Trial::from_features(t.subject_id, t.trial_id, 10, &t.features());
        assert_eq!(back.movements, t.movements);
        let idx = movement_feature_indices(10, 8, 3);
        let f = t.features();
        let m3: Vec<f64> = idx.iter().map(|&i| f[i]).collect();
        assert_eq!(m3, t.movements[3].to_channels());
    }

    #[test]
    fn split_counts_and_disjointness() {
        let c = synthesize_corpus(&TaskPattern::with_length(8), 8, 20, 5).unwrap();
        let s = make_split(&c, 0, 3, SplitRatios::default(), 1).unwrap();
        assert_eq!(s.invalid_users, vec![1, 2, 3, 4]);
        assert_eq!(s.attackers, vec![5, 6, 7]);
        let in_train: BTreeSet<usize> = s.train.iter().copied().collect();
        for &i in s.attacker_train.iter().chain(&s.attacker_eval) {
            assert!(!in_train.contains(&i));
            assert!(s.attackers.contains(&c.trials[i].subject_id));
        }
        let all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), all.len(), "partitions overlap");
        let valid_test = s.test.iter().filter(|&&i| c.trials[i].subject_id == 0).count();
        assert_eq!(valid_test, 4);
        assert_eq!(s.test.len(), 2 * valid_test);
        let full = make_split(&c, 0, 3, SplitRatios { balanced_test: false, ..Default::default() }, 1).unwrap();
        let all: Vec<usize> = full.train.iter().chain(&full.validation).chain(&full.test).copied().collect();
        assert_eq!(all.len(), 5 * 20);
        assert!(make_split(&c, 6, 3, SplitRatios::default(), 1).is_err());
    }
}
