//! Comparison defences: adversarial training and defensive distillation.
//! Both produce a plain [`AuthenticatorModel`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{block_sigmas, AttackSuite};
use crate::authenticator::{
    features_matrix, fit, label_targets, AuthTrainConfig, AuthenticatorModel, FitData, NoisyAugment, TrainReport,
};
use crate::data_synth::{Label, Trial};
use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Tensor};
use crate::physical_noise::NoiseModel;
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdvTrainingConfig {
    /// Adversarial rows per valid-user training trial.
    pub ratio: f64,
    pub seed: u64,
}

impl Default for AdvTrainingConfig {
    fn default() -> Self {
        Self { ratio: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillationConfig {
    pub temperature: f64,
    /// Overrides the authenticator epoch count when set.
    pub epochs: Option<usize>,
    pub seed: u64,
    /// Weight of the hard-label term in the student loss.
    pub hard_label_weight: f64,
}

impl Default for DistillationConfig {
    fn default() -> Self {
        Self { temperature: 10.0, epochs: None, seed: 0, hard_label_weight: 0.0 }
    }
}

fn split_xy(trials: &[Trial]) -> Result<(Tensor, Vec<Label>)> {
    if trials.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let labels = trials
        .iter()
        .map(|t| t.label.ok_or_else(|| Error::InvalidInput("unlabelled trial".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok((features_matrix(trials), labels))
}

/// Ideal adversarial rows built from `bases`, each with a random movement;
/// noise is redrawn every epoch during training.
pub fn adversarial_pool<R: Rng + ?Sized>(
    suite: &AttackSuite,
    bases: &[Trial],
    count: usize,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<NoisyAugment> {
    if suite.is_empty() {
        return Err(Error::Empty("attack suite"));
    }
    if bases.is_empty() {
        return Err(Error::Empty("adversarial base set"));
    }
    let x = features_matrix(bases);
    let cols = x.cols();
    let mut base = Vec::with_capacity(count * cols);
    let mut slots = Vec::with_capacity(count);
    let mut sigmas = Vec::with_capacity(count);
    for _ in 0..count {
        let r = rng.random_range(0..x.rows());
        let gen = &suite.generators[rng.random_range(0..suite.len())];
        let row = Tensor::new(vec![1, cols], x.row(r).to_vec());
        let block = gen.ideal_blocks(&row);
        let mut composite = row.into_data();
        for (k, &i) in gen.indices().iter().enumerate() {
            composite[i] = block.data()[k];
        }
        base.extend(composite);
        slots.push(gen.j);
        sigmas.push(block_sigmas(&block, noise)[0]);
    }
    Ok(NoisyAugment { base: Tensor::new(vec![count, cols], base), slots, sigmas })
}

/// Retrains from scratch on the training set plus invalid-labelled noised
/// adversarial samples.
pub fn adversarial_training(
    train: &[Trial],
    suite: &AttackSuite,
    adversarial_bases: &[Trial],
    noise: &NoiseModel,
    auth_cfg: &AuthTrainConfig,
    cfg: &AdvTrainingConfig,
) -> Result<(AuthenticatorModel, TrainReport)> {
    let (x, labels) = split_xy(train)?;
    let n_valid = labels.iter().filter(|l| **l == Label::Valid).count();
    let count = (cfg.ratio * n_valid as f64).round() as usize;
    let augment = if count > 0 {
        let mut rng = rng_for(cfg.seed, "adv-training/pool");
        Some(adversarial_pool(suite, adversarial_bases, count, noise, &mut rng)?)
    } else {
        None
    };
    let targets = label_targets(&labels);
    let classes: Vec<usize> = labels.iter().map(|l| l.class()).collect();
    let data = FitData {
        x: &x,
        targets: &targets,
        classes: &classes,
        augment: augment.as_ref(),
        n_movements: train[0].n_movements(),
        movement_length: train[0].movement_length(),
    };
    fit(auth_cfg, &data, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distilled {
    pub teacher: AuthenticatorModel,
    pub student: AuthenticatorModel,
    pub teacher_report: TrainReport,
    pub student_report: TrainReport,
}

/// Teacher trained at temperature T on hard labels; student trained at T on
/// the teacher's softened outputs. Both are deployed at T = 1.
pub fn defensive_distillation(train: &[Trial], auth_cfg: &AuthTrainConfig, cfg: &DistillationConfig) -> Result<Distilled> {
    if !(cfg.temperature >= 1.0) {
        return Err(Error::InvalidInput(format!("distillation temperature {} must be >= 1", cfg.temperature)));
    }
    let (x, labels) = split_xy(train)?;
    let auth_cfg = AuthTrainConfig { epochs: cfg.epochs.unwrap_or(auth_cfg.epochs), seed: cfg.seed, ..auth_cfg.clone() };
    let hard = label_targets(&labels);
    let classes: Vec<usize> = labels.iter().map(|l| l.class()).collect();
    let geometry = (train[0].n_movements(), train[0].movement_length());
    let data = |targets| FitData {
        x: &x,
        targets,
        classes: &classes,
        augment: None,
        n_movements: geometry.0,
        movement_length: geometry.1,
    };
    let (teacher, teacher_report) = fit(&auth_cfg, &data(&hard), cfg.temperature)?;
    let soft = softmax_rows(&teacher.raw_logits(&x)?, cfg.temperature);
    let w = cfg.hard_label_weight;
    let targets = if w > 0.0 { soft.zip_map(&hard, |s, h| (1.0 - w) * s + w * h) } else { soft };
    let (student, student_report) = fit(&auth_cfg, &data(&targets), cfg.temperature)?;
    Ok(Distilled { teacher, student, teacher_report, student_report })
}
