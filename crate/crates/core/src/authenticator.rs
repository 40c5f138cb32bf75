//! Behavioural authenticator: a two-class sequence classifier with
//! threshold calibration. Class 0 is the valid user, class 1 everyone else.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_synth::{Corpus, DatasetSplit, Label, Trial};
use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Adam, Bound, ConvLayerSpec, ConvNet, ConvNetSpec, Graph, ParamSet, RecurrentSpec, Tensor, Var};
use crate::rng::rng_for;
use crate::store;

/// Rows per inference batch.
const INFER_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchScale {
    #[default]
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    #[default]
    Default,
    Eer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuthTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub scale: ArchScale,
    pub dropout: f64,
    pub threshold: ThresholdMode,
}

impl Default for AuthTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 40,
            batch_size: 16,
            seed: 0,
            scale: ArchScale::Desk,
            dropout: 0.1,
            threshold: ThresholdMode::Default,
        }
    }
}

impl AuthTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidInput(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Network shape for a given input geometry.
pub fn architecture(scale: ArchScale, n_movements: usize, movement_length: usize, dropout: f64, outputs: usize) -> ConvNetSpec {
    let in_len = n_movements * movement_length;
    let plan: &[(usize, usize, usize)] = match scale {
        ArchScale::Desk => &[(8, 16, 8), (16, 8, 4)],
        ArchScale::Paper => &[(64, 9, 2), (96, 7, 2), (128, 5, 2)],
    };
    let mut convs = Vec::new();
    let mut len = in_len;
    for &(filters, kernel, stride) in plan {
        let kernel = kernel.min(len);
        if kernel < 2 {
            break;
        }
        let stride = stride.min(kernel);
        len = (len - kernel) / stride + 1;
        convs.push(ConvLayerSpec { filters, kernel, stride });
    }
    let (recurrent, dense) = match scale {
        ArchScale::Desk => (None, vec![32]),
        ArchScale::Paper => (Some(RecurrentSpec { hidden: 128, layers: 2 }), vec![128]),
    };
    ConvNetSpec { in_channels: 2, in_len, convs, recurrent, dense, outputs, dropout }
}

/// Stacks trial features into a `[n, 2 · N_mov · L]` matrix.
pub fn features_matrix(trials: &[Trial]) -> Tensor {
    let rows: Vec<Vec<f64>> = trials.iter().map(Trial::features).collect();
    if rows.is_empty() {
        return Tensor::zeros(vec![0, 0]);
    }
    Tensor::from_rows(&rows)
}

pub fn label_targets(labels: &[Label]) -> Tensor {
    let rows: Vec<Vec<f64>> = labels.iter().map(|l| l.one_hot().to_vec()).collect();
    Tensor::from_rows(&rows)
}

fn labels_of(trials: &[Trial]) -> Result<Vec<Label>> {
    trials
        .iter()
        .map(|t| t.label.ok_or_else(|| Error::InvalidInput(format!("trial {}/{} has no label", t.subject_id, t.trial_id))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthenticatorModel {
    pub net: ConvNet,
    /// Inputs are divided by this before entering the network.
    pub input_scale: f64,
    pub n_movements: usize,
    pub movement_length: usize,
}

impl AuthenticatorModel {
    pub fn new<R: Rng + ?Sized>(spec: ConvNetSpec, n_movements: usize, movement_length: usize, input_scale: f64, rng: &mut R) -> Self {
        Self { net: ConvNet::new(spec, rng), input_scale, n_movements, movement_length }
    }

    pub fn feature_len(&self) -> usize {
        2 * self.n_movements * self.movement_length
    }

    /// Frozen parameter handles on `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        self.net.params.bind(g, false)
    }

    /// Logits for raw-unit features `x`.
    pub fn logits(&self, g: &mut Graph, p: &Bound, x: Var, train: Option<&mut dyn RngCore>) -> Var {
        let h = g.scale(x, 1.0 / self.input_scale);
        self.net.forward(g, p, h, train)
    }

    fn check_width(&self, x: &Tensor) -> Result<()> {
        if x.rows() > 0 && x.cols() != self.feature_len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} features", self.feature_len()),
                got: format!("{}", x.cols()),
            });
        }
        Ok(())
    }

    /// Class logits `[n, 2]`.
    pub fn raw_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_width(x)?;
        let cols = x.cols();
        let mut out = Vec::with_capacity(x.rows() * 2);
        for start in (0..x.rows()).step_by(INFER_BATCH) {
            let end = (start + INFER_BATCH).min(x.rows());
            let chunk = Tensor::new(vec![end - start, cols], x.data()[start * cols..end * cols].to_vec());
            let mut g = Graph::new();
            let p = self.bind(&mut g);
            let xv = g.constant(chunk);
            let l = self.logits(&mut g, &p, xv, None);
            out.extend_from_slice(g.value(l).data());
        }
        Ok(Tensor::new(vec![x.rows(), 2], out))
    }

    /// Class probabilities `[n, 2]` at temperature 1.
    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.raw_logits(x)?, 1.0))
    }

    /// Valid-user probability per row.
    pub fn valid_scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.probabilities(x)?.data().chunks(2).map(|r| r[0]).collect())
    }

    pub fn score(&self, trial: &Trial) -> Result<f64> {
        trial.check_shape(self.n_movements, self.movement_length)?;
        Ok(self.valid_scores(&Tensor::new(vec![1, self.feature_len()], trial.features()))?[0])
    }

    /// Gradient of the valid-class probability at `temperature` with respect
    /// to each input row.
    pub fn input_gradient(&self, x: &Tensor, temperature: f64) -> Result<Tensor> {
        self.check_width(x)?;
        let mut g = Graph::new();
        let p = self.bind(&mut g);
        let xv = g.leaf(x.clone());
        let l = self.logits(&mut g, &p, xv, None);
        let s = g.softmax(l, temperature);
        let pick = g.gather_cols(s, vec![0].into());
        let total = g.sum(pick);
        let grads = g.backward(total);
        Ok(grads.get_or_zeros(xv, x.shape()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionThreshold(pub f64);

impl DecisionThreshold {
    pub const DEFAULT: Self = Self(0.5);

    /// Valid-user decision: accept iff the valid probability reaches τ.
    pub fn accepts(self, valid_prob: f64) -> bool {
        valid_prob >= self.0
    }

    pub fn classify(self, valid_prob: f64) -> Label {
        if self.accepts(valid_prob) {
            Label::Valid
        } else {
            Label::Invalid
        }
    }
}

impl Default for DecisionThreshold {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Per-epoch record of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Class-balanced training-set loss before the first epoch and after each epoch.
    pub losses: Vec<f64>,
}

/// Extra rows whose slot `slot` receives fresh N(0, σ²) noise every epoch.
#[derive(Debug, Clone)]
pub struct NoisyAugment {
    pub base: Tensor,
    pub slots: Vec<usize>,
    pub sigmas: Vec<f64>,
}

impl NoisyAugment {
    fn draw<R: Rng + ?Sized>(&self, n_movements: usize, length: usize, rng: &mut R) -> Tensor {
        let mut out = self.base.clone();
        let cols = out.cols();
        let total = n_movements * length;
        for (r, (&j, &s)) in self.slots.iter().zip(&self.sigmas).enumerate() {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            for c in 0..2 {
                for v in &mut row[c * total + j * length..c * total + (j + 1) * length] {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += s * z;
                }
            }
        }
        out
    }
}

/// Training inputs: raw features, soft targets and the class used for balancing.
pub struct FitData<'a> {
    pub x: &'a Tensor,
    pub targets: &'a Tensor,
    pub classes: &'a [usize],
    pub augment: Option<&'a NoisyAugment>,
    pub n_movements: usize,
    pub movement_length: usize,
}

fn rms(x: &Tensor) -> f64 {
    let r = (x.data().iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Cross-entropy with each class weighted equally, matching the balanced epochs.
fn mean_loss(model: &AuthenticatorModel, x: &Tensor, targets: &Tensor, classes: &[usize], temperature: f64) -> f64 {
    let logits = model.raw_logits(x).expect("width checked at fit");
    let p = softmax_rows(&logits, temperature);
    let mut sum = [0.0; 2];
    let mut count = [0usize; 2];
    for (r, &c) in classes.iter().enumerate() {
        let row: f64 = p.row(r).iter().zip(targets.row(r)).map(|(p, t)| if *t > 0.0 { t * p.max(1e-300).ln() } else { 0.0 }).sum();
        sum[c] -= row;
        count[c] += 1;
    }
    let present: Vec<f64> = (0..2).filter(|&c| count[c] > 0).map(|c| sum[c] / count[c] as f64).collect();
    present.iter().sum::<f64>() / present.len().max(1) as f64
}

/// Mini-batch Adam on class-balanced epochs. The softmax is taken at
/// `temperature` during training only.
pub fn fit(cfg: &AuthTrainConfig, data: &FitData<'_>, temperature: f64) -> Result<(AuthenticatorModel, TrainReport)> {
    cfg.validate()?;
    let n = data.x.rows();
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    let by_class: [Vec<usize>; 2] = [0, 1].map(|c| (0..n).filter(|&i| data.classes[i] == c).collect());
    let n_aug = data.augment.map_or(0, |a| a.base.rows());
    if by_class[0].is_empty() || by_class[1].len() + n_aug == 0 {
        return Err(Error::SingleClass);
    }
    let spec = architecture(cfg.scale, data.n_movements, data.movement_length, cfg.dropout, 2);
    let mut init = rng_for(cfg.seed, "auth/init");
    let mut model =
        AuthenticatorModel::new(spec, data.n_movements, data.movement_length, rms(data.x), &mut init);
    model.check_width(data.x)?;
    let mut opt = Adam::new(&model.net.params, cfg.learning_rate);
    let mut rng = rng_for(cfg.seed, "auth/train");
    let mut report = TrainReport { losses: vec![mean_loss(&model, data.x, data.targets, data.classes, temperature)] };
    let invalid_target = Tensor::new(vec![1, 2], Label::Invalid.one_hot().to_vec());
    for _ in 0..cfg.epochs {
        // Pool of (source, row): source 0 = training rows, 1 = augmented rows.
        let mut invalid: Vec<(u8, usize)> = by_class[1].iter().map(|&i| (0, i)).collect();
        invalid.extend((0..n_aug).map(|i| (1, i)));
        let mut valid: Vec<(u8, usize)> = by_class[0].iter().map(|&i| (0, i)).collect();
        valid.shuffle(&mut rng);
        invalid.shuffle(&mut rng);
        let per = valid.len().min(invalid.len());
        let mut epoch: Vec<(u8, usize)> = valid[..per].iter().chain(&invalid[..per]).copied().collect();
        epoch.shuffle(&mut rng);
        let aug = data.augment.map(|a| a.draw(data.n_movements, data.movement_length, &mut rng));
        for batch in epoch.chunks(cfg.batch_size) {
            let cols = data.x.cols();
            let mut xb = Vec::with_capacity(batch.len() * cols);
            let mut tb = Vec::with_capacity(batch.len() * 2);
            for &(src, i) in batch {
                if src == 0 {
                    xb.extend_from_slice(data.x.row(i));
                    tb.extend_from_slice(data.targets.row(i));
                } else {
                    xb.extend_from_slice(aug.as_ref().expect("augment drawn").row(i));
                    tb.extend_from_slice(invalid_target.data());
                }
            }
            let mut g = Graph::new();
            let p = model.net.params.bind(&mut g, true);
            let xv = g.constant(Tensor::new(vec![batch.len(), cols], xb));
            let logits = model.logits(&mut g, &p, xv, Some(&mut rng));
            let loss = g.softmax_cross_entropy(logits, Tensor::new(vec![batch.len(), 2], tb), temperature);
            let grads = g.backward(loss);
            let gp = model.net.params.collect_grads(&p, &grads);
            opt.step(&mut model.net.params, &gp);
        }
        report.losses.push(mean_loss(&model, data.x, data.targets, data.classes, temperature));
    }
    Ok((model, report))
}

/// Trains on labelled trials with optional noisy augmentation.
pub fn train_on_trials(
    trials: &[Trial],
    augment: Option<&NoisyAugment>,
    cfg: &AuthTrainConfig,
) -> Result<(AuthenticatorModel, TrainReport)> {
    let first = trials.first().ok_or(Error::Empty("training set"))?;
    let (nm, l) = (first.n_movements(), first.movement_length());
    for t in trials {
        t.check_shape(nm, l)?;
    }
    let labels = labels_of(trials)?;
    let x = features_matrix(trials);
    let targets = label_targets(&labels);
    let classes: Vec<usize> = labels.iter().map(|l| l.class()).collect();
    fit(cfg, &FitData { x: &x, targets: &targets, classes: &classes, augment, n_movements: nm, movement_length: l }, 1.0)
}

pub fn train_authenticator(
    corpus: &Corpus,
    split: &DatasetSplit,
    cfg: &AuthTrainConfig,
) -> Result<(AuthenticatorModel, TrainReport)> {
    train_on_trials(&split.labeled(corpus, &split.train), None, cfg)
}

/// Equal-error threshold: the first candidate where the false-accept rate
/// drops to or below the false-reject rate.
pub fn eer_threshold(valid_scores: &[f64], invalid_scores: &[f64]) -> DecisionThreshold {
    if valid_scores.is_empty() || invalid_scores.is_empty() {
        return DecisionThreshold::DEFAULT;
    }
    let mut all: Vec<f64> = valid_scores.iter().chain(invalid_scores).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut cands = vec![all[0] / 2.0];
    cands.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    cands.push(0.5 * (all[all.len() - 1] + 1.0));
    let diff = |t: f64| far(invalid_scores, t) - frr(valid_scores, t);
    let tau = cands.iter().copied().find(|&t| diff(t) <= 0.0).unwrap_or(*cands.last().unwrap());
    DecisionThreshold(tau.clamp(1e-9, 1.0 - 1e-9))
}

/// Fraction of `invalid` scores accepted at τ.
pub fn far(invalid: &[f64], tau: f64) -> f64 {
    invalid.iter().filter(|&&s| s >= tau).count() as f64 / invalid.len().max(1) as f64
}

/// Fraction of `valid` scores rejected at τ.
pub fn frr(valid: &[f64], tau: f64) -> f64 {
    valid.iter().filter(|&&s| s < tau).count() as f64 / valid.len().max(1) as f64
}

pub fn calibrate_threshold(model: &AuthenticatorModel, train: &[Trial], mode: ThresholdMode) -> Result<DecisionThreshold> {
    match mode {
        ThresholdMode::Default => Ok(DecisionThreshold::DEFAULT),
        ThresholdMode::Eer => {
            let labels = labels_of(train)?;
            let scores = model.valid_scores(&features_matrix(train))?;
            let (v, i): (Vec<_>, Vec<_>) = scores.iter().zip(&labels).partition(|(_, l)| **l == Label::Valid);
            let v: Vec<f64> = v.into_iter().map(|(s, _)| *s).collect();
            let i: Vec<f64> = i.into_iter().map(|(s, _)| *s).collect();
            Ok(eer_threshold(&v, &i))
        }
    }
}

pub fn accuracy(model: &AuthenticatorModel, tau: DecisionThreshold, trials: &[Trial]) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let labels = labels_of(trials)?;
    let scores = model.valid_scores(&features_matrix(trials))?;
    Ok(accuracy_of(&scores, &labels, tau))
}

pub fn accuracy_of(scores: &[f64], labels: &[Label], tau: DecisionThreshold) -> f64 {
    let correct = scores.iter().zip(labels).filter(|(s, l)| tau.classify(**s) == **l).count();
    correct as f64 / labels.len().max(1) as f64
}

/// Mean of per-class accuracies.
pub fn balanced_accuracy(model: &AuthenticatorModel, tau: DecisionThreshold, trials: &[Trial]) -> Result<f64> {
    let labels = labels_of(trials)?;
    let scores = model.valid_scores(&features_matrix(trials))?;
    let mut acc = 0.0;
    for class in [Label::Valid, Label::Invalid] {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            return Err(Error::SingleClass);
        }
        acc += idx.iter().filter(|&&i| tau.classify(scores[i]) == class).count() as f64 / idx.len() as f64;
    }
    Ok(acc / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthManifest {
    pub spec: ConvNetSpec,
    pub input_scale: f64,
    pub n_movements: usize,
    pub movement_length: usize,
    pub config: AuthTrainConfig,
    pub data_hash: String,
    pub threshold: DecisionThreshold,
    /// How the model was produced: plain, adversarial training, distillation.
    pub kind: String,
}

/// Writes `<stem>.bin` (parameters) and `<stem>.json` (manifest).
pub fn save_checkpoint(dir: &Path, stem: &str, model: &AuthenticatorModel, manifest: &AuthManifest) -> Result<()> {
    store::write_blob_with_manifest(dir, stem, &model.net.params.to_bytes(), manifest)
}

pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<(AuthenticatorModel, AuthManifest)> {
    let (bytes, manifest): (Vec<u8>, AuthManifest) = store::read_blob_with_manifest(dir, stem)?;
    let params = ParamSet::from_bytes(&bytes).ok_or_else(|| Error::MissingCheckpoint(format!("{stem}: corrupt parameter blob")))?;
    let shapes_ok = {
        let mut rng = rng_for(0, "shape-probe");
        let probe = ConvNet::new(manifest.spec.clone(), &mut rng);
        probe.params.tensors().iter().map(|t| t.shape()).eq(params.tensors().iter().map(|t| t.shape()))
    };
    if !shapes_ok {
        return Err(Error::MissingCheckpoint(format!("{stem}: parameter shapes disagree with manifest")));
    }
    let model = AuthenticatorModel {
        net: ConvNet { spec: manifest.spec.clone(), params },
        input_scale: manifest.input_scale,
        n_movements: manifest.n_movements,
        movement_length: manifest.movement_length,
    };
    Ok((model, manifest))
}
