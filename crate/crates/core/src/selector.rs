//! Instance-wise movement selector trained against a frozen authenticator,
//! with the selector-gated authentication pipeline.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::adversary::{sample_adversarial_rows, tpr_of, AttackSuite, Defense};
use crate::authenticator::{accuracy_of, architecture, features_matrix, ArchScale, AuthenticatorModel, DecisionThreshold};
use crate::data_synth::{Label, Trial};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Adam, Bound, ConvNet, Graph, Mlp, MlpSpec, Tensor, Var};
use crate::physical_noise::NoiseModel;
use crate::rng::rng_for;

/// k-hot movement mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask(pub Vec<bool>);

impl Mask {
    pub fn from_scores(scores: &[f64], n_e: usize) -> Self {
        let mut bits = vec![false; scores.len()];
        for i in top_k(scores, n_e) {
            bits[i] = true;
        }
        Self(bits)
    }

    pub fn arity(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn selected(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect()
    }

    pub fn full(n: usize) -> Self {
        Self(vec![true; n])
    }
}

/// Indices of the `k` largest scores; equal scores prefer the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// How the mask is formed on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    /// Hard top-k forward, gradient of the tempered sigmoid backward.
    StraightThrough,
    /// Tempered sigmoid around the top-k boundary, forward and backward.
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub end: f64,
}

impl TemperatureSchedule {
    /// Geometric interpolation over `steps`.
    pub fn at(&self, step: usize, steps: usize) -> f64 {
        if steps <= 1 {
            return self.end;
        }
        let f = step as f64 / (steps - 1) as f64;
        self.start * (self.end / self.start).powf(f)
    }
}

/// Soft mask `sigmoid((s − θ) / T)` with θ midway between the k-th and
/// (k+1)-th largest score of each row.
pub fn soft_mask_values(scores: &[f64], k: usize, temperature: f64) -> Vec<f64> {
    let n = scores.len();
    if k >= n {
        return vec![1.0; n];
    }
    if k == 0 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let theta = 0.5 * (scores[order[k - 1]] + scores[order[k]]);
    scores.iter().map(|&s| sigmoid((s - theta) / temperature)).collect()
}

fn mask_on_tape(g: &mut Graph, scores: Var, k: usize, temperature: f64, relax: Relaxation) -> Var {
    let sv = g.value(scores).clone();
    let (rows, n) = (sv.rows(), sv.cols());
    let mut hard = Vec::with_capacity(rows * n);
    let mut kth = Vec::with_capacity(rows);
    let mut next = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = sv.row(r);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let mut h = vec![0.0; n];
        for &i in &order[..k.min(n)] {
            h[i] = 1.0;
        }
        hard.extend(h);
        if k > 0 && k < n {
            kth.push(order[k - 1]);
            next.push(order[k]);
        }
    }
    let hard = Tensor::new(vec![rows, n], hard);
    if k == 0 || k >= n {
        return g.constant(hard);
    }
    let a = g.gather_per_row(scores, kth);
    let b = g.gather_per_row(scores, next);
    let ab = g.add(a, b);
    let theta = g.scale(ab, 0.5);
    let d = g.sub_col(scores, theta);
    let d = g.scale(d, 1.0 / temperature);
    let soft = g.sigmoid(d);
    match relax {
        Relaxation::Soft => soft,
        Relaxation::StraightThrough => g.straight_through(soft, hard),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelector {
    pub net: ConvNet,
    pub n_e: usize,
    pub n_movements: usize,
    pub movement_length: usize,
    pub input_scale: f64,
}

impl FeatureSelector {
    pub fn new<R: Rng + ?Sized>(
        scale: ArchScale,
        n_e: usize,
        n_movements: usize,
        movement_length: usize,
        input_scale: f64,
        rng: &mut R,
    ) -> Self {
        let spec = architecture(scale, n_movements, movement_length, 0.0, n_movements);
        Self { net: ConvNet::new(spec, rng), n_e, n_movements, movement_length, input_scale }
    }

    /// Values per movement chunk.
    pub fn chunk_size(&self) -> usize {
        2 * self.movement_length
    }

    pub fn scores_on(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = g.scale(x, 1.0 / self.input_scale);
        self.net.forward(g, p, h, None)
    }

    /// Relevance scores `[n, N_mov]`.
    pub fn scores(&self, x: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let p = self.net.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let s = self.scores_on(&mut g, &p, xv);
        g.value(s).clone()
    }

    pub fn masks(&self, x: &Tensor) -> Vec<Mask> {
        let s = self.scores(x);
        (0..s.rows()).map(|r| Mask::from_scores(s.row(r), self.n_e)).collect()
    }
}

pub fn select_mask(f: &FeatureSelector, trial: &Trial) -> Result<Mask> {
    trial.check_shape(f.n_movements, f.movement_length)?;
    Ok(f.masks(&Tensor::new(vec![1, 2 * f.n_movements * f.movement_length], trial.features())).remove(0))
}

/// Residual reconstruction network `x + s · MLP(x / s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstructor {
    pub net: Mlp,
    pub input_scale: f64,
}

impl Reconstructor {
    pub fn new<R: Rng + ?Sized>(width: usize, hidden: usize, input_scale: f64, rng: &mut R) -> Self {
        let spec = MlpSpec { widths: vec![width, hidden, width], hidden_activation: true, residual: true, zero_last: true };
        Self { net: Mlp::new(spec, rng), input_scale }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = g.scale(x, 1.0 / self.input_scale);
        let o = self.net.forward(g, p, h);
        g.scale(o, self.input_scale)
    }
}

/// Per-feature empirical marginals of the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundReference {
    pool: Tensor,
}

impl BackgroundReference {
    pub fn new(pool: Tensor) -> Result<Self> {
        if pool.rows() == 0 {
            return Err(Error::Empty("background corpus"));
        }
        Ok(Self { pool })
    }

    pub fn width(&self) -> usize {
        self.pool.cols()
    }

    /// `rows` background trials, each feature drawn independently.
    pub fn sample<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Tensor {
        let (n, c) = (self.pool.rows(), self.pool.cols());
        let mut out = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            for f in 0..c {
                out.push(self.pool.data()[rng.random_range(0..n) * c + f]);
            }
        }
        Tensor::new(vec![rows, c], out)
    }
}

pub fn sample_background<R: Rng + ?Sized>(train: &[Trial], rng: &mut R) -> Result<Tensor> {
    Ok(BackgroundReference::new(features_matrix(train))?.sample(1, rng))
}

/// Selected movements from `x`, the rest from `e`.
pub fn apply_bottleneck(x: &Tensor, masks: &[Mask], e: &Tensor, n_movements: usize, length: usize) -> Result<Tensor> {
    if x.shape() != e.shape() || masks.len() != x.rows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?} input, background and {} masks", x.shape(), x.rows()),
            got: format!("{:?} background, {} masks", e.shape(), masks.len()),
        });
    }
    if x.rows() > 0 && x.cols() != 2 * n_movements * length {
        return Err(Error::ShapeMismatch { expected: format!("{} features", 2 * n_movements * length), got: x.cols().to_string() });
    }
    let mut out = e.clone();
    let (cols, total) = (x.cols(), n_movements * length);
    for (r, m) in masks.iter().enumerate() {
        for j in m.selected() {
            for c in 0..2 {
                let s = r * cols + c * total + j * length;
                out.data_mut()[s..s + length].copy_from_slice(&x.data()[s..s + length]);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LossBundle {
    pub fn total(&self) -> f64 {
        (1.0 - self.alpha) * self.l1 - self.alpha * self.l2 + self.beta * self.l3
    }
}

/// One batch of selector-training inputs.
pub struct LossInputs<'a> {
    pub x: &'a Tensor,
    pub y: &'a Tensor,
    pub e: &'a Tensor,
    /// Adversarial composites, their background and targets (all invalid).
    pub adv: Option<(&'a Tensor, &'a Tensor)>,
}

struct TapeLosses {
    l1: Var,
    l2: Var,
    l3: Option<Var>,
    total: Var,
}

struct Bindings {
    f: Bound,
    g1: Bound,
    g2: Bound,
    p: Bound,
}

#[allow(clippy::too_many_arguments)]
fn losses_on_tape(
    g: &mut Graph,
    b: &Bindings,
    f: &FeatureSelector,
    g1: &Reconstructor,
    g2: &Reconstructor,
    auth: &AuthenticatorModel,
    inp: &LossInputs<'_>,
    alpha: f64,
    beta: f64,
    temperature: f64,
    relax: Relaxation,
) -> TapeLosses {
    let l = f.movement_length;
    let xv = g.constant(inp.x.clone());
    let ev = g.constant(inp.e.clone());
    let dv = g.constant(inp.x.zip_map(inp.e, |a, b| a - b));
    let s = f.scores_on(g, &b.f, xv);
    let m = mask_on_tape(g, s, f.n_e, temperature, relax);
    let mm = g.expand_chunks(m, 2, l);
    let md = g.mul(mm, dv);
    let sel = g.add(ev, md);
    let comp = g.sub(xv, md);
    let r1 = g1.forward(g, &b.g1, sel);
    let r2 = g2.forward(g, &b.g2, comp);
    let z1 = auth.logits(g, &b.p, r1, None);
    let z2 = auth.logits(g, &b.p, r2, None);
    let l1 = g.softmax_cross_entropy(z1, inp.y.clone(), 1.0);
    let l2 = g.softmax_cross_entropy(z2, inp.y.clone(), 1.0);
    let a = g.scale(l1, 1.0 - alpha);
    let bb = g.scale(l2, -alpha);
    let mut total = g.add(a, bb);
    let mut l3 = None;
    if let Some((xs, es)) = inp.adv {
        let xsv = g.constant(xs.clone());
        let esv = g.constant(es.clone());
        let dsv = g.constant(xs.zip_map(es, |a, b| a - b));
        let ss = f.scores_on(g, &b.f, xsv);
        let ms = mask_on_tape(g, ss, f.n_e, temperature, relax);
        let mms = g.expand_chunks(ms, 2, l);
        let mds = g.mul(mms, dsv);
        let comp3 = g.add(esv, mds);
        let z3 = auth.logits(g, &b.p, comp3, None);
        let targets = Tensor::new(vec![xs.rows(), 2], Label::Invalid.one_hot().repeat(xs.rows()));
        let l3v = g.softmax_cross_entropy(z3, targets, 1.0);
        let w = g.scale(l3v, beta);
        total = g.add(total, w);
        l3 = Some(l3v);
    }
    TapeLosses { l1, l2, l3, total }
}

/// Loss values and selector-parameter gradients for one batch.
#[allow(clippy::too_many_arguments)]
pub fn selector_losses(
    f: &FeatureSelector,
    g1: &Reconstructor,
    g2: &Reconstructor,
    auth: &AuthenticatorModel,
    inp: &LossInputs<'_>,
    alpha: f64,
    beta: f64,
    temperature: f64,
    relax: Relaxation,
) -> (LossBundle, Vec<Tensor>) {
    let mut g = Graph::new();
    let b = Bindings {
        f: f.net.params.bind(&mut g, true),
        g1: g1.net.params.bind(&mut g, false),
        g2: g2.net.params.bind(&mut g, false),
        p: auth.bind(&mut g),
    };
    let t = losses_on_tape(&mut g, &b, f, g1, g2, auth, inp, alpha, beta, temperature, relax);
    let bundle = LossBundle {
        l1: g.value(t.l1).item(),
        l2: g.value(t.l2).item(),
        l3: t.l3.map_or(0.0, |v| g.value(v).item()),
        alpha,
        beta,
    };
    let grads = g.backward(t.total);
    (bundle, f.net.params.collect_grads(&b.f, &grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectorTrainConfig {
    pub batch_size: usize,
    pub lr_selector: f64,
    pub lr_generative: f64,
    pub steps: usize,
    /// Defaults to `n_e / N_mov`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub n_e: usize,
    pub seed: u64,
    pub temperature: TemperatureSchedule,
    pub generative_hidden: usize,
    pub scale: ArchScale,
}

impl Default for SelectorTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr_selector: 5e-4,
            lr_generative: 1e-4,
            steps: 300,
            alpha: None,
            beta: 0.0,
            n_e: 2,
            seed: 0,
            temperature: TemperatureSchedule { start: 1.0, end: 0.05 },
            generative_hidden: 32,
            scale: ArchScale::Desk,
        }
    }
}

impl SelectorTrainConfig {
    pub fn alpha_for(&self, n_movements: usize) -> f64 {
        self.alpha.unwrap_or(self.n_e as f64 / n_movements as f64)
    }

    pub fn validate(&self, n_movements: usize) -> Result<()> {
        if self.n_e == 0 || self.n_e > n_movements {
            return Err(Error::InvalidInput(format!("n_e = {} outside 1..={n_movements}", self.n_e)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidInput(format!("beta = {} must be >= 0", self.beta)));
        }
        let a = self.alpha_for(n_movements);
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::InvalidInput(format!("alpha = {a} outside [0, 1]")));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adversarial inputs for the improved objective.
pub struct AdversarialSource<'a> {
    pub suite: &'a AttackSuite,
    pub bases: &'a Tensor,
    pub noise: &'a NoiseModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSelector {
    pub selector: FeatureSelector,
    pub g1: Reconstructor,
    pub g2: Reconstructor,
    pub background: BackgroundReference,
    pub alpha: f64,
    pub beta: f64,
    pub history: Vec<LossBundle>,
}

/// Joint training of F, G1 and G2. With `adversarial = None` (or β = 0) the
/// adversarial term is absent.
pub fn train_selector(
    auth: &AuthenticatorModel,
    train: &[Trial],
    adversarial: Option<&AdversarialSource<'_>>,
    cfg: &SelectorTrainConfig,
) -> Result<TrainedSelector> {
    let first = train.first().ok_or(Error::Empty("training set"))?;
    let (n_mov, l) = (first.n_movements(), first.movement_length());
    cfg.validate(n_mov)?;
    let labels: Vec<Label> = train.iter().map(|t| t.label.ok_or_else(|| Error::InvalidInput("unlabelled trial".into()))).collect::<Result<_>>()?;
    let x_all = features_matrix(train);
    let by_class: [Vec<usize>; 2] = [0, 1].map(|c| (0..train.len()).filter(|&i| labels[i].class() == c).collect());
    if by_class.iter().any(Vec::is_empty) {
        return Err(Error::SingleClass);
    }
    let background = BackgroundReference::new(x_all.clone())?;
    let alpha = cfg.alpha_for(n_mov);
    let mut init = rng_for(cfg.seed, "selector/init");
    let mut f = FeatureSelector::new(cfg.scale, cfg.n_e, n_mov, l, auth.input_scale, &mut init);
    let width = 2 * n_mov * l;
    let mut g1 = Reconstructor::new(width, cfg.generative_hidden, auth.input_scale, &mut init);
    let mut g2 = Reconstructor::new(width, cfg.generative_hidden, auth.input_scale, &mut init);
    let mut opt_f = Adam::new(&f.net.params, cfg.lr_selector);
    let mut opt_g1 = Adam::new(&g1.net.params, cfg.lr_generative);
    let mut opt_g2 = Adam::new(&g2.net.params, cfg.lr_generative);
    let mut rng = rng_for(cfg.seed, "selector/train");
    let adversarial = adversarial.filter(|_| cfg.beta > 0.0);
    let mut history = Vec::with_capacity(cfg.steps);
    let half = cfg.batch_size.div_ceil(2);
    for step in 0..cfg.steps {
        let temp = cfg.temperature.at(step, cfg.steps);
        let mut rows: Vec<usize> = (0..half).map(|_| by_class[0][rng.random_range(0..by_class[0].len())]).collect();
        rows.extend((0..cfg.batch_size - half).map(|_| by_class[1][rng.random_range(0..by_class[1].len())]));
        rows.shuffle(&mut rng);
        let mut xb = Vec::with_capacity(rows.len() * width);
        let mut yb = Vec::with_capacity(rows.len() * 2);
        for &r in &rows {
            xb.extend_from_slice(x_all.row(r));
            yb.extend_from_slice(&labels[r].one_hot());
        }
        let x = Tensor::new(vec![rows.len(), width], xb);
        let y = Tensor::new(vec![rows.len(), 2], yb);
        let e = background.sample(rows.len(), &mut rng);
        let adv = adversarial.map(|src| {
            let picks: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..src.bases.rows())).collect();
            let mut b = Vec::with_capacity(picks.len() * width);
            for &p in &picks {
                b.extend_from_slice(src.bases.row(p));
            }
            let (xs, _) = sample_adversarial_rows(src.suite, &Tensor::new(vec![picks.len(), width], b), src.noise, &mut rng);
            let es = background.sample(picks.len(), &mut rng);
            (xs, es)
        });
        let inp = LossInputs { x: &x, y: &y, e: &e, adv: adv.as_ref().map(|(a, b)| (a, b)) };
        let mut g = Graph::new();
        let b = Bindings {
            f: f.net.params.bind(&mut g, true),
            g1: g1.net.params.bind(&mut g, true),
            g2: g2.net.params.bind(&mut g, true),
            p: auth.bind(&mut g),
        };
        let t = losses_on_tape(&mut g, &b, &f, &g1, &g2, auth, &inp, alpha, cfg.beta, temp, Relaxation::StraightThrough);
        history.push(LossBundle {
            l1: g.value(t.l1).item(),
            l2: g.value(t.l2).item(),
            l3: t.l3.map_or(0.0, |v| g.value(v).item()),
            alpha,
            beta: cfg.beta,
        });
        let grads = g.backward(t.total);
        let gf = f.net.params.collect_grads(&b.f, &grads);
        // G1 and G2 enter the total only through l1 and l2, so their
        // gradients are rescaled instead of running two more passes.
        let (gg1, gg2) = if alpha > 0.0 && alpha < 1.0 {
            let s1 = 1.0 / (1.0 - alpha);
            let s2 = -1.0 / alpha;
            (
                g1.net.params.collect_grads(&b.g1, &grads).into_iter().map(|t| t.map(|v| v * s1)).collect::<Vec<_>>(),
                g2.net.params.collect_grads(&b.g2, &grads).into_iter().map(|t| t.map(|v| v * s2)).collect::<Vec<_>>(),
            )
        } else {
            let g_l1 = g.backward(t.l1);
            let g_l2 = g.backward(t.l2);
            (g1.net.params.collect_grads(&b.g1, &g_l1), g2.net.params.collect_grads(&b.g2, &g_l2))
        };
        opt_f.step(&mut f.net.params, &gf);
        opt_g1.step(&mut g1.net.params, &gg1);
        opt_g2.step(&mut g2.net.params, &gg2);
    }
    Ok(TrainedSelector { selector: f, g1, g2, background, alpha, beta: cfg.beta, history })
}

pub fn train_basic_selector(auth: &AuthenticatorModel, train: &[Trial], cfg: &SelectorTrainConfig) -> Result<TrainedSelector> {
    train_selector(auth, train, None, &SelectorTrainConfig { beta: 0.0, ..cfg.clone() })
}

pub fn train_improved_selector(
    auth: &AuthenticatorModel,
    train: &[Trial],
    adversarial: &AdversarialSource<'_>,
    cfg: &SelectorTrainConfig,
) -> Result<TrainedSelector> {
    train_selector(auth, train, Some(adversarial), cfg)
}

/// One evaluated β candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaCandidate {
    pub beta: f64,
    pub accuracy: f64,
    pub tpr: f64,
}

/// Picks the candidate with the highest TPR among those keeping at least
/// `floor_ratio` of the basic accuracy; ties go to the smaller β. Returns
/// `(β, false)` or `(smallest β, true)` when no candidate meets the floor.
pub fn choose_beta(candidates: &[BetaCandidate], basic_accuracy: f64, floor_ratio: f64) -> Result<(f64, bool)> {
    if candidates.is_empty() {
        return Err(Error::Empty("beta candidate set"));
    }
    let floor = floor_ratio * basic_accuracy;
    let mut best: Option<BetaCandidate> = None;
    for c in candidates.iter().filter(|c| c.accuracy >= floor) {
        best = match best {
            None => Some(*c),
            Some(b) if c.tpr > b.tpr || (c.tpr == b.tpr && c.beta < b.beta) => Some(*c),
            keep => keep,
        };
    }
    Ok(match best {
        Some(b) => (b.beta, false),
        None => (candidates.iter().map(|c| c.beta).fold(f64::INFINITY, f64::min), true),
    })
}

/// Which input reaches the authenticator after masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    #[default]
    RawBottleneck,
    Reconstructed,
}

/// How non-selected slots are filled at inference.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    #[default]
    Fresh,
    Fixed(Tensor),
}

/// Selector-gated authenticator.
#[derive(Debug, Clone)]
pub struct SelectorPipeline<'a> {
    pub trained: &'a TrainedSelector,
    pub auth: &'a AuthenticatorModel,
    pub mode: InferenceMode,
    pub background: BackgroundMode,
}

impl<'a> SelectorPipeline<'a> {
    pub fn new(trained: &'a TrainedSelector, auth: &'a AuthenticatorModel) -> Self {
        Self { trained, auth, mode: InferenceMode::RawBottleneck, background: BackgroundMode::Fresh }
    }

    fn fill(&self, rows: usize, rng: &mut dyn RngCore) -> Tensor {
        match &self.background {
            BackgroundMode::Fresh => self.trained.background.sample(rows, rng),
            BackgroundMode::Fixed(e) => {
                let mut out = Vec::with_capacity(rows * e.cols());
                for _ in 0..rows {
                    out.extend_from_slice(e.row(0));
                }
                Tensor::new(vec![rows, e.cols()], out)
            }
        }
    }

    /// Composite inputs the authenticator sees.
    pub fn composites(&self, x: &Tensor, rng: &mut dyn RngCore) -> Result<Tensor> {
        let f = &self.trained.selector;
        let masks = f.masks(x);
        let e = self.fill(x.rows(), rng);
        let comp = apply_bottleneck(x, &masks, &e, f.n_movements, f.movement_length)?;
        Ok(match self.mode {
            InferenceMode::RawBottleneck => comp,
            InferenceMode::Reconstructed => {
                let mut g = Graph::new();
                let p = self.trained.g1.net.params.bind(&mut g, false);
                let cv = g.constant(comp);
                let r = self.trained.g1.forward(&mut g, &p, cv);
                g.value(r).clone()
            }
        })
    }

    pub fn accuracy(&self, tau: DecisionThreshold, trials: &[Trial], rng: &mut dyn RngCore) -> Result<f64> {
        if trials.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let labels: Vec<Label> = trials.iter().map(|t| t.label.unwrap_or(Label::Invalid)).collect();
        let scores = Defense::valid_scores(self, &features_matrix(trials), rng)?;
        Ok(accuracy_of(&scores, &labels, tau))
    }

    /// Per-row gradient of the valid score with respect to the raw input,
    /// masks and background held fixed.
    pub fn input_gradient(&self, x: &Tensor, e: &Tensor) -> Result<Tensor> {
        let f = &self.trained.selector;
        let masks = f.masks(x);
        let mut keep = Vec::with_capacity(x.len());
        for m in &masks {
            let mut row = vec![0.0; x.cols()];
            for j in m.selected() {
                for c in 0..2 {
                    let s = c * f.n_movements * f.movement_length + j * f.movement_length;
                    row[s..s + f.movement_length].fill(1.0);
                }
            }
            keep.extend(row);
        }
        let keep = Tensor::new(x.shape().to_vec(), keep);
        let e_part = e.zip_map(&keep, |ev, k| ev * (1.0 - k));
        let mut g = Graph::new();
        let p = self.auth.bind(&mut g);
        let xv = g.leaf(x.clone());
        let kept = g.mul_const(xv, keep);
        let comp = g.add_const(kept, &e_part);
        let z = self.auth.logits(&mut g, &p, comp, None);
        let s = g.softmax(z, 1.0);
        let v = g.gather_cols(s, Arc::from(vec![0]));
        let total = g.sum(v);
        let grads = g.backward(total);
        Ok(grads.get_or_zeros(xv, x.shape()))
    }
}

impl Defense for SelectorPipeline<'_> {
    fn valid_scores(&self, x: &Tensor, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.auth.valid_scores(&self.composites(x, rng)?)
    }

    fn selected(&self, x: &Tensor) -> Result<Option<Vec<Vec<bool>>>> {
        Ok(Some(self.trained.selector.masks(x).into_iter().map(|m| m.0).collect()))
    }
}

pub fn authenticate_with_selector(
    pipeline: &SelectorPipeline<'_>,
    tau: DecisionThreshold,
    trial: &Trial,
    rng: &mut dyn RngCore,
) -> Result<Label> {
    let f = &pipeline.trained.selector;
    trial.check_shape(f.n_movements, f.movement_length)?;
    let x = Tensor::new(vec![1, 2 * f.n_movements * f.movement_length], trial.features());
    Ok(tau.classify(Defense::valid_scores(pipeline, &x, rng)?[0]))
}

/// Rejection rate of `pipeline` on noised adversarial composites built from `bases`.
pub fn adversarial_rejection(
    pipeline: &SelectorPipeline<'_>,
    tau: DecisionThreshold,
    suite: &AttackSuite,
    bases: &Tensor,
    noise: &NoiseModel,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let (xs, _) = sample_adversarial_rows(suite, bases, noise, rng);
    tpr_of(&Defense::valid_scores(pipeline, &xs, rng)?, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_example_and_ties() {
        let m = Mask::from_scores(&[9.0, 1.0, 8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 2);
        assert_eq!(m.selected(), vec![0, 2]);
        assert_eq!(Mask::from_scores(&[1.0, 3.0, 3.0, 3.0], 2).selected(), vec![1, 2]);
    }

    #[test]
    fn soft_mask_converges_to_hard() {
        let s = [0.3, -1.2, 2.0, 0.9, 0.31];
        let hard = Mask::from_scores(&s, 2);
        let sched = TemperatureSchedule { start: 1.0, end: 1e-4 };
        let mut prev = f64::INFINITY;
        for step in 0..20 {
            let t = sched.at(step, 20);
            let soft = soft_mask_values(&s, 2, t);
            let dev = soft.iter().zip(&hard.0).map(|(a, &h)| (a - if h { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max);
            assert!(dev <= prev + 1e-15);
            prev = dev;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn choose_beta_rules() {
        let c = |beta, accuracy, tpr| BetaCandidate { beta, accuracy, tpr };
        assert_eq!(choose_beta(&[c(0.0, 0.5, 0.2)], 0.9, 0.95).unwrap(), (0.0, true));
        assert_eq!(choose_beta(&[c(1.0, 0.9, 0.4)], 0.9, 0.95).unwrap(), (1.0, false));
        let set = [c(0.1, 0.90, 0.5), c(0.3, 0.80, 0.9), c(1.0, 0.88, 0.6), c(3.0, 0.87, 0.6)];
        assert_eq!(choose_beta(&set, 0.9, 0.95).unwrap(), (1.0, false));
    }

    #[test]
    fn bottleneck_blocks() {
        let x = Tensor::new(vec![1, 8], (0..8).map(f64::from).collect());
        let e = Tensor::new(vec![1, 8], vec![-1.0; 8]);
        let full = apply_bottleneck(&x, &[Mask::full(2)], &e, 2, 2).unwrap();
        assert_eq!(full, x);
        let none = apply_bottleneck(&x, &[Mask(vec![false, false])], &e, 2, 2).unwrap();
        assert_eq!(none, e);
        let mixed = apply_bottleneck(&x, &[Mask(vec![false, true])], &e, 2, 2).unwrap();
        assert_eq!(mixed.data(), &[-1.0, -1.0, 2.0, 3.0, -1.0, -1.0, 6.0, 7.0]);
    }
}
