//! Per-movement adversarial generators and the two attack scenarios.
//!
//! A generator sees the whole base trial of an attacker and rewrites one
//! movement. Replication noise is added on top of the generated movement
//! both while training (so the generator seeks noise-tolerant regions) and
//! whenever a sample is realised.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::authenticator::{features_matrix, AuthenticatorModel, DecisionThreshold};
use crate::data_synth::{movement_feature_indices, Label, Movement, Provenance, Trial};
use crate::error::{Error, Result};
use crate::nn::{Adam, Graph, Mlp, MlpSpec, Tensor};
use crate::physical_noise::NoiseModel;
use crate::rng::{derive_seed, rng_for, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hidden width of the two-layer generator.
    pub hidden: usize,
    /// Add replication noise inside the training loop.
    pub noise_in_training: bool,
    /// Fresh noise draws per base trial when measuring TPR.
    pub eval_draws: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 16,
            learning_rate: 1e-3,
            hidden: 320,
            noise_in_training: true,
            eval_draws: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackGenerator {
    pub j: usize,
    pub n_movements: usize,
    pub movement_length: usize,
    pub net: Mlp,
    /// Input normalisation.
    pub input_scale: f64,
    /// Output units in px/s.
    pub output_scale: f64,
}

impl AttackGenerator {
    pub fn new<R: Rng + ?Sized>(
        j: usize,
        n_movements: usize,
        movement_length: usize,
        hidden: usize,
        input_scale: f64,
        output_scale: f64,
        rng: &mut R,
    ) -> Self {
        let spec = MlpSpec {
            widths: vec![2 * n_movements * movement_length, hidden, 2 * movement_length],
            hidden_activation: true,
            residual: false,
            zero_last: true,
        };
        Self { j, n_movements, movement_length, net: Mlp::new(spec, rng), input_scale, output_scale }
    }

    pub fn indices(&self) -> Arc<[usize]> {
        movement_feature_indices(self.n_movements, self.movement_length, self.j).into()
    }

    /// Ideal replacement blocks `[n, 2L]` (channel-major) for base rows `x`.
    pub fn ideal_blocks(&self, x: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let p = self.net.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.block_on(&mut g, &p, xv);
        g.value(out).clone()
    }

    fn block_on(&self, g: &mut Graph, p: &crate::nn::Bound, x: crate::nn::Var) -> crate::nn::Var {
        let h = g.scale(x, 1.0 / self.input_scale);
        let o = self.net.forward(g, p, h);
        let o = g.scale(o, self.output_scale);
        let base = g.gather_cols(x, self.indices());
        g.add(base, o)
    }

    pub fn ideal_movement(&self, base: &Trial) -> Result<Movement> {
        base.check_shape(self.n_movements, self.movement_length)?;
        let x = Tensor::new(vec![1, base.features().len()], base.features());
        Ok(Movement::from_channels(self.ideal_blocks(&x).data()))
    }
}

/// σ for each channel-major block row.
pub fn block_sigmas(blocks: &Tensor, noise: &NoiseModel) -> Vec<f64> {
    (0..blocks.rows())
        .map(|r| noise.sigma_for(&Movement::from_channels(blocks.row(r))).unwrap_or(0.0))
        .collect()
}

fn gaussian_like<R: Rng + ?Sized>(rows: usize, cols: usize, sigmas: &[f64], rng: &mut R) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for &s in sigmas.iter().take(rows) {
        for _ in 0..cols {
            let z: f64 = StandardNormal.sample(rng);
            data.push(s * z);
        }
    }
    Tensor::new(vec![rows, cols], data)
}

/// Writes `blocks` into slot `idx` of copies of `x`.
pub fn replace_block(x: &Tensor, idx: &[usize], blocks: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    for r in 0..x.rows() {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        for (k, &i) in idx.iter().enumerate() {
            row[i] = blocks.row(r)[k];
        }
    }
    out
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    let r = (s / n.max(1) as f64).sqrt();
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Trains generator `j` to push the frozen authenticator toward "valid" on
/// the noised composite trial.
pub fn train_attack_generator(
    auth: &AuthenticatorModel,
    attacker_trials: &[Trial],
    j: usize,
    noise: &NoiseModel,
    cfg: &AttackConfig,
) -> Result<AttackGenerator> {
    if attacker_trials.is_empty() {
        return Err(Error::Empty("attacker trial set"));
    }
    if j >= auth.n_movements {
        return Err(Error::InvalidInput(format!("movement index {j} out of range 0..{}", auth.n_movements)));
    }
    for t in attacker_trials {
        t.check_shape(auth.n_movements, auth.movement_length)?;
    }
    let x_all = features_matrix(attacker_trials);
    let idx = movement_feature_indices(auth.n_movements, auth.movement_length, j);
    let out_scale = rms((0..x_all.rows()).flat_map(|r| idx.iter().map(move |&i| (r, i))).map(|(r, i)| x_all.row(r)[i]));
    let mut init = rng_for(cfg.seed, &format!("attack/{j}/init"));
    let mut gen = AttackGenerator::new(
        j,
        auth.n_movements,
        auth.movement_length,
        cfg.hidden,
        rms(x_all.data().iter().copied()),
        out_scale,
        &mut init,
    );
    let mut opt = Adam::new(&gen.net.params, cfg.learning_rate);
    let mut rng = rng_for(cfg.seed, &format!("attack/{j}/train"));
    let rows: Vec<usize> = (0..x_all.rows()).collect();
    let idx: Arc<[usize]> = idx.into();
    let width = x_all.cols();
    let valid_target = Label::Valid.one_hot();
    for _ in 0..cfg.steps {
        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| *rows.choose(&mut rng).expect("non-empty")).collect();
        let mut xb = Vec::with_capacity(batch.len() * width);
        for &r in &batch {
            xb.extend_from_slice(x_all.row(r));
        }
        let xb = Tensor::new(vec![batch.len(), width], xb);
        let mut holed = xb.clone();
        for r in 0..batch.len() {
            for &i in idx.iter() {
                holed.data_mut()[r * width + i] = 0.0;
            }
        }
        let mut g = Graph::new();
        let gp = gen.net.params.bind(&mut g, true);
        let ap = auth.bind(&mut g);
        let xv = g.constant(xb);
        let mut block = gen.block_on(&mut g, &gp, xv);
        if cfg.noise_in_training {
            let sig = block_sigmas(g.value(block), noise);
            let n = gaussian_like(batch.len(), idx.len(), &sig, &mut rng);
            let nv = g.constant(n);
            block = g.add(block, nv);
        }
        let placed = g.scatter_cols(block, idx.clone(), width);
        let hv = g.constant(holed);
        let composite = g.add(hv, placed);
        let logits = auth.logits(&mut g, &ap, composite, None);
        let targets = Tensor::new(vec![batch.len(), 2], valid_target.repeat(batch.len()));
        let loss = g.softmax_cross_entropy(logits, targets, 1.0);
        let grads = g.backward(loss);
        let gg = gen.net.params.collect_grads(&gp, &grads);
        opt.step(&mut gen.net.params, &gg);
    }
    Ok(gen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSuite {
    pub generators: Vec<AttackGenerator>,
}

impl AttackSuite {
    pub fn new(generators: Vec<AttackGenerator>) -> Result<Self> {
        let n = generators.len();
        let mut seen = vec![false; n];
        for g in &generators {
            if g.j >= n || std::mem::replace(&mut seen[g.j], true) {
                return Err(Error::InvalidInput(format!("suite must hold each index 0..{n} exactly once")));
            }
        }
        let mut generators = generators;
        generators.sort_by_key(|g| g.j);
        Ok(Self { generators })
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }
}

/// One generator per movement, trained in parallel.
pub fn train_attack_suite(
    auth: &AuthenticatorModel,
    attacker_trials: &[Trial],
    noise: &NoiseModel,
    cfg: &AttackConfig,
) -> Result<AttackSuite> {
    let gens = (0..auth.n_movements)
        .into_par_iter()
        .map(|j| {
            let c = AttackConfig { seed: derive_seed(cfg.seed, &format!("suite/{j}")), ..cfg.clone() };
            train_attack_generator(auth, attacker_trials, j, noise, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    AttackSuite::new(gens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialSample {
    pub base: Trial,
    pub j: usize,
    pub ideal: Movement,
    pub realized: Movement,
    pub sigma: f64,
}

impl AdversarialSample {
    pub fn label(&self) -> Label {
        Label::Invalid
    }

    /// The composite trial with provenance, labelled invalid.
    pub fn to_trial(&self) -> Trial {
        let mut t = self.base.clone();
        t.movements[self.j] = self.realized.clone();
        t.label = Some(Label::Invalid);
        t.provenance = Some(Provenance { replaced_movement: self.j, sigma: self.sigma });
        t
    }
}

/// Replaces movement `gen.j` of `base` by a freshly noised generated movement.
/// `sigma_override` forces σ (0 yields the ideal movement).
pub fn generate_adversarial_sample<R: Rng + ?Sized>(
    gen: &AttackGenerator,
    base: &Trial,
    noise: &NoiseModel,
    sigma_override: Option<f64>,
    rng: &mut R,
) -> Result<AdversarialSample> {
    if gen.j >= base.n_movements() {
        return Err(Error::InvalidInput(format!("movement index {} out of range", gen.j)));
    }
    let ideal = gen.ideal_movement(base)?;
    let sigma = match sigma_override {
        Some(s) => s,
        None => noise.sigma_for(&ideal)?,
    };
    let realized = crate::physical_noise::apply_replication_noise(&ideal, sigma, rng);
    Ok(AdversarialSample { base: base.clone(), j: gen.j, ideal, realized, sigma })
}

/// Ideal blocks plus σ for a batch of bases; noise is drawn per realisation.
#[derive(Debug, Clone)]
pub struct IdealBatch {
    pub j: usize,
    pub base: Tensor,
    pub blocks: Tensor,
    pub sigmas: Vec<f64>,
    pub idx: Arc<[usize]>,
}

impl IdealBatch {
    pub fn new(gen: &AttackGenerator, base: Tensor, noise: &NoiseModel) -> Self {
        let blocks = gen.ideal_blocks(&base);
        let sigmas = block_sigmas(&blocks, noise);
        Self { j: gen.j, base, blocks, sigmas, idx: gen.indices() }
    }

    /// Composite trials with one fresh noise draw per row.
    pub fn realize<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let n = gaussian_like(self.blocks.rows(), self.blocks.cols(), &self.sigmas, rng);
        replace_block(&self.base, &self.idx, &self.blocks.zip_map(&n, |a, b| a + b))
    }
}

/// Fraction of `valid_scores` rejected at τ.
pub fn tpr_of(valid_scores: &[f64], tau: DecisionThreshold) -> Result<f64> {
    if valid_scores.is_empty() {
        return Err(Error::Empty("adversarial sample set"));
    }
    Ok(valid_scores.iter().filter(|&&s| !tau.accepts(s)).count() as f64 / valid_scores.len() as f64)
}

pub fn tpr_under_attack(auth: &AuthenticatorModel, tau: DecisionThreshold, samples: &[AdversarialSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("adversarial sample set"));
    }
    let trials: Vec<Trial> = samples.iter().map(AdversarialSample::to_trial).collect();
    tpr_of(&auth.valid_scores(&features_matrix(&trials))?, tau)
}

/// A deployed defence: scores composite inputs and optionally reports which
/// movements it lets through.
pub trait Defense: Sync {
    fn valid_scores(&self, x: &Tensor, rng: &mut dyn RngCore) -> Result<Vec<f64>>;

    /// Per-row selected movements when the defence has a selector.
    fn selected(&self, _x: &Tensor) -> Result<Option<Vec<Vec<bool>>>> {
        Ok(None)
    }
}

impl Defense for AuthenticatorModel {
    fn valid_scores(&self, x: &Tensor, _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        AuthenticatorModel::valid_scores(self, x)
    }
}

/// Per-movement attack outcomes against one defence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    /// TPR of the attack against the bare classifier, per movement.
    pub tpr_classifier: Vec<f64>,
    /// TPR against the full defence, per movement.
    pub tpr_defense: Vec<f64>,
    /// Movement selected in every evaluated sample.
    pub eligible: Vec<bool>,
    pub scenario1: usize,
    pub scenario2: usize,
    pub scenario2_fallback: bool,
}

impl AttackReport {
    pub fn scenario1_tpr(&self) -> f64 {
        self.tpr_defense[self.scenario1]
    }

    pub fn scenario2_tpr(&self) -> f64 {
        self.tpr_defense[self.scenario2]
    }
}

/// Lowest index attaining the minimum.
pub fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Argmin over eligible indices, or `None` when nothing is eligible.
pub fn argmin_eligible(values: &[f64], eligible: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if eligible[i] && best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Evaluates each generator of `suite` on `bases` with `draws` fresh noise
/// realisations per base.
pub fn evaluate_suite(
    suite: &AttackSuite,
    classifier: &AuthenticatorModel,
    defense: &dyn Defense,
    tau: DecisionThreshold,
    bases: &[Trial],
    noise: &NoiseModel,
    draws: usize,
    seed: u64,
) -> Result<AttackReport> {
    if bases.is_empty() {
        return Err(Error::Empty("attacker trial set"));
    }
    let x = features_matrix(bases);
    let n_mov = suite.len();
    let per_j: Vec<(f64, f64, bool)> = suite
        .generators
        .par_iter()
        .map(|gen| {
            let batch = IdealBatch::new(gen, x.clone(), noise);
            let mut rng = rng_from_seed(derive_seed(seed, &format!("eval/{}", gen.j)));
            let (mut rej_c, mut rej_d, mut total) = (0usize, 0usize, 0usize);
            let mut eligible = true;
            for _ in 0..draws.max(1) {
                let xs = batch.realize(&mut rng);
                let sc = classifier.valid_scores(&xs)?;
                let sd = defense.valid_scores(&xs, &mut rng)?;
                rej_c += sc.iter().filter(|&&s| !tau.accepts(s)).count();
                rej_d += sd.iter().filter(|&&s| !tau.accepts(s)).count();
                total += sc.len();
                if let Some(sel) = defense.selected(&xs)? {
                    eligible &= sel.iter().all(|m| m[gen.j]);
                }
            }
            Ok((rej_c as f64 / total as f64, rej_d as f64 / total as f64, eligible))
        })
        .collect::<Result<Vec<_>>>()?;
    let tpr_classifier: Vec<f64> = per_j.iter().map(|p| p.0).collect();
    let tpr_defense: Vec<f64> = per_j.iter().map(|p| p.1).collect();
    let eligible: Vec<bool> = per_j.iter().map(|p| p.2).collect();
    debug_assert_eq!(tpr_classifier.len(), n_mov);
    let scenario1 = argmin_first(&tpr_classifier);
    let (scenario2, scenario2_fallback) = match argmin_eligible(&tpr_defense, &eligible) {
        Some(j) => (j, false),
        None => (scenario1, true),
    };
    Ok(AttackReport { tpr_classifier, tpr_defense, eligible, scenario1, scenario2, scenario2_fallback })
}

/// Scenario 1: the attacker sees only the classifier.
pub fn select_attack_scenario1(
    suite: &AttackSuite,
    auth: &AuthenticatorModel,
    tau: DecisionThreshold,
    attacker_trials: &[Trial],
    noise: &NoiseModel,
    draws: usize,
    seed: u64,
) -> Result<usize> {
    Ok(evaluate_suite(suite, auth, auth, tau, attacker_trials, noise, draws, seed)?.scenario1)
}

/// Scenario 2: the attacker also sees the selector. Returns the index and
/// whether the scenario-1 fallback was taken.
pub fn select_attack_scenario2(
    suite: &AttackSuite,
    auth: &AuthenticatorModel,
    defense: &dyn Defense,
    tau: DecisionThreshold,
    attacker_trials: &[Trial],
    noise: &NoiseModel,
    draws: usize,
    seed: u64,
) -> Result<(usize, bool)> {
    let r = evaluate_suite(suite, auth, defense, tau, attacker_trials, noise, draws, seed)?;
    Ok((r.scenario2, r.scenario2_fallback))
}

/// Noised adversarial composites, one per base trial with a random movement.
pub fn sample_adversarial_rows<R: Rng + ?Sized>(
    suite: &AttackSuite,
    bases: &Tensor,
    noise: &NoiseModel,
    rng: &mut R,
) -> (Tensor, Vec<usize>) {
    let n_mov = suite.len();
    let js: Vec<usize> = (0..bases.rows()).map(|_| rng.random_range(0..n_mov)).collect();
    let mut out = bases.clone();
    let cols = bases.cols();
    for j in 0..n_mov {
        let rows: Vec<usize> = (0..bases.rows()).filter(|&r| js[r] == j).collect();
        if rows.is_empty() {
            continue;
        }
        let mut sub = Vec::with_capacity(rows.len() * cols);
        for &r in &rows {
            sub.extend_from_slice(bases.row(r));
        }
        let batch = IdealBatch::new(&suite.generators[j], Tensor::new(vec![rows.len(), cols], sub), noise);
        let realized = batch.realize(rng);
        for (k, &r) in rows.iter().enumerate() {
            out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(realized.row(k));
        }
    }
    (out, js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_ties_pick_lowest_index() {
        assert_eq!(argmin_first(&[0.5, 0.2, 0.2, 0.9]), 1);
        assert_eq!(argmin_first(&[0.3; 10]), 0);
        assert_eq!(argmin_eligible(&[0.1, 0.5, 0.4], &[false, true, true]), Some(2));
        assert_eq!(argmin_eligible(&[0.1, 0.5], &[false, false]), None);
    }

    #[test]
    fn tpr_counts_rejections() {
        assert_eq!(tpr_of(&[0.0; 4], DecisionThreshold::DEFAULT).unwrap(), 1.0);
        assert_eq!(tpr_of(&[0.1, 0.6, 0.5, 0.49], DecisionThreshold::DEFAULT).unwrap(), 0.5);
        assert!(tpr_of(&[], DecisionThreshold::DEFAULT).is_err());
    }
}
