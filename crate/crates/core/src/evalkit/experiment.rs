use std::path::{Path, PathBuf};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plots;
use super::trends::{trend_report, TrendReport};
use super::{comparison_matrix, render_comparison_matrix, ComparisonCell, ResultRow, ResultsTable, StrategyKind, StrategyUnderTest};
use crate::adversary::{evaluate_suite, train_attack_suite, AttackConfig, AttackSuite, Defense, IdealBatch};
use crate::authenticator::{
    accuracy_of, calibrate_threshold, features_matrix, train_authenticator, AuthTrainConfig, AuthenticatorModel,
    DecisionThreshold,
};
use crate::baselines::{adversarial_training, defensive_distillation, AdvTrainingConfig, DistillationConfig};
use crate::config::RunConfig;
use crate::data_synth::{load_corpus, make_split, save_corpus, synthesize_corpus, Corpus, Label, Trial};
use crate::error::{Error, Result};
use crate::physical_noise::NoiseModel;
use crate::rng::{derive_seed, rng_for};
use crate::selector::{
    adversarial_rejection, choose_beta, train_basic_selector, train_improved_selector, AdversarialSource,
    BetaCandidate, InferenceMode, SelectorPipeline, SelectorTrainConfig, TrainedSelector,
};
use crate::store::{content_hash, ArtifactStore};

/// Scores a strategy assigns, for ROC analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocScores {
    pub valid: Vec<f64>,
    pub attacker_clean: Vec<f64>,
    /// One noise draw of the scenario-1 attack per attacker trial.
    pub attacker_adversarial: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub strategy: StrategyUnderTest,
    pub threshold: f64,
    pub accuracy: f64,
    pub tpr_s1: f64,
    pub tpr_s2: Option<f64>,
    pub scenario1: usize,
    pub scenario2: Option<usize>,
    pub scenario2_fallback: bool,
    pub beta: Option<f64>,
    pub beta_flagged: bool,
    pub roc: RocScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSeedOutcome {
    pub user: u32,
    pub seed: u64,
    /// Rejection rate of the plain authenticator on unmodified attacker trials.
    pub clean_rejection: f64,
    pub strategies: Vec<StrategyOutcome>,
}

/// Accuracy on `test`, both attack scenarios on `attacker`, and ROC scores.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_strategy(
    strategy: &StrategyUnderTest,
    defense: &dyn Defense,
    classifier: &AuthenticatorModel,
    suite: &AttackSuite,
    tau: DecisionThreshold,
    test: &[Trial],
    attacker: &[Trial],
    noise: &NoiseModel,
    draws: usize,
    seed: u64,
) -> Result<StrategyOutcome> {
    strategy.validate()?;
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    if attacker.is_empty() {
        return Err(Error::Empty("attacker trial set"));
    }
    let mut rng = rng_for(seed, "evaluate/scores");
    let labels: Vec<Label> = test.iter().map(|t| t.label.unwrap_or(Label::Invalid)).collect();
    let test_scores = defense.valid_scores(&features_matrix(test), &mut rng)?;
    let accuracy = accuracy_of(&test_scores, &labels, tau);
    let report = evaluate_suite(suite, classifier, defense, tau, attacker, noise, draws, derive_seed(seed, "evaluate/suite"))?;
    let selector = strategy.tag.uses_selector();
    let xa = features_matrix(attacker);
    let attacker_clean = defense.valid_scores(&xa, &mut rng)?;
    let adv = IdealBatch::new(&suite.generators[report.scenario1], xa, noise).realize(&mut rng);
    let attacker_adversarial = defense.valid_scores(&adv, &mut rng)?;
    let valid = test_scores.iter().zip(&labels).filter(|(_, l)| **l == Label::Valid).map(|(s, _)| *s).collect();
    Ok(StrategyOutcome {
        strategy: strategy.clone(),
        threshold: tau.0,
        accuracy,
        tpr_s1: report.scenario1_tpr(),
        tpr_s2: selector.then(|| report.scenario2_tpr()),
        scenario1: report.scenario1,
        scenario2: selector.then_some(report.scenario2),
        scenario2_fallback: selector && report.scenario2_fallback,
        beta: None,
        beta_flagged: false,
        roc: RocScores { valid, attacker_clean, attacker_adversarial },
    })
}

fn rejection_rate(model: &AuthenticatorModel, tau: DecisionThreshold, trials: &[Trial]) -> Result<f64> {
    let s = model.valid_scores(&features_matrix(trials))?;
    Ok(s.iter().filter(|&&v| !tau.accepts(v)).count() as f64 / s.len() as f64)
}

/// Trains and evaluates every configured strategy for one valid user and seed.
pub fn run_user_seed(cfg: &RunConfig, corpus: &Corpus, user: u32, seed: u64) -> Result<UserSeedOutcome> {
    let job = format!("user {user} seed {seed}");
    run_user_seed_inner(cfg, corpus, user, seed).map_err(|e| e.in_job(job))
}

fn run_user_seed_inner(cfg: &RunConfig, corpus: &Corpus, user: u32, seed: u64) -> Result<UserSeedOutcome> {
    let js = derive_seed(cfg.seed, &format!("job/{user}/{seed}"));
    let sub = |label: &str| derive_seed(js, label);
    let noise = cfg.noise_model();
    let exp = &cfg.experiment;
    let draws = cfg.attack.eval_draws;
    let split = make_split(corpus, user, cfg.split.n_attackers, cfg.split.ratios(), sub("split"))?;
    let train = split.labeled(corpus, &split.train);
    let validation = split.labeled(corpus, &split.validation);
    let test = split.labeled(corpus, &split.test);
    let atk_train = split.attacker_trials(corpus, &split.attacker_train);
    let atk_eval = split.attacker_trials(corpus, &split.attacker_eval);

    let auth_cfg = AuthTrainConfig { seed: sub("auth"), ..cfg.authenticator.clone() };
    let (auth, _) = train_authenticator(corpus, &split, &auth_cfg)?;
    let tau = calibrate_threshold(&auth, &train, auth_cfg.threshold)?;
    let clean_rejection = rejection_rate(&auth, tau, &atk_eval)?;
    let attack_cfg = |label: &str| AttackConfig { seed: sub(label), ..cfg.attack.clone() };
    let suite = train_attack_suite(&auth, &atk_train, &noise, &attack_cfg("attack"))?;
    let eval_seed = sub("evaluate");
    let wants = |k: StrategyKind| exp.strategies.contains(&k);

    let mut strategies = Vec::new();
    if wants(StrategyKind::Plain) {
        let s = StrategyUnderTest::new(StrategyKind::Plain, None)?;
        strategies.push(evaluate_strategy(&s, &auth, &auth, &suite, tau, &test, &atk_eval, &noise, draws, eval_seed)?);
    }

    let sel_cfg = |n_e: usize, beta: f64, label: &str| SelectorTrainConfig {
        n_e,
        beta,
        seed: sub(&format!("selector/{n_e}/{label}")),
        ..cfg.selector.clone()
    };
    let bases = features_matrix(&atk_train);
    let source = AdversarialSource { suite: &suite, bases: &bases, noise: &noise };
    for &n_e in &exp.n_e {
        if !(wants(StrategyKind::BasicSelector) || wants(StrategyKind::ImprovedSelector)) {
            break;
        }
        fn pipeline<'a>(t: &'a TrainedSelector, auth: &'a AuthenticatorModel, mode: InferenceMode) -> SelectorPipeline<'a> {
            SelectorPipeline { mode, ..SelectorPipeline::new(t, auth) }
        }
        let basic = train_basic_selector(&auth, &train, &sel_cfg(n_e, 0.0, "basic"))?;
        if wants(StrategyKind::BasicSelector) {
            let s = StrategyUnderTest::new(StrategyKind::BasicSelector, Some(n_e))?;
            let p = pipeline(&basic, &auth, exp.inference);
            strategies.push(evaluate_strategy(&s, &p, &auth, &suite, tau, &test, &atk_eval, &noise, draws, eval_seed)?);
        }
        if wants(StrategyKind::ImprovedSelector) {
            let mut rng = rng_for(js, &format!("beta/{n_e}"));
            let basic_acc = pipeline(&basic, &auth, exp.inference).accuracy(tau, &validation, &mut rng)?;
            let mut trained = Vec::with_capacity(cfg.beta_search.grid.len());
            let mut candidates = Vec::with_capacity(cfg.beta_search.grid.len());
            for &beta in &cfg.beta_search.grid {
                let t = train_improved_selector(&auth, &train, &source, &sel_cfg(n_e, beta, &format!("beta{beta}")))?;
                let p = pipeline(&t, &auth, exp.inference);
                let accuracy = p.accuracy(tau, &validation, &mut rng)?;
                let tpr = adversarial_rejection(&p, tau, &suite, &bases, &noise, &mut rng as &mut dyn RngCore)?;
                candidates.push(BetaCandidate { beta, accuracy, tpr });
                trained.push(t);
            }
            let (beta, flagged) = choose_beta(&candidates, basic_acc, cfg.beta_search.floor_ratio)?;
            let pos = cfg.beta_search.grid.iter().position(|b| *b == beta).expect("chosen beta is in the grid");
            let s = StrategyUnderTest::new(StrategyKind::ImprovedSelector, Some(n_e))?;
            let p = pipeline(&trained[pos], &auth, exp.inference);
            let mut o = evaluate_strategy(&s, &p, &auth, &suite, tau, &test, &atk_eval, &noise, draws, eval_seed)?;
            o.beta = Some(beta);
            o.beta_flagged = flagged;
            strategies.push(o);
        }
    }

    if wants(StrategyKind::AdversarialTraining) {
        let c = AdvTrainingConfig { seed: sub("adv-training"), ..cfg.adv_training.clone() };
        let a_cfg = AuthTrainConfig { seed: sub("adv-training/auth"), ..cfg.authenticator.clone() };
        let (model, _) = adversarial_training(&train, &suite, &atk_train, &noise, &a_cfg, &c)?;
        let t = calibrate_threshold(&model, &train, a_cfg.threshold)?;
        let retrained = train_attack_suite(&model, &atk_train, &noise, &attack_cfg("adv-training/attack"))?;
        let s = StrategyUnderTest::new(StrategyKind::AdversarialTraining, None)?;
        strategies.push(evaluate_strategy(&s, &model, &model, &retrained, t, &test, &atk_eval, &noise, draws, eval_seed)?);
    }
    if wants(StrategyKind::Distillation) {
        let c = DistillationConfig { seed: sub("distillation"), ..cfg.distillation.clone() };
        let d = defensive_distillation(&train, &cfg.authenticator, &c)?;
        let t = calibrate_threshold(&d.student, &train, cfg.authenticator.threshold)?;
        let retrained = train_attack_suite(&d.student, &atk_train, &noise, &attack_cfg("distillation/attack"))?;
        let s = StrategyUnderTest::new(StrategyKind::Distillation, None)?;
        strategies.push(evaluate_strategy(&s, &d.student, &d.student, &retrained, t, &test, &atk_eval, &noise, draws, eval_seed)?);
    }
    Ok(UserSeedOutcome { user, seed, clean_rejection, strategies })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub outcomes: Vec<UserSeedOutcome>,
    pub tables: Vec<ResultsTable>,
    pub comparisons: Vec<ComparisonCell>,
    pub trends: TrendReport,
    pub cache_hits: usize,
    pub computed: usize,
    pub out_dir: PathBuf,
}

/// Everything a cached outcome depends on.
#[derive(Serialize)]
struct JobKey<'a> {
    cfg: &'a RunConfig,
    corpus: &'a str,
    user: u32,
    seed: u64,
}

fn job_key(cfg: &RunConfig, corpus_hash: &str, user: u32, seed: u64) -> String {
    let mut c = cfg.clone();
    c.paths = Default::default();
    c.experiment.valid_users.clear();
    c.experiment.seeds.clear();
    c.experiment.trend_margin = 0.0;
    c.experiment.trend_alpha = 0.0;
    content_hash(&JobKey { cfg: &c, corpus: corpus_hash, user, seed })
}

/// Loads `paths.corpus`, or synthesises the configured corpus into the store.
pub fn resolve_corpus(cfg: &RunConfig, store: &ArtifactStore) -> Result<Corpus> {
    if let Some(p) = &cfg.paths.corpus {
        return load_corpus(p);
    }
    let key = content_hash(&(&cfg.data, cfg.seed));
    let dir = store.root().join("corpus");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("{key}.jsonl"));
    if path.exists() {
        return load_corpus(&path);
    }
    let corpus = synthesize_corpus(
        &cfg.data.pattern(),
        cfg.data.n_subjects,
        cfg.data.trials_per_subject,
        derive_seed(cfg.seed, "corpus"),
    )?;
    save_corpus(&corpus, &path)?;
    Ok(corpus)
}

/// Collects per-(user, seed) outcomes into one table per strategy.
pub fn build_tables(cfg: &RunConfig, outcomes: &[UserSeedOutcome]) -> Result<Vec<ResultsTable>> {
    let mut kinds: Vec<StrategyUnderTest> = Vec::new();
    for o in outcomes {
        for s in &o.strategies {
            if !kinds.contains(&s.strategy) {
                kinds.push(s.strategy.clone());
            }
        }
    }
    kinds.sort_by_key(|k| (k.tag, k.n_e));
    let hash = cfg.hash();
    kinds
        .into_iter()
        .map(|k| {
            let rows = outcomes
                .iter()
                .flat_map(|o| {
                    o.strategies.iter().filter(|s| s.strategy == k).map(|s| ResultRow {
                        user: o.user,
                        seed: o.seed,
                        accuracy: s.accuracy,
                        tpr_s1: s.tpr_s1,
                        tpr_s2: s.tpr_s2,
                    })
                })
                .collect();
            ResultsTable::new(k, rows, hash.clone())
        })
        .collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    jobs: usize,
    means: Vec<(String, &'a super::MeanRow)>,
    scenario2_fallbacks: Vec<(String, usize)>,
    beta_flagged: usize,
    comparisons: Vec<(String, String)>,
    trends: &'a TrendReport,
}

/// Writes tables, the comparison grid, the summary and plots under `dir`.
pub fn write_report(outcomes: &[UserSeedOutcome], tables: &[ResultsTable], cells: &[ComparisonCell], trends: &TrendReport, config_hash: &str, dir: &Path) -> Result<()> {
    for t in tables {
        write(&dir.join("tables").join(format!("{}.tsv", t.strategy.name())), &t.to_tsv())?;
    }
    write(&dir.join("comparison.tsv"), &render_comparison_matrix(cells))?;
    let fallbacks = tables
        .iter()
        .filter(|t| t.strategy.tag.uses_selector())
        .map(|t| {
            let n = outcomes
                .iter()
                .flat_map(|o| &o.strategies)
                .filter(|s| s.strategy == t.strategy && s.scenario2_fallback)
                .count();
            (t.strategy.name(), n)
        })
        .collect();
    let summary = Summary {
        config_hash,
        jobs: outcomes.len(),
        means: tables.iter().map(|t| (t.strategy.name(), &t.mean)).collect(),
        scenario2_fallbacks: fallbacks,
        beta_flagged: outcomes.iter().flat_map(|o| &o.strategies).filter(|s| s.beta_flagged).count(),
        comparisons: cells
            .iter()
            .map(|c| (format!("{} n_e={} vs {}", c.metric.label(), c.n_e, c.against.tag()), c.render()))
            .collect(),
        trends,
    };
    write(&dir.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    plots::write_all(outcomes, tables, &dir.join("plots"))
}

/// Cached outcomes for every configured job, without training anything.
pub fn load_cached_outcomes(cfg: &RunConfig) -> Result<Vec<UserSeedOutcome>> {
    let store = ArtifactStore::open(&cfg.paths.root)?;
    let corpus = resolve_corpus(cfg, &store)?;
    let corpus_hash = content_hash(&corpus.manifest);
    let mut out = Vec::new();
    for &u in &cfg.experiment.valid_users {
        for &s in &cfg.experiment.seeds {
            match store.get("outcome", &job_key(cfg, &corpus_hash, u, s))? {
                Some(o) => out.push(o),
                None => return Err(Error::MissingCheckpoint(format!("no cached outcome for user {u} seed {s}"))),
            }
        }
    }
    Ok(out)
}

/// Trains and evaluates the whole matrix, reusing cached job outcomes, and
/// writes the report under `<root>/report`.
pub fn run_full_experiment(cfg: &RunConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let store = ArtifactStore::open(&cfg.paths.root)?;
    let corpus = resolve_corpus(cfg, &store)?;
    let corpus_hash = content_hash(&corpus.manifest);
    let jobs: Vec<(u32, u64)> = cfg
        .experiment
        .valid_users
        .iter()
        .flat_map(|&u| cfg.experiment.seeds.iter().map(move |&s| (u, s)))
        .collect();
    let keys: Vec<String> = jobs.iter().map(|&(u, s)| job_key(cfg, &corpus_hash, u, s)).collect();
    let cache_hits = keys.iter().filter(|k| store.contains("outcome", k)).count();
    let outcomes = jobs
        .par_iter()
        .zip(keys.par_iter())
        .map(|(&(u, s), key)| store.get_or_compute("outcome", key, || run_user_seed(cfg, &corpus, u, s)))
        .collect::<Result<Vec<UserSeedOutcome>>>()?;
    let tables = build_tables(cfg, &outcomes)?;
    let comparisons = comparison_matrix(&tables, &cfg.experiment.n_e)?;
    let trends = trend_report(&outcomes, cfg.experiment.trend_margin, cfg.experiment.trend_alpha);
    let config_hash = cfg.hash();
    let out_dir = store.root().join("report");
    write_report(&outcomes, &tables, &comparisons, &trends, &config_hash, &out_dir)?;
    Ok(ExperimentReport {
        config_hash,
        outcomes,
        tables,
        comparisons,
        trends,
        cache_hits,
        computed: jobs.len() - cache_hits,
        out_dir,
    })
}
