#![allow(dead_code)]

use mousegate::authenticator::{train_on_trials, AuthTrainConfig, AuthenticatorModel, TrainReport};
use mousegate::data_synth::{make_split, synthesize_corpus, Corpus, DatasetSplit, SplitRatios, TaskPattern, Trial};
use mousegate::physical_noise::NoiseModel;

pub const LENGTH: usize = 16;

/// Small corpus with a trained authenticator for one valid user.
pub struct World {
    pub corpus: Corpus,
    pub split: DatasetSplit,
    pub train: Vec<Trial>,
    pub validation: Vec<Trial>,
    pub test: Vec<Trial>,
    pub attackers: Vec<Trial>,
    pub auth: AuthenticatorModel,
    pub report: TrainReport,
    pub auth_cfg: AuthTrainConfig,
    pub noise: NoiseModel,
}

pub fn auth_cfg(epochs: usize) -> AuthTrainConfig {
    AuthTrainConfig { epochs, learning_rate: 1e-3, ..AuthTrainConfig::default() }
}

pub fn world(seed: u64, epochs: usize) -> World {
    let corpus = synthesize_corpus(&TaskPattern::with_length(LENGTH), 10, 30, seed).unwrap();
    let split = make_split(&corpus, 0, 3, SplitRatios::default(), seed).unwrap();
    let train = split.labeled(&corpus, &split.train);
    let validation = split.labeled(&corpus, &split.validation);
    let test = split.labeled(&corpus, &split.test);
    let attackers = split.attacker_trials(&corpus, &split.attacker_train);
    let cfg = AuthTrainConfig { seed, ..auth_cfg(epochs) };
    let (auth, report) = train_on_trials(&train, None, &cfg).unwrap();
    World { corpus, split, train, validation, test, attackers, auth, report, auth_cfg: cfg, noise: NoiseModel::new(LENGTH) }
}

/// Overrides for a full experiment that finishes in seconds.
pub fn tiny_overrides(root: &std::path::Path) -> Vec<String> {
    [
        format!("paths.root=\"{}\"", root.display()),
        "data.n_subjects=8".into(),
        "data.trials_per_subject=12".into(),
        "data.movement_length=8".into(),
        "authenticator.epochs=4".into(),
        "authenticator.learning_rate=1e-3".into(),
        "attack.steps=3".into(),
        "attack.hidden=8".into(),
        "attack.eval_draws=1".into(),
        "selector.steps=4".into(),
        "selector.generative_hidden=8".into(),
        "beta_search.grid=[1.0]".into(),
        "experiment.valid_users=[0,1]".into(),
        "experiment.seeds=[0,1]".into(),
        "experiment.n_e=[2,3]".into(),
    ]
    .into()
}
