//! Run configuration: TOML file, `MOUSEGATE__` environment overrides and
//! `key.path=value` flag overrides, in increasing precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::AttackConfig;
use crate::authenticator::AuthTrainConfig;
use crate::baselines::{AdvTrainingConfig, DistillationConfig};
use crate::data_synth::{SplitRatios, TaskPattern};
use crate::error::{Error, Result};
use crate::evalkit::StrategyKind;
use crate::physical_noise::{NoiseModel, SpeedMeasure, TRACKING_RATIO};
use crate::selector::{InferenceMode, SelectorTrainConfig};
use crate::store::content_hash;

pub const ENV_PREFIX: &str = "MOUSEGATE__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Artifact store and report root.
    pub root: PathBuf,
    /// Existing corpus file; synthesised into the store when absent.
    pub corpus: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { root: PathBuf::from("runs"), corpus: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    pub movement_length: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n_subjects: 21, trials_per_subject: 66, movement_length: 160 }
    }
}

impl DataConfig {
    pub fn pattern(&self) -> TaskPattern {
        TaskPattern::with_length(self.movement_length)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub n_attackers: usize,
    pub train: f64,
    pub validation: f64,
    pub balanced_test: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let r = SplitRatios::default();
        Self { n_attackers: 3, train: r.train, validation: r.validation, balanced_test: r.balanced_test }
    }
}

impl SplitConfig {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios { train: self.train, validation: self.validation, balanced_test: self.balanced_test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub tracking_ratio: f64,
    pub speed_measure: SpeedMeasure,
    pub skill_multiplier: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { tracking_ratio: TRACKING_RATIO, speed_measure: SpeedMeasure::Magnitude, skill_multiplier: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaSearch {
    pub grid: Vec<f64>,
    /// Minimum composed accuracy relative to the basic selector.
    pub floor_ratio: f64,
}

impl Default for BetaSearch {
    fn default() -> Self {
        Self { grid: vec![0.1, 0.3, 1.0, 3.0, 10.0], floor_ratio: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub valid_users: Vec<u32>,
    pub n_e: Vec<usize>,
    pub strategies: Vec<StrategyKind>,
    pub seeds: Vec<u64>,
    pub inference: InferenceMode,
    /// Required margin of clean rejection over undefended TPR in the trend suite.
    pub trend_margin: f64,
    pub trend_alpha: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            valid_users: (0..5).collect(),
            n_e: vec![2, 3, 4, 5],
            strategies: StrategyKind::ALL.to_vec(),
            seeds: (0..5).collect(),
            inference: InferenceMode::RawBottleneck,
            trend_margin: 0.3,
            trend_alpha: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub noise: NoiseConfig,
    pub authenticator: AuthTrainConfig,
    pub attack: AttackConfig,
    pub selector: SelectorTrainConfig,
    pub beta_search: BetaSearch,
    pub adv_training: AdvTrainingConfig,
    pub distillation: DistillationConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: PathsConfig::default(),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            noise: NoiseConfig::default(),
            authenticator: AuthTrainConfig::default(),
            attack: AttackConfig::default(),
            selector: SelectorTrainConfig::default(),
            beta_search: BetaSearch::default(),
            adv_training: AdvTrainingConfig::default(),
            distillation: DistillationConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel {
            movement_length: self.data.movement_length,
            tracking_ratio: self.noise.tracking_ratio,
            speed_measure: self.noise.speed_measure,
            skill_multiplier: self.noise.skill_multiplier,
        }
    }

    /// Hash of everything except filesystem paths.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        content_hash(&c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config { key: String::new(), msg: e.to_string() })
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |key: &str, msg: String| Error::Config { key: key.into(), msg };
        self.authenticator.validate().map_err(|e| cfg_err("authenticator", e.to_string()))?;
        let n_mov = self.data.pattern().n_movements();
        for &n_e in &self.experiment.n_e {
            SelectorTrainConfig { n_e, ..self.selector.clone() }
                .validate(n_mov)
                .map_err(|e| cfg_err("experiment.n_e", e.to_string()))?;
        }
        if self.experiment.seeds.is_empty() {
            return Err(cfg_err("experiment.seeds", "at least one seed is required".into()));
        }
        if self.experiment.valid_users.is_empty() {
            return Err(cfg_err("experiment.valid_users", "at least one valid user is required".into()));
        }
        if self.beta_search.grid.is_empty() {
            return Err(cfg_err("beta_search.grid", "at least one candidate is required".into()));
        }
        Ok(())
    }
}

/// Parses `text` after applying `overrides` (`a.b.c=value`, later wins).
/// `source` names the input in error messages.
pub fn parse_config_str(text: &str, overrides: &[String], source: &str) -> Result<RunConfig> {
    let mut root: toml::Table =
        text.parse().map_err(|e: toml::de::Error| Error::Config { key: source.into(), msg: e.to_string() })?;
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let de = toml::Value::Table(root);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        key: e.path().to_string(),
        msg: e.into_inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads the file (or starts empty), then applies environment overrides and
/// then `flag_overrides`.
pub fn parse_config(path: Option<&Path>, flag_overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let mut overrides = env_overrides(std::env::vars());
    overrides.extend_from_slice(flag_overrides);
    let source = path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string());
    parse_config_str(&text, &overrides, &source)
}

/// `MOUSEGATE__AUTHENTICATOR__EPOCHS=5` becomes `authenticator.epochs=5`.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<String> {
    let mut out: Vec<String> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            let key = rest.split("__").map(str::to_ascii_lowercase).collect::<Vec<_>>().join(".");
            Some(format!("{key}={v}"))
        })
        .collect();
    out.sort();
    out
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config { key: spec.into(), msg: "override must look like key.path=value".into() })?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config { key: key.into(), msg: "empty key segment".into() });
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config { key: key.into(), msg: format!("{part} is not a table") })?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = parse_config_str("", &[], "t").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.data.movement_length, 160);
        assert_eq!(c.data.pattern().n_movements(), 10);
        assert_eq!(c.distillation.temperature, 10.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_config_str("[authenticator]\nlrn_rate = 0.1\n", &[], "t").unwrap_err();
        assert!(e.to_string().contains("lrn_rate"), "{e}");
        let e = parse_config_str("[attack]\nsteps = \"many\"\n", &[], "t").unwrap_err();
        assert!(e.to_string().contains("attack.steps"), "{e}");
    }

    #[test]
    fn overrides_win_and_round_trip() {
        let c = parse_config_str("[attack]\nsteps = 5\n", &["attack.steps=7".into(), "seed=3".into()], "t").unwrap();
        assert_eq!((c.attack.steps, c.seed), (7, 3));
        let back = parse_config_str(&c.to_toml().unwrap(), &[], "t").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn env_keys_map_to_paths() {
        let o = env_overrides([("MOUSEGATE__ATTACK__EVAL_DRAWS".to_string(), "3".to_string()), ("PATH".into(), "x".into())]);
        assert_eq!(o, vec!["attack.eval_draws=3".to_string()]);
    }
}
