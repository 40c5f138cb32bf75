use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use mousegate::adversary::{train_attack_suite, AttackConfig, AttackSuite};
use mousegate::authenticator::{
    calibrate_threshold, features_matrix, load_checkpoint, save_checkpoint, train_authenticator, AuthManifest,
    AuthTrainConfig, AuthenticatorModel,
};
use mousegate::baselines::{adversarial_training, defensive_distillation, AdvTrainingConfig, DistillationConfig};
use mousegate::config::{parse_config, RunConfig};
use mousegate::data_synth::{load_corpus, make_split, save_corpus, synthesize_corpus, Corpus, DatasetSplit};
use mousegate::evalkit::fixtures::{check_printed_comparisons, load_paper_fixtures};
use mousegate::evalkit::{
    build_tables, comparison_matrix, load_cached_outcomes, ordering_symbol, run_full_experiment, trend_report,
    write_report,
};
use mousegate::rng::derive_seed;
use mousegate::selector::{train_basic_selector, train_improved_selector, AdversarialSource, SelectorTrainConfig};
use mousegate::store::{content_hash, ArtifactStore};
use mousegate::{Error, Result};

#[derive(Parser)]
#[command(name = "mousegate", version, about = "Feature-selector defense for mouse-dynamics authentication")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set attack.steps=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct JobArgs {
    /// Corpus file; synthesised from the config when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    user: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Basic,
    Improved,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    AdvTraining,
    Distillation,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise a corpus file.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one authenticator and write a checkpoint pair.
    TrainAuth {
        #[command(flatten)]
        job: JobArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the per-movement attack suite against a checkpoint.
    TrainAttacks {
        #[command(flatten)]
        job: JobArgs,
        /// Checkpoint directory written by `train-auth`.
        #[arg(long)]
        auth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train feature selectors for each requested selection size.
    TrainSelector {
        #[command(flatten)]
        job: JobArgs,
        #[arg(long)]
        auth: PathBuf,
        /// Attack suite file; required for the improved variant.
        #[arg(long)]
        attacks: Option<PathBuf>,
        /// Selection sizes, e.g. `2..5` or `2,4`.
        #[arg(long, default_value = "2..5")]
        ne: String,
        #[arg(long, value_enum, default_value = "improved")]
        variant: Variant,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a comparison defence.
    TrainBaselines {
        #[command(flatten)]
        job: JobArgs,
        #[arg(long, value_enum)]
        kind: Baseline,
        /// Attack suite file; required for adversarial training.
        #[arg(long)]
        attacks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run (or resume) the full experiment matrix and write the report.
    Evaluate,
    /// Rebuild the report from cached job outcomes without training.
    Report,
    /// Validate the statistics pipeline on the embedded published results.
    ReproTables,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::InvalidInput(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, serde_json::to_vec(value)?).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|_| Error::MissingCheckpoint(path.display().to_string()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn corpus_for(cfg: &RunConfig, job: &JobArgs) -> Result<Corpus> {
    match job.corpus.as_ref().or(cfg.paths.corpus.as_ref()) {
        Some(p) => load_corpus(p),
        None => mousegate::evalkit::resolve_corpus(cfg, &ArtifactStore::open(&cfg.paths.root)?),
    }
}

/// Split and job seed exactly as `evaluate` derives them.
fn split_for(cfg: &RunConfig, corpus: &Corpus, job: &JobArgs) -> Result<(DatasetSplit, u64)> {
    let js = derive_seed(cfg.seed, &format!("job/{}/{}", job.user, job.seed));
    let split = make_split(corpus, job.user, cfg.split.n_attackers, cfg.split.ratios(), derive_seed(js, "split"))?;
    Ok((split, js))
}

fn parse_ne(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidInput(format!("cannot parse selection sizes {spec:?}"));
    if let Some((a, b)) = spec.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        return Ok((a..=b).collect());
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn save_auth(dir: &Path, model: &AuthenticatorModel, cfg: &AuthTrainConfig, tau: f64, data: &str, kind: &str) -> Result<()> {
    let manifest = AuthManifest {
        spec: model.net.spec.clone(),
        input_scale: model.input_scale,
        n_movements: model.n_movements,
        movement_length: model.movement_length,
        config: cfg.clone(),
        data_hash: data.to_string(),
        threshold: mousegate::authenticator::DecisionThreshold(tau),
        kind: kind.to_string(),
    };
    save_checkpoint(dir, "auth", model, &manifest)
}

fn repro_tables() -> Result<bool> {
    let f = load_paper_fixtures();
    let mut ok = true;
    println!("means (printed vs recomputed, tolerance 0.001)");
    for (name, printed, got) in f.all_means() {
        let pass = (printed - got).abs() <= 0.001 + 1e-12;
        ok &= pass;
        println!("  {} {name:<32} {printed:.3} {got:.4}", if pass { "PASS" } else { "FAIL" });
    }
    println!("comparison cells (direction, p within factor 1.5)");
    for c in check_printed_comparisons(&f)? {
        let pass = c.direction_matches() && c.p_factor() <= 1.5;
        ok &= pass;
        println!(
            "  {} {:<40} n_e={} vs {:<13} {:.3}{}{:.3} p={:.3e} printed p={:.3e} factor {:.2}",
            if pass { "PASS" } else { "FAIL" },
            c.cell.metric.label(),
            c.cell.n_e,
            c.cell.against.tag(),
            c.improved_mean,
            ordering_symbol(c.direction),
            c.other_mean,
            c.p,
            c.cell.p,
            c.p_factor()
        );
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    if let Command::ReproTables = cli.command {
        return repro_tables();
    }
    let cfg = parse_config(cli.common.config.as_deref(), &cli.common.set)?;
    let noise = cfg.noise_model();
    match cli.command {
        Command::Synth { out } => {
            let c = synthesize_corpus(
                &cfg.data.pattern(),
                cfg.data.n_subjects,
                cfg.data.trials_per_subject,
                derive_seed(cfg.seed, "corpus"),
            )?;
            save_corpus(&c, &out)?;
            println!("wrote {} trials to {}", c.trials.len(), out.display());
        }
        Command::TrainAuth { job, out } => {
            let corpus = corpus_for(&cfg, &job)?;
            let (split, js) = split_for(&cfg, &corpus, &job)?;
            let ac = AuthTrainConfig { seed: derive_seed(js, "auth"), ..cfg.authenticator.clone() };
            let (model, report) = train_authenticator(&corpus, &split, &ac)?;
            let tau = calibrate_threshold(&model, &split.labeled(&corpus, &split.train), ac.threshold)?;
            save_auth(&out, &model, &ac, tau.0, &content_hash(&corpus.manifest), "plain")?;
            println!("final loss {:.4}; checkpoint in {}", report.losses.last().copied().unwrap_or(f64::NAN), out.display());
        }
        Command::TrainAttacks { job, auth, out } => {
            let corpus = corpus_for(&cfg, &job)?;
            let (split, js) = split_for(&cfg, &corpus, &job)?;
            let (model, _) = load_checkpoint(&auth, "auth")?;
            let ac = AttackConfig { seed: derive_seed(js, "attack"), ..cfg.attack.clone() };
            let suite = train_attack_suite(&model, &split.attacker_trials(&corpus, &split.attacker_train), &noise, &ac)?;
            write_json(&out, &suite)?;
            println!("wrote {} generators to {}", suite.len(), out.display());
        }
        Command::TrainSelector { job, auth, attacks, ne, variant, beta, out } => {
            let corpus = corpus_for(&cfg, &job)?;
            let (split, js) = split_for(&cfg, &corpus, &job)?;
            let (model, _) = load_checkpoint(&auth, "auth")?;
            let train = split.labeled(&corpus, &split.train);
            let suite: Option<AttackSuite> = attacks.as_deref().map(read_json).transpose()?;
            let atk = split.attacker_trials(&corpus, &split.attacker_train);
            let bases = features_matrix(&atk);
            for n_e in parse_ne(&ne)? {
                let (label, trained) = match variant {
                    Variant::Basic => {
                        let c = SelectorTrainConfig { n_e, seed: derive_seed(js, &format!("selector/{n_e}/basic")), ..cfg.selector.clone() };
                        ("basic", train_basic_selector(&model, &train, &c)?)
                    }
                    Variant::Improved => {
                        let suite = suite.as_ref().ok_or_else(|| Error::MissingCheckpoint("--attacks is required for improved selectors".into()))?;
                        let b = beta.unwrap_or(1.0);
                        let c = SelectorTrainConfig { n_e, beta: b, seed: derive_seed(js, &format!("selector/{n_e}/beta{b}")), ..cfg.selector.clone() };
                        let src = AdversarialSource { suite, bases: &bases, noise: &noise };
                        ("improved", train_improved_selector(&model, &train, &src, &c)?)
                    }
                };
                let path = out.join(format!("{label}_ne{n_e}.json"));
                write_json(&path, &trained)?;
                println!("wrote {}", path.display());
            }
        }
        Command::TrainBaselines { job, kind, attacks, out } => {
            let corpus = corpus_for(&cfg, &job)?;
            let (split, js) = split_for(&cfg, &corpus, &job)?;
            let train = split.labeled(&corpus, &split.train);
            let data = content_hash(&corpus.manifest);
            match kind {
                Baseline::AdvTraining => {
                    let path = attacks.ok_or_else(|| Error::MissingCheckpoint("--attacks is required for adversarial training".into()))?;
                    let suite: AttackSuite = read_json(&path)?;
                    let c = AdvTrainingConfig { seed: derive_seed(js, "adv-training"), ..cfg.adv_training.clone() };
                    let ac = AuthTrainConfig { seed: derive_seed(js, "adv-training/auth"), ..cfg.authenticator.clone() };
                    let atk = split.attacker_trials(&corpus, &split.attacker_train);
                    let (m, _) = adversarial_training(&train, &suite, &atk, &noise, &ac, &c)?;
                    let tau = calibrate_threshold(&m, &train, ac.threshold)?;
                    save_auth(&out, &m, &ac, tau.0, &data, "adv_training")?;
                }
                Baseline::Distillation => {
                    let c = DistillationConfig { seed: derive_seed(js, "distillation"), ..cfg.distillation.clone() };
                    let d = defensive_distillation(&train, &cfg.authenticator, &c)?;
                    let tau = calibrate_threshold(&d.student, &train, cfg.authenticator.threshold)?;
                    save_auth(&out, &d.student, &cfg.authenticator, tau.0, &data, "distillation")?;
                }
            }
            println!("checkpoint in {}", out.display());
        }
        Command::Evaluate => {
            let r = run_full_experiment(&cfg)?;
            println!("{} jobs ({} cached, {} computed); report in {}", r.outcomes.len(), r.cache_hits, r.computed, r.out_dir.display());
            for t in &r.tables {
                println!("  {:<24} acc {:.3}  tpr_s1 {:.3}  tpr_s2 {}", t.strategy.name(), t.mean.accuracy, t.mean.tpr_s1, t.mean.tpr_s2.map_or("-".into(), |v| format!("{v:.3}")));
            }
            for c in &r.trends.checks {
                println!("  trend {} {} (p={:.3})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.test.p);
            }
        }
        Command::Report => {
            let outcomes = load_cached_outcomes(&cfg)?;
            let tables = build_tables(&cfg, &outcomes)?;
            let cells = comparison_matrix(&tables, &cfg.experiment.n_e)?;
            let trends = trend_report(&outcomes, cfg.experiment.trend_margin, cfg.experiment.trend_alpha);
            let dir = cfg.paths.root.join("report");
            write_report(&outcomes, &tables, &cells, &trends, &cfg.hash(), &dir)?;
            println!("report in {}", dir.display());
        }
        Command::ReproTables => unreachable!(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(2)
        }
    }
}
