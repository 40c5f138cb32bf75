use std::time::Instant;

use mousegate::config::{env_overrides, parse_config, parse_config_str, RunConfig};
use mousegate::rng::derive_seed;
use mousegate::store::{content_hash, ArtifactStore};
use mousegate::Error;
use serde::{Deserialize, Serialize};

#[test]
fn file_values_are_loaded_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "seed = 4\n[authenticator]\nepochs = 12\nlearning_rate = 0.002\n").unwrap();
    let c = parse_config(Some(&path), &["authenticator.epochs=3".into()]).unwrap();
    assert_eq!(c.seed, 4);
    assert_eq!(c.authenticator.epochs, 3);
    assert_eq!(c.authenticator.learning_rate, 0.002);
    let dumped = c.to_toml().unwrap();
    assert!(dumped.contains("epochs = 3"), "{dumped}");
}

#[test]
fn missing_file_and_bad_values_carry_context() {
    let e = parse_config(Some(std::path::Path::new("/nonexistent/run.toml")), &[]).unwrap_err();
    assert!(matches!(e, Error::Io { .. }), "{e}");
    let e = parse_config_str("", &["experiment.n_e=[11]".into()], "t").unwrap_err();
    assert!(e.to_string().contains("experiment.n_e"), "{e}");
    let e = parse_config_str("[selector]\nsteps = -1\n", &[], "t").unwrap_err();
    assert!(e.to_string().contains("selector.steps"), "{e}");
    let e = parse_config_str("", &["novalue".into()], "t").unwrap_err();
    assert!(matches!(e, Error::Config { .. }));
}

#[test]
fn env_overrides_sit_between_file_and_flags() {
    let env = env_overrides([
        ("MOUSEGATE__SEED".to_string(), "9".to_string()),
        ("MOUSEGATE__ATTACK__STEPS".to_string(), "11".to_string()),
    ]);
    let mut all = env.clone();
    all.push("attack.steps=12".into());
    let c = parse_config_str("seed = 1\n[attack]\nsteps = 10\n", &all, "t").unwrap();
    assert_eq!((c.seed, c.attack.steps), (9, 12));
}

#[test]
fn hash_is_stable_and_ignores_paths() {
    let a = RunConfig::default();
    let mut b = a.clone();
    b.paths.root = "elsewhere".into();
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash(), RunConfig::default().hash());
    b.seed = 1;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn derived_seeds_are_stable_and_distinct() {
    assert_eq!(derive_seed(3, "job/0/1"), derive_seed(3, "job/0/1"));
    assert_ne!(derive_seed(3, "job/0/1"), derive_seed(3, "job/1/0"));
    assert_ne!(derive_seed(3, "job/0/1"), derive_seed(4, "job/0/1"));
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Small {
    id: u32,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct Key {
    seed: u64,
    name: &'static str,
}

#[test]
fn store_round_trip_and_addressing() {
    let dir = tempfile::tempdir().unwrap();
    let store = ArtifactStore::open(dir.path()).unwrap();
    let k1 = content_hash(&Key { seed: 1, name: "a" });
    let k2 = content_hash(&Key { seed: 2, name: "a" });
    assert_ne!(k1, k2);
    let v = Small { id: 1, values: vec![0.1, 1.0 / 3.0] };
    store.put("small", &k1, &v).unwrap();
    let bytes = std::fs::read(store.path("small", &k1)).unwrap();
    store.put("small", &k1, &v).unwrap();
    assert_eq!(std::fs::read(store.path("small", &k1)).unwrap(), bytes);
    assert_eq!(store.get::<Small>("small", &k1).unwrap(), Some(v));
    assert_eq!(store.get::<Small>("small", &k2).unwrap(), None);
    std::fs::write(store.path("small", &k2), b"{not json").unwrap();
    assert!(matches!(store.get::<Small>("small", &k2), Err(Error::Store(_))));
}

#[test]
fn thousand_artifacts_under_ten_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let store = ArtifactStore::open(dir.path()).unwrap();
    let t0 = Instant::now();
    let keys: Vec<String> = (0..1000u32).map(|i| content_hash(&i)).collect();
    for (i, k) in keys.iter().enumerate() {
        store.put("bulk", k, &Small { id: i as u32, values: vec![i as f64; 8] }).unwrap();
    }
    for (i, k) in keys.iter().enumerate() {
        assert_eq!(store.get::<Small>("bulk", k).unwrap().unwrap().id, i as u32);
    }
    let took = t0.elapsed();
    assert!(took.as_secs_f64() < 10.0, "{took:?}");
}
