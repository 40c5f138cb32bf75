use std::ffi::CString;
use std::ptr;

use mousegate::authenticator::{train_on_trials, AuthManifest, AuthTrainConfig, DecisionThreshold, save_checkpoint};
use mousegate::data_synth::{make_split, save_corpus, synthesize_corpus, SplitRatios, TaskPattern};
use mousegate_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let mut n = 0usize;
    let s = unsafe { mg_last_error_message(buf.as_mut_ptr(), buf.len(), &mut n) };
    assert_eq!(s, MgStatus::Ok);
    let bytes: Vec<u8> = buf.iter().take_while(|c| **c != 0).map(|c| *c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn coefficient_matches_library() {
    let mut c = 0.0;
    assert_eq!(unsafe { mg_mean_distance_coefficient(160, &mut c) }, MgStatus::Ok);
    assert!((c - 6.777).abs() < 0.005);
    assert_eq!(unsafe { mg_mean_distance_coefficient(0, &mut c) }, MgStatus::InvalidInput);
    assert!(last_error().contains("movement length"));
    assert_eq!(unsafe { mg_mean_distance_coefficient(3, ptr::null_mut()) }, MgStatus::NullPointer);
}

#[test]
fn sigma_of_constant_speed_movement() {
    let vx = vec![60.0; 160];
    let vy = vec![80.0; 160];
    let mut s = 0.0;
    assert_eq!(unsafe { mg_sigma_for_movement(vx.as_ptr(), vy.as_ptr(), 160, &mut s) }, MgStatus::Ok);
    assert!((s - 1.844).abs() < 1e-3, "{s}");
    let zero = vec![0.0; 160];
    assert_eq!(unsafe { mg_sigma_for_movement(zero.as_ptr(), zero.as_ptr(), 160, &mut s) }, MgStatus::Degenerate);
    assert_eq!(unsafe { mg_sigma_for_movement(ptr::null(), vy.as_ptr(), 160, &mut s) }, MgStatus::NullPointer);
}

#[test]
fn t_test_through_abi() {
    let a = [0.9, 0.8, 0.95, 0.7, 0.85];
    let b = [0.5, 0.6, 0.4, 0.55, 0.3];
    let (mut t, mut p) = (0.0, 0.0);
    assert_eq!(unsafe { mg_paired_t_test(a.as_ptr(), b.as_ptr(), 5, &mut t, &mut p) }, MgStatus::Ok);
    let r = mousegate::evalkit::paired_t_test_one_tailed(&a, &b).unwrap();
    assert_eq!((t, p), (r.t, r.p));
    assert_eq!(unsafe { mg_paired_t_test(a.as_ptr(), b.as_ptr(), 1, &mut t, &mut p) }, MgStatus::InvalidInput);
}

#[test]
fn corpus_and_authenticator_handles() {
    let dir = tempfile::tempdir().unwrap();
    let pattern = TaskPattern::with_length(16);
    let corpus = synthesize_corpus(&pattern, 6, 12, 3).unwrap();
    let path = dir.path().join("corpus.jsonl");
    save_corpus(&corpus, &path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut h: *mut MgCorpus = ptr::null_mut();
    assert_eq!(unsafe { mg_corpus_load(cpath.as_ptr(), &mut h) }, MgStatus::Ok);
    let (mut n, mut width) = (0usize, 0usize);
    unsafe {
        assert_eq!(mg_corpus_len(h, &mut n), MgStatus::Ok);
        assert_eq!(mg_corpus_feature_len(h, &mut width), MgStatus::Ok);
    }
    assert_eq!(n, corpus.trials.len());
    assert_eq!(width, pattern.feature_len());
    let mut buf = vec![0.0; width];
    let mut subject = u32::MAX;
    unsafe {
        assert_eq!(mg_corpus_trial(h, 5, buf.as_mut_ptr(), width, &mut subject), MgStatus::Ok);
        assert_eq!(mg_corpus_trial(h, n, buf.as_mut_ptr(), width, &mut subject), MgStatus::OutOfRange);
        assert_eq!(mg_corpus_trial(h, 0, buf.as_mut_ptr(), width - 1, &mut subject), MgStatus::ShapeMismatch);
    }
    let mut again = vec![0.0; width];
    unsafe { mg_corpus_trial(h, 5, again.as_mut_ptr(), width, &mut subject) };
    assert_eq!(again, corpus.trials[5].features());
    assert_eq!(subject, corpus.trials[5].subject_id);

    let split = make_split(&corpus, 0, 2, SplitRatios::default(), 1).unwrap();
    let cfg = AuthTrainConfig { epochs: 2, ..Default::default() };
    let (model, _) = train_on_trials(&split.labeled(&corpus, &split.train), None, &cfg).unwrap();
    let manifest = AuthManifest {
        spec: model.net.spec.clone(),
        input_scale: model.input_scale,
        n_movements: model.n_movements,
        movement_length: model.movement_length,
        config: cfg,
        data_hash: "test".into(),
        threshold: DecisionThreshold::DEFAULT,
        kind: "plain".into(),
    };
    save_checkpoint(dir.path(), "auth", &model, &manifest).unwrap();

    let cdir = CString::new(dir.path().to_str().unwrap()).unwrap();
    let stem = CString::new("auth").unwrap();
    let mut a: *mut MgAuthenticator = ptr::null_mut();
    assert_eq!(unsafe { mg_authenticator_load(cdir.as_ptr(), stem.as_ptr(), &mut a) }, MgStatus::Ok);
    let rows = 3;
    let mut x = Vec::new();
    for i in 0..rows {
        x.extend(corpus.trials[i].features());
    }
    let mut scores = vec![0.0; rows];
    let mut accepted = vec![9u8; rows];
    unsafe {
        assert_eq!(mg_authenticator_score(a, x.as_ptr(), rows, scores.as_mut_ptr(), accepted.as_mut_ptr()), MgStatus::Ok);
    }
    for i in 0..rows {
        let want = model.score(&corpus.trials[i]).unwrap();
        assert!((scores[i] - want).abs() < 1e-12);
        assert_eq!(accepted[i], u8::from(want >= 0.5));
    }

    let missing = CString::new("nope").unwrap();
    let mut b: *mut MgAuthenticator = ptr::null_mut();
    let s = unsafe { mg_authenticator_load(cdir.as_ptr(), missing.as_ptr(), &mut b) };
    assert_ne!(s, MgStatus::Ok);
    assert!(b.is_null());
    assert!(!last_error().is_empty());

    unsafe {
        mg_authenticator_free(a);
        mg_corpus_free(h);
        mg_corpus_free(ptr::null_mut());
    }
}

#[test]
fn missing_corpus_reports_io() {
    let p = CString::new("/nonexistent/corpus.jsonl").unwrap();
    let mut h: *mut MgCorpus = ptr::null_mut();
    assert_eq!(unsafe { mg_corpus_load(p.as_ptr(), &mut h) }, MgStatus::Io);
    assert!(h.is_null());
}
