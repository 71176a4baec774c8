//! End-to-end runs of the library on synthetic archives.

use mhdyn::corpus::{
    apply_annotations, build_control, collect_history, filter_users, select_diagnosed_candidates, synth_corpus,
    FilterConfig, Group, SynthConfig, UserTimeline, DEFAULT_HISTORY_CAP, DEFAULT_PATTERNS,
};
use mhdyn::eval::{confusion, metrics};
use mhdyn::features::build_vocab;
use mhdyn::models::{load_model_for, save_model, Family, Model, TrainConfig};
use mhdyn::sampling::{build_samples, read_samples, split, write_samples, Label, Representation, SplitConfig};

fn timelines(cfg: &SynthConfig) -> Vec<UserTimeline> {
    let corpus = synth_corpus(cfg).unwrap();
    let (range, seed_window) = cfg.validate().unwrap();
    let patterns: Vec<String> = DEFAULT_PATTERNS.iter().map(|s| s.to_string()).collect();
    let candidates = select_diagnosed_candidates(&corpus.store, &patterns, seed_window, &cfg.country).unwrap();
    let diagnosed = apply_annotations(&candidates, &corpus.truth.annotations()).unwrap();
    assert_eq!(diagnosed, corpus.truth.diagnosed);
    let control = build_control(&corpus.store, seed_window, &cfg.country, &diagnosed, 100_000).unwrap();
    assert!(control.is_disjoint(&diagnosed));
    let mut all = collect_history(&corpus.store, &diagnosed, Group::Diagnosed, range, DEFAULT_HISTORY_CAP);
    all.extend(collect_history(&corpus.store, &control, Group::Control, range, DEFAULT_HISTORY_CAP));
    filter_users(all, &FilterConfig::new("en"))
}

#[test]
fn decoys_never_reach_the_diagnosed_group() {
    let cfg = SynthConfig { n_diagnosed_users: 15, n_control_users: 150, decoy_users: 10, seed: 3, ..Default::default() };
    let truth = synth_corpus(&cfg).unwrap().truth;
    let kept = timelines(&cfg);
    for t in kept.iter().filter(|t| t.group == Group::Diagnosed) {
        assert!(!truth.decoys.contains(&t.user_id));
    }
    assert_eq!(kept.iter().filter(|t| t.group == Group::Diagnosed).count(), 15);
}

#[test]
fn pooled_embedding_model_learns_a_clean_signal() {
    let cfg = SynthConfig {
        n_diagnosed_users: 30,
        n_control_users: 120,
        signal_rate: 1.0,
        control_signal_rate: 0.0,
        seed: 11,
        ..Default::default()
    };
    let samples = build_samples(&timelines(&cfg), Representation::UserDay).unwrap();
    let (train, validation) = split(&samples, &SplitConfig { seed: 11, ..Default::default() }).unwrap();
    let vocab = build_vocab(&train, 1).unwrap();
    let tc = TrainConfig { epochs: 5, batch_size: 32, seed: 11, ..Default::default() };
    let model = Model::train(Family::Avepl, &train, &vocab, &tc).unwrap();
    let predicted: Vec<Label> = validation.iter().map(|s| model.predict_tokens(&s.tokens, &vocab).unwrap().label).collect();
    let gold: Vec<Label> = validation.iter().map(|s| s.label).collect();
    let report = metrics(&confusion(&predicted, &gold).unwrap());
    assert!(report.macro_f1 >= 0.95, "macro F1 {}", report.macro_f1);
}

#[test]
fn samples_and_models_survive_a_disk_round_trip() {
    let cfg = SynthConfig { n_diagnosed_users: 10, n_control_users: 60, seed: 5, ..Default::default() };
    let samples = build_samples(&timelines(&cfg), Representation::UserWeek).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("samples.ndjson");
    write_samples(&samples, &path).unwrap();
    assert_eq!(read_samples(&path).unwrap(), samples);

    let vocab = build_vocab(&samples, 1).unwrap();
    let model = Model::train(Family::Svm, &samples, &vocab, &TrainConfig { epochs: 2, batch_size: 50, ..Default::default() }).unwrap();
    let model_path = dir.path().join("model.json");
    save_model(&model, &model_path).unwrap();
    let loaded = load_model_for(&model_path, &vocab).unwrap();
    for s in &samples {
        assert_eq!(model.predict_tokens(&s.tokens, &vocab).unwrap(), loaded.predict_tokens(&s.tokens, &vocab).unwrap());
    }
}
