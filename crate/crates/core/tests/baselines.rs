//! INIT and MULT baselines.

mod common;

use std::sync::Arc;

use common::{quick_train, random_table, small_config, snapshot};
use nerxfer::autograd::Tensor;
use nerxfer::base_model::{train_source, SourceModel};
use nerxfer::baselines::{
    init_model, init_transfer, mult_init_train, mult_train, run_mult, Domain, InitMode, JointModel, MultConfig,
};
use nerxfer::embeddings::EmbeddingMatrix;
use nerxfer::pipeline::{Dataset, SequenceExample};
use nerxfer::synthetic::{bundled_task, SyntheticTask};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fixture {
    task: SyntheticTask,
    shared: Arc<EmbeddingMatrix>,
    source: SourceModel,
}

fn fixture() -> Fixture {
    let task = bundled_task();
    let shared = Arc::new(task.shared.clone());
    let data = Dataset::new(task.source.train.clone(), Vec::new(), Vec::new());
    let cfg = small_config(data.label_set.clone(), task.config.dim);
    let (source, _) = train_source(&data, shared.clone(), &cfg, &quick_train(2, 4)).unwrap();
    Fixture { task, shared, source }
}

fn target(f: &Fixture) -> &[SequenceExample] {
    &f.task.target.train
}

fn crf_tensor(name: &str) -> bool {
    name.starts_with("crf")
}

#[test]
fn frozen_init_changes_only_the_output_layer() {
    let f = fixture();
    let (start, _) = init_model(&f.source, f.shared.clone(), &f.task.target.label_set, 7).unwrap();
    let out = init_transfer(
        &f.source,
        f.shared.clone(),
        &f.task.target.label_set,
        target(&f),
        &[],
        InitMode::Frozen,
        &quick_train(2, 7),
    )
    .unwrap();
    let (before, after) = (snapshot(&start.store), snapshot(&out.model.store));
    let mut changed = 0;
    for (name, value) in &before {
        if crf_tensor(name) {
            changed += usize::from(&after[name] != value);
        } else {
            assert_eq!(&after[name], value, "{name} moved");
        }
    }
    assert!(changed > 0);
    assert!(!out.heterogeneous);
}

#[test]
fn zero_epochs_of_fine_tuning_return_the_initialization() {
    let f = fixture();
    let (start, _) = init_model(&f.source, f.shared.clone(), &f.task.target.label_set, 7).unwrap();
    let out = init_transfer(
        &f.source,
        f.shared.clone(),
        &f.task.target.label_set,
        target(&f),
        &[],
        InitMode::FineTune,
        &quick_train(0, 7),
    )
    .unwrap();
    assert_eq!(snapshot(&out.model.store), snapshot(&start.store));
}

#[test]
fn joint_model_without_steps_equals_init() {
    let f = fixture();
    let (init, _) = init_model(&f.source, f.shared.clone(), &f.task.target.label_set, 7).unwrap();
    let joint = JointModel::from_source(&f.source, &f.task.target.label_set, f.shared.clone(), 7).unwrap();
    assert_eq!(snapshot(&joint.target_model().unwrap().store), snapshot(&init.store));
    assert_eq!(snapshot(&joint.source_model().unwrap().store), snapshot(&f.source.store));
}

#[test]
fn mult_init_without_source_draws_matches_init_fine_tuning() {
    let f = fixture();
    let cfg = quick_train(3, 7);
    let init = init_transfer(
        &f.source,
        f.shared.clone(),
        &f.task.target.label_set,
        target(&f),
        &[],
        InitMode::FineTune,
        &cfg,
    )
    .unwrap();
    let mult = mult_init_train(
        &f.source,
        &f.task.target.label_set,
        f.shared.clone(),
        &f.task.source.train,
        target(&f),
        &[],
        &MultConfig { lambda: 0.0, seed: 1 },
        &cfg,
    )
    .unwrap();
    assert_eq!(mult.source_draws(), 0);
    assert_eq!(mult.report.history, init.report.history);
    assert_eq!(snapshot(&mult.joint.target_model().unwrap().store), snapshot(&init.model.store));
}

#[test]
fn shared_layers_stay_identical_and_heads_respect_lambda() {
    let f = fixture();
    let cfg = small_config(f.task.source.label_set.clone(), f.task.config.dim);
    for lambda in [0.0, 0.5, 1.0] {
        let out = mult_train(
            &cfg,
            &f.task.target.label_set,
            f.shared.clone(),
            f.shared.clone(),
            &f.task.source.train,
            target(&f),
            &[],
            &MultConfig { lambda, seed: 2 },
            &quick_train(2, 5),
        )
        .unwrap();
        let s = snapshot(&out.joint.source_model().unwrap().store);
        let t = snapshot(&out.joint.target_model().unwrap().store);
        for (name, value) in &s {
            if !crf_tensor(name) {
                assert_eq!(&t[name], value, "{name} differs between the two models");
            }
        }
        let draws = out.draws.iter().filter(|&&d| d == Domain::Source).count();
        assert_eq!(draws, out.source_draws());
        if lambda == 0.0 {
            assert_eq!(draws, 0);
        } else if lambda == 1.0 {
            assert_eq!(draws, out.draws.len());
        }
    }
}

#[test]
fn boundary_lambda_keeps_the_idle_head_fixed() {
    let f = fixture();
    for (lambda, idle) in [(1.0, "target"), (0.0, "source")] {
        let joint = JointModel::from_source(&f.source, &f.task.target.label_set, f.shared.clone(), 3).unwrap();
        let head = |j: &JointModel| -> Vec<Tensor> {
            let tagger = if idle == "target" { &j.target } else { &j.source };
            tagger.crf.params().into_iter().map(|id| j.store.value(id).clone()).collect()
        };
        let before = head(&joint);
        let out = run_mult(
            joint,
            &f.task.source.train,
            target(&f),
            &[],
            &MultConfig { lambda, seed: 9 },
            &quick_train(2, 3),
        )
        .unwrap();
        assert_eq!(head(&out.joint), before, "{idle} head moved at lambda {lambda}");
    }
}

#[test]
fn embedding_tables_must_agree_in_dimension() {
    let f = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let same_dim = Arc::new(random_table(&mut rng, &["kabo", "tesi"], f.shared.dim()));
    let (_, heterogeneous) = init_model(&f.source, same_dim, &f.task.target.label_set, 1).unwrap();
    assert!(heterogeneous);
    let other_dim = Arc::new(random_table(&mut rng, &["kabo"], f.shared.dim() + 1));
    assert!(init_model(&f.source, other_dim.clone(), &f.task.target.label_set, 1).is_err());
    assert!(JointModel::from_source(&f.source, &f.task.target.label_set, other_dim, 1).is_err());
    assert!(MultConfig { lambda: 1.5, seed: 0 }.validate().is_err());
}
