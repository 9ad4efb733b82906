//! Target-model assembly, forward pass, training and persistence.

mod common;

use std::sync::Arc;

use common::{quick_train, snapshot, tiny_transfer, words};
use nerxfer::adaptation::{
    assemble_target, param_count_paper_convention, project_tokens, transfer_train, tune_psi, TargetModel,
    TargetModelConfig,
};
use nerxfer::autograd::GroupKind;
use nerxfer::base_model::{group_for, lookup_tokens};
use nerxfer::embeddings::ProjectionMatrix;

fn data() -> Vec<nerxfer::pipeline::SequenceExample> {
    vec![
        common::example(&["ana", "bo", "cid"], &["B-X", "I-X", "O"]),
        common::example(&["dee", "ana"], &["O", "B-X"]),
        common::example(&["bo", "never-seen"], &["O", "O"]),
    ]
}

#[test]
fn base_layers_are_copied_from_the_source() {
    let t = tiny_transfer(3, 0.6);
    let base = t.target.store.members(GroupKind::Base);
    assert!(!base.is_empty());
    for id in base {
        let name = t.target.store.name(id);
        assert!(name.starts_with("char.") || name.starts_with("word."), "{name}");
        let src = t.source.store.id(name).unwrap();
        assert_eq!(t.target.store.value(id), t.source.store.value(src));
    }
    assert_eq!(t.target.source_sha256, t.source.checkpoint_sha256().unwrap());
}

#[test]
fn groups_partition_the_parameters() {
    let t = tiny_transfer(4, 0.6);
    let store = &t.target.store;
    let base = store.members(GroupKind::Base);
    let adapt = store.members(GroupKind::Adapt);
    assert_eq!(base.len() + adapt.len(), store.len());
    assert!(!adapt.is_empty());
    for (_, p) in store.iter() {
        assert_eq!(p.group, group_for(&p.name));
        assert!(!p.name.contains("projection"));
    }
    let crf = |n: &str| store.value(store.id(n).unwrap()).shape().to_vec();
    let ny = t.target.labels().len();
    assert_eq!(crf("crf.transitions"), vec![ny, ny]);
    assert_eq!(crf("crf.start"), vec![1, ny]);
    assert_eq!(crf("crf.stop"), vec![1, ny]);
}

#[test]
fn assembly_is_deterministic_for_a_seed() {
    let a = tiny_transfer(5, 0.6);
    let b = tiny_transfer(5, 0.6);
    assert_eq!(snapshot(&a.target.store), snapshot(&b.target.store));
    let cfg = a.target.config.clone();
    let z = a.target.tagger.projection.clone();
    let emb = a.target.tagger.embeddings.clone();
    let fresh1 = assemble_target(&a.source, z.clone(), emb.clone(), cfg.clone()).unwrap();
    let fresh2 = assemble_target(&a.source, z, emb, cfg).unwrap();
    assert_eq!(snapshot(&fresh1.store), snapshot(&fresh2.store));
}

#[test]
fn emissions_have_one_row_per_token_and_stay_finite_for_unknown_words() {
    let t = tiny_transfer(6, 0.6);
    let tokens = words(&["ana", "qqq-unknown", "bo"]);
    let e = t.target.emissions(&tokens).unwrap();
    assert_eq!(e.shape(), &[3, t.target.labels().len()]);
    assert!(e.data().iter().all(|x| x.is_finite()));
    assert_eq!(e, t.target.emissions(&tokens).unwrap());
}

#[test]
fn identity_projection_reproduces_source_inputs() {
    let t = tiny_transfer(7, 0.6);
    let v_s = t.source.embeddings();
    let tokens = words(&["ana", "bo", "dee"]);
    let projected = project_tokens(v_s, &ProjectionMatrix::identity(v_s.dim()), &tokens).unwrap();
    assert_eq!(projected, lookup_tokens(v_s, &tokens).unwrap());
}

#[test]
fn checkpoint_round_trip_preserves_decodes() {
    let mut t = tiny_transfer(8, 0.6);
    transfer_train(&mut t.target, &data(), &[], &quick_train(2, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ck");
    t.target.save(&path).unwrap();
    let back = TargetModel::load(&path, t.target.tagger.embeddings.clone()).unwrap();
    assert_eq!(snapshot(&back.store), snapshot(&t.target.store));
    assert_eq!(back.tagger.projection.matrix(), t.target.tagger.projection.matrix());
    assert_eq!(back.source_sha256, t.target.source_sha256);
    assert_eq!(back.config, t.target.config);
    for ex in data() {
        assert_eq!(back.predict(&ex.tokens).unwrap(), t.target.predict(&ex.tokens).unwrap());
    }
}

#[test]
fn training_leaves_the_projection_untouched_and_freezes_base_at_zero_psi() {
    let mut t = tiny_transfer(9, 0.0);
    let z = t.target.tagger.projection.matrix().clone();
    let before = snapshot(&t.target.store);
    transfer_train(&mut t.target, &data(), &[], &quick_train(3, 2)).unwrap();
    assert_eq!(t.target.tagger.projection.matrix(), &z);
    let after = snapshot(&t.target.store);
    for (name, value) in &before {
        if group_for(name) == GroupKind::Base {
            assert_eq!(&after[name], value, "{name} moved");
        }
    }
    assert!(before.iter().any(|(n, v)| &after[n] != v), "nothing trained");
}

#[test]
fn invalid_psi_is_rejected() {
    let t = tiny_transfer(10, 0.6);
    for psi in [-0.1, 1.5, f64::NAN] {
        let cfg = TargetModelConfig { psi, ..t.target.config.clone() };
        assert!(cfg.validate().is_err());
        let z = t.target.tagger.projection.clone();
        assert!(assemble_target(&t.source, z, t.target.tagger.embeddings.clone(), cfg).is_err());
    }
}

#[test]
fn mismatched_projection_is_rejected() {
    let t = tiny_transfer(11, 0.6);
    let z = ProjectionMatrix::identity(3);
    assert!(assemble_target(&t.source, z, t.target.tagger.embeddings.clone(), t.target.config.clone()).is_err());
}

#[test]
fn psi_search_keeps_the_best_trial() {
    let t = tiny_transfer(12, 0.6);
    let search = tune_psi(
        &t.source,
        &t.target.tagger.projection,
        Arc::clone(&t.target.tagger.embeddings),
        &t.target.config,
        &[0.2, 0.5, 1.0],
        &data(),
        &[],
        &quick_train(2, 3),
    )
    .unwrap();
    assert_eq!(search.trials.len(), 3);
    let best = search.trials.iter().map(|t| t.dev_f1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(search.best_report.best_dev_f1, best);
    let first_best = search.trials.iter().find(|t| t.dev_f1 == best).unwrap().psi;
    assert_eq!(search.best_psi(), first_best);
    assert_eq!(search.best.config.psi, first_best);
}

#[test]
fn layer_size_accounting_convention() {
    assert_eq!(param_count_paper_convention(&[(25, 50), (250, 200)]), 93_750);
    assert_eq!(param_count_paper_convention(&[(25, 50), (200, 200), (250, 200), (200, 100)]), 203_750);
    assert_eq!(param_count_paper_convention(&[(1, 1)]), 2);
}
