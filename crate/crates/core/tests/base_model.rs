//! Source tagger training, selection and persistence.

mod common;

use std::sync::Arc;

use common::{quick_train, small_config, snapshot, words};
use nerxfer::base_model::{lookup_tokens, train_source, BaseModelConfig, SourceModel};
use nerxfer::pipeline::Dataset;
use nerxfer::synthetic::bundled_task;

fn split() -> (Dataset, Arc<nerxfer::embeddings::EmbeddingMatrix>, BaseModelConfig) {
    let task = bundled_task();
    let mut train = task.source.train.clone();
    let dev = train.split_off(14);
    let data = Dataset::new(train, dev, Vec::new());
    let cfg = small_config(data.label_set.clone(), task.config.dim);
    (data, Arc::new(task.v_s.clone()), cfg)
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let (data, emb, cfg) = split();
    let (a, ra) = train_source(&data, emb.clone(), &cfg, &quick_train(3, 9)).unwrap();
    let (b, rb) = train_source(&data, emb, &cfg, &quick_train(3, 9)).unwrap();
    assert_eq!(ra.history, rb.history);
    assert_eq!(snapshot(&a.store), snapshot(&b.store));
}

#[test]
fn returned_model_is_the_best_dev_checkpoint() {
    let (data, emb, cfg) = split();
    let (model, report) = train_source(&data, emb, &cfg, &quick_train(8, 3)).unwrap();
    let dev_f1 = model.evaluate(&data.dev).unwrap().f1();
    assert_eq!(dev_f1, report.best_dev_f1);
    assert_eq!(report.history[report.best_epoch - 1].dev_f1, report.best_dev_f1);
    assert!(report.best_dev_f1 >= report.history.last().unwrap().dev_f1);
}

#[test]
fn checkpoint_round_trip_preserves_decodes() {
    let (data, emb, cfg) = split();
    let (model, _) = train_source(&data, emb.clone(), &cfg, &quick_train(2, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ck");
    model.save(&path).unwrap();
    let back = SourceModel::load(&path, emb).unwrap();
    assert_eq!(snapshot(&back.store), snapshot(&model.store));
    assert_eq!(back.checkpoint_sha256().unwrap(), model.checkpoint_sha256().unwrap());
    for ex in data.dev.iter().chain(&data.train) {
        assert_eq!(back.predict(&ex.tokens).unwrap(), model.predict(&ex.tokens).unwrap());
    }
}

#[test]
fn loading_against_a_table_of_another_dimension_fails() {
    let (data, emb, cfg) = split();
    let model = SourceModel::new(cfg, emb, nerxfer::base_model::char_vocab_of(&data.train), 1).unwrap();
    let mut buf = Vec::new();
    model.write_to(&mut buf).unwrap();
    let other = Arc::new(nerxfer::embeddings::EmbeddingMatrix::from_rows([("x".to_string(), vec![0.0; 3])]).unwrap());
    assert!(SourceModel::read_from(&mut buf.as_slice(), other).is_err());
}

#[test]
fn default_dimensions_and_char_features() {
    let (data, emb, _) = split();
    let cfg = BaseModelConfig {
        word_emb_dim: emb.dim(),
        ..BaseModelConfig::new(data.label_set.clone())
    };
    assert_eq!((cfg.char_hidden, cfg.word_hidden), (50, 200));
    let model = SourceModel::new(cfg, emb.clone(), nerxfer::base_model::char_vocab_of(&data.train), 1).unwrap();
    let a = model.encode_word_chars("kabo").unwrap();
    assert_eq!(a.len(), 50);
    assert_eq!(a, model.encode_word_chars("kabo").unwrap());
    assert_eq!(model.encode_word_chars("k").unwrap().len(), 50);
    let bad = BaseModelConfig {
        word_hidden: 7,
        ..BaseModelConfig::new(data.label_set.clone())
    };
    assert!(bad.validate().is_err());

    let rows = lookup_tokens(&emb, &words(&["zzz-unknown"])).unwrap();
    assert!(rows.data().iter().all(|&x| x == 0.0));
    assert!(lookup_tokens(&emb, &[]).is_err());
}
