//! Fixture builders shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use nerxfer::adaptation::{assemble_target, TargetModel, TargetModelConfig};
use nerxfer::autograd::{GroupKind, Tensor};
use nerxfer::base_model::{BaseModelConfig, CharVocab, SourceModel};
use nerxfer::embeddings::{EmbeddingMatrix, ProjectionMatrix};
use nerxfer::pipeline::data::{LabelSet, SequenceExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|s| s.to_string()).collect()
}

pub fn example(tokens: &[&str], labels: &[&str]) -> SequenceExample {
    SequenceExample::new(words(tokens), words(labels)).unwrap()
}

pub fn labels(ls: &[&str]) -> LabelSet {
    LabelSet::new(words(ls)).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn random_table(rng: &mut ChaCha8Rng, vocab: &[&str], dim: usize) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(
        vocab
            .iter()
            .map(|w| (w.to_string(), (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())),
    )
    .unwrap()
}

/// The reduced target model used for gradient checks: char 4→8, word
/// embeddings 6, word BLSTM 8, adaptation BLSTMs 6 and 4, three labels.
pub struct TinyTransfer {
    pub source: SourceModel,
    pub target: TargetModel,
    pub sentence: Vec<String>,
    pub gold: Vec<usize>,
}

pub fn tiny_transfer(seed: u64, psi: f64) -> TinyTransfer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = ["ana", "bo", "cid", "dee"];
    let v_s = Arc::new(random_table(&mut rng, &vocab, 6));
    let v_t = Arc::new(random_table(&mut rng, &vocab, 5));
    let ls = labels(&["O", "B-X", "I-X"]);
    let cfg = BaseModelConfig {
        char_emb_dim: 4,
        char_hidden: 8,
        word_emb_dim: 6,
        word_hidden: 8,
        label_set: ls.clone(),
    };
    let mut source = SourceModel::new(cfg.clone(), v_s, CharVocab::from_words(vocab), seed).unwrap();
    // Non-zero biases and CRF potentials so every gradient path is exercised.
    let ids: Vec<_> = source.store.ids().collect();
    for id in ids {
        let shape = source.store.value(id).shape().to_vec();
        let t = random_matrix(&mut rng, shape[0], shape[1], 0.5);
        source.store.set_value(id, t).unwrap();
    }
    let z = ProjectionMatrix::new(random_matrix(&mut rng, 5, 6, 0.5)).unwrap();
    let tcfg = TargetModelConfig {
        sent_adapt_hidden: 6,
        out_adapt_hidden: 4,
        label_set: ls,
        psi,
        alpha_adapt: 0.001,
        seed,
    };
    let mut target = assemble_target(&source, z, v_t, tcfg).unwrap();
    let adapt: Vec<_> = target.store.members(GroupKind::Adapt);
    for id in adapt {
        let shape = target.store.value(id).shape().to_vec();
        let t = random_matrix(&mut rng, shape[0], shape[1], 0.5);
        target.store.set_value(id, t).unwrap();
    }
    TinyTransfer {
        source,
        target,
        sentence: words(&["ana", "bo"]),
        gold: vec![1, 2],
    }
}

/// Reduced dimensions that keep training on the bundled corpus fast.
pub fn small_config(label_set: LabelSet, dim: usize) -> BaseModelConfig {
    BaseModelConfig {
        char_emb_dim: 8,
        char_hidden: 16,
        word_emb_dim: dim,
        word_hidden: 32,
        label_set,
    }
}

/// Short training runs with a fixed seed.
pub fn quick_train(epochs: usize, seed: u64) -> nerxfer::training::TrainConfig {
    nerxfer::training::TrainConfig {
        max_epochs: epochs,
        patience: epochs.max(1),
        learning_rate: 0.01,
        seed,
        ..nerxfer::training::TrainConfig::default()
    }
}

/// Every tensor of a store, keyed by name.
pub fn snapshot(store: &nerxfer::autograd::ParamStore) -> std::collections::BTreeMap<String, Tensor> {
    store.ids().map(|id| (store.name(id).to_string(), store.value(id).clone())).collect()
}
