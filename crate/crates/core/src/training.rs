//! Mini-batch Adam training with dev-F1 model selection, shared by the
//! source model, the adapted target model and the baselines.

use log::debug;
use nerxfer_autograd::{Adam, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base_model::crf::{viterbi_decode, CrfLayer};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::pipeline::data::{LabelSet, SequenceExample};
use crate::pipeline::eval::{evaluate, Metrics};

/// A model that maps a sentence to CRF emissions.
pub trait Tagger: Sync {
    fn labels(&self) -> &LabelSet;

    fn crf(&self) -> &CrfLayer;

    /// `[L, |labels|]` emission scores.
    fn emissions(&self, g: &mut Graph, store: &ParamStore, tokens: &[String], mode: &mut Mode) -> Result<Var>;

    fn neg_log_likelihood(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[String],
        gold: &[usize],
        mode: &mut Mode,
    ) -> Result<Var> {
        let e = self.emissions(g, store, tokens, mode)?;
        self.crf().neg_log_likelihood(g, store, e, gold)
    }

    fn emission_values(&self, store: &ParamStore, tokens: &[String]) -> Result<Tensor> {
        let mut g = Graph::new();
        let e = self.emissions(&mut g, store, tokens, &mut Mode::Eval)?;
        Ok(g.value(e).clone())
    }

    fn predict_ids(&self, store: &ParamStore, tokens: &[String]) -> Result<Vec<usize>> {
        let e = self.emission_values(store, tokens)?;
        viterbi_decode(&e, &self.crf().potentials(store))
    }

    fn predict(&self, store: &ParamStore, tokens: &[String]) -> Result<Vec<String>> {
        Ok(self.labels().decode(&self.predict_ids(store, tokens)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            patience: 10,
            batch_size: 10,
            learning_rate: 0.001,
            dropout: 0.5,
            clip_norm: 5.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning_rate must be finite and ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidInput("dropout must be in [0, 1)".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidInput("clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Independent random streams derived from the seed.
    pub fn shuffle_rng(&self) -> ChaCha8Rng {
        stream(self.seed, 1)
    }

    pub fn dropout_rng(&self) -> ChaCha8Rng {
        stream(self.seed, 2)
    }

    pub fn init_rng(&self) -> ChaCha8Rng {
        stream(self.seed, 3)
    }
}

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Endless shuffled mini-batches; the order is reshuffled at the start of every pass.
#[derive(Debug, Clone)]
pub struct Batches {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    pub fn new(n: usize, batch_size: usize, rng: ChaCha8Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: 0,
            batch_size: batch_size.max(1),
            rng,
        }
    }

    pub fn per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos == 0 {
            self.order.shuffle(&mut self.rng);
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = if end == self.order.len() { 0 } else { end };
        batch
    }
}

/// Gold label ids for every sentence, checked against the tagger's label set.
pub fn encode_gold(labels: &LabelSet, examples: &[SequenceExample]) -> Result<Vec<Vec<usize>>> {
    examples.iter().map(|e| labels.encode(&e.labels)).collect()
}

/// One optimizer step on the mean sentence loss of a batch. Returns the loss.
pub fn train_step<T: Tagger>(
    tagger: &T,
    store: &mut ParamStore,
    adam: &mut Adam,
    batch: &[(&[String], &[usize])],
    cfg: &TrainConfig,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let mut mode = Mode::Train {
        dropout: cfg.dropout,
        rng: dropout_rng,
    };
    let mut total: Option<Var> = None;
    for (tokens, gold) in batch {
        let nll = tagger.neg_log_likelihood(&mut g, store, tokens, gold, &mut mode)?;
        total = Some(match total {
            Some(t) => g.add(t, nll)?,
            None => nll,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    let loss = g.scale(total, 1.0 / batch.len() as f64)?;
    let value = g.value(loss).data()[0];
    g.backward(loss, store)?;
    store.clip_grad_norm(cfg.clip_norm);
    adam.step(store)?;
    Ok(value)
}

/// Decode every sentence (in parallel) and score against gold labels.
pub fn evaluate_tagger<T: Tagger>(tagger: &T, store: &ParamStore, examples: &[SequenceExample]) -> Result<Metrics> {
    let preds = predict_all(tagger, store, examples)?;
    let gold: Vec<&Vec<String>> = examples.iter().map(|e| &e.labels).collect();
    let gold: Vec<Vec<&str>> = gold.iter().map(|g| g.iter().map(String::as_str).collect()).collect();
    evaluate(&preds, &gold)
}

pub fn predict_all<T: Tagger>(tagger: &T, store: &ParamStore, examples: &[SequenceExample]) -> Result<Vec<Vec<String>>> {
    examples
        .par_iter()
        .map(|e| tagger.predict(store, &e.tokens))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// 0 when no epoch ran (the initial parameters were kept).
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }

    pub fn final_dev_f1(&self) -> Option<f64> {
        self.history.last().map(|r| r.dev_f1)
    }
}

/// Keeps the parameters of the best dev-F1 epoch and decides when to stop.
#[derive(Debug, Clone)]
pub struct ModelSelector {
    best: Option<(usize, f64, Vec<Tensor>)>,
    since_best: usize,
    patience: usize,
}

impl ModelSelector {
    pub fn new(patience: usize) -> Self {
        Self {
            best: None,
            since_best: 0,
            patience,
        }
    }

    /// Record an epoch's dev F1; returns `false` once patience is exhausted.
    pub fn observe(&mut self, epoch: usize, f1: f64, store: &ParamStore) -> bool {
        let improved = self.best.as_ref().is_none_or(|(_, b, _)| f1 > *b);
        if improved {
            self.best = Some((epoch, f1, store.snapshot()));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best < self.patience.max(1)
    }

    /// Restore the best parameters into `store`; returns `(epoch, f1)`.
    pub fn restore(self, store: &mut ParamStore) -> (usize, f64) {
        match self.best {
            Some((epoch, f1, snap)) => {
                store.restore(&snap);
                (epoch, f1)
            }
            None => (0, 0.0),
        }
    }
}

/// Train until `max_epochs` or early stopping, then restore the epoch with
/// the best F1 on `dev` (or on `train` when `dev` is empty).
pub fn fit<T: Tagger>(
    tagger: &T,
    store: &mut ParamStore,
    adam: &mut Adam,
    train: &[SequenceExample],
    dev: &[SequenceExample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let gold = encode_gold(tagger.labels(), train)?;
    let dev = if dev.is_empty() { train } else { dev };
    let mut batches = Batches::new(train.len(), cfg.batch_size, cfg.shuffle_rng());
    let mut dropout_rng = cfg.dropout_rng();
    let mut selector = ModelSelector::new(cfg.patience);
    let mut report = TrainReport::default();

    for epoch in 1..=cfg.max_epochs {
        let mut loss_sum = 0.0;
        let steps = batches.per_epoch();
        for _ in 0..steps {
            let idx = batches.next_batch();
            let batch: Vec<(&[String], &[usize])> = idx
                .iter()
                .map(|&i| (train[i].tokens.as_slice(), gold[i].as_slice()))
                .collect();
            loss_sum += train_step(tagger, store, adam, &batch, cfg, &mut dropout_rng)?;
        }
        let dev_f1 = evaluate_tagger(tagger, store, dev)?.f1();
        let mean_loss = loss_sum / steps as f64;
        debug!("epoch {epoch}: loss {mean_loss:.4}, dev F1 {dev_f1:.4}");
        report.history.push(EpochRecord {
            epoch,
            mean_loss,
            dev_f1,
        });
        if !selector.observe(epoch, dev_f1, store) {
            break;
        }
    }
    let (best_epoch, best_dev_f1) = selector.restore(store);
    report.best_epoch = best_epoch;
    report.best_dev_f1 = best_dev_f1;
    Ok(report)
}
