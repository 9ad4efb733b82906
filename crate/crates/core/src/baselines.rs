//! Transfer baselines over a shared embedding space: INIT (copy the source
//! encoder, new CRF, frozen or fine-tuned) and MULT (joint training with a
//! shared encoder and one CRF per domain), alone or after INIT.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use log::{debug, warn};
use nerxfer_autograd::{Adam, AdamConfig, GroupKind, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::base_model::{
    char_vocab_of, BaseModelConfig, BaseNet, BaseTagger, CharVocab, CrfLayer, SourceModel, KIND_MULT_TARGET,
};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::pipeline::data::{LabelSet, SequenceExample};
use crate::training::{
    encode_gold, evaluate_tagger, fit, stream, train_step, Batches, EpochRecord, ModelSelector, TrainConfig,
    TrainReport,
};

pub const DEFAULT_LAMBDA_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

const TARGET_HEAD: &str = "crf.target";
const SOURCE_HEAD: &str = "crf.source";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InitMode {
    /// Only the new CRF layer is trained.
    Frozen,
    /// Every layer is trained at one rate.
    FineTune,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(Self::Frozen),
            "finetune" | "fine-tune" => Ok(Self::FineTune),
            _ => Err(Error::InvalidInput(format!("unknown INIT mode `{s}`"))),
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Frozen => "frozen",
            Self::FineTune => "finetune",
        })
    }
}

/// Source and target tables must agree in size; differing contents are
/// allowed but reported.
fn check_embeddings(source: &EmbeddingMatrix, target: &EmbeddingMatrix) -> Result<bool> {
    if source.dim() != target.dim() {
        return Err(Error::Dimension(format!(
            "source embeddings have dim {}, target embeddings {}",
            source.dim(),
            target.dim()
        )));
    }
    let heterogeneous = source.fingerprint() != target.fingerprint();
    if heterogeneous {
        warn!("source and target use different embedding tables without a projection");
    }
    Ok(heterogeneous)
}

/// Fresh CRF head values, independent of everything else drawn from `seed`.
fn fresh_head(input: usize, labels: &LabelSet, seed: u64, stream_id: u64) -> Result<Vec<Tensor>> {
    let mut tmp = ParamStore::new();
    let mut rng = stream(seed, stream_id);
    let crf = CrfLayer::new(&mut tmp, "crf", input, labels.len(), GroupKind::Adapt, &mut rng)?;
    Ok(crf.params().into_iter().map(|id| tmp.value(id).clone()).collect())
}

fn set_head(store: &mut ParamStore, crf: &CrfLayer, values: Vec<Tensor>) -> Result<()> {
    for (id, v) in crf.params().into_iter().zip(values) {
        store.set_value(id, v)?;
    }
    Ok(())
}

/// The source encoder with a freshly initialized CRF over `labels`.
pub fn init_model(
    source: &SourceModel,
    target_embeddings: Arc<EmbeddingMatrix>,
    labels: &LabelSet,
    seed: u64,
) -> Result<(SourceModel, bool)> {
    let heterogeneous = check_embeddings(source.embeddings(), &target_embeddings)?;
    let config = BaseModelConfig {
        label_set: labels.clone(),
        ..source.config.clone()
    };
    let mut model = SourceModel::new(config, target_embeddings, source.tagger.net.chars.vocab.clone(), seed)?;
    for id in model.store.members(GroupKind::Base) {
        let src = source.store.id(model.store.name(id))?;
        model.store.set_value(id, source.store.value(src).clone())?;
    }
    let head = fresh_head(source.config.word_hidden, labels, seed, 5)?;
    set_head(&mut model.store, &model.tagger.crf, head)?;
    Ok((model, heterogeneous))
}

#[derive(Debug, Clone)]
pub struct InitOutcome {
    pub model: SourceModel,
    pub report: TrainReport,
    pub heterogeneous: bool,
}

pub fn init_transfer(
    source: &SourceModel,
    target_embeddings: Arc<EmbeddingMatrix>,
    labels: &LabelSet,
    train: &[SequenceExample],
    dev: &[SequenceExample],
    mode: InitMode,
    train_cfg: &TrainConfig,
) -> Result<InitOutcome> {
    let (mut model, heterogeneous) = init_model(source, target_embeddings, labels, train_cfg.seed)?;
    let rate = train_cfg.learning_rate;
    let base_rate = match mode {
        InitMode::Frozen => 0.0,
        InitMode::FineTune => rate,
    };
    let mut adam = Adam::new(AdamConfig::default(), &model.store, base_rate, rate);
    let report = fit(&model.tagger, &mut model.store, &mut adam, train, dev, train_cfg)?;
    Ok(InitOutcome {
        model,
        report,
        heterogeneous,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultConfig {
    /// Probability that a step draws a source batch.
    pub lambda: f64,
    /// Seeds the domain draws.
    pub seed: u64,
}

impl MultConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidInput(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Domain {
    Source,
    Target,
}

/// Bernoulli(λ) domain draws from a seeded ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct DomainSampler {
    lambda: f64,
    rng: ChaCha8Rng,
}

impl DomainSampler {
    pub fn new(cfg: &MultConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            lambda: cfg.lambda,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn draw(&mut self) -> Domain {
        if self.rng.gen_bool(self.lambda) {
            Domain::Source
        } else {
            Domain::Target
        }
    }
}

/// One parameter store holding the shared encoder and both CRF heads.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub store: ParamStore,
    pub source: BaseTagger,
    pub target: BaseTagger,
    pub source_config: BaseModelConfig,
    pub target_config: BaseModelConfig,
}

impl JointModel {
    fn build(
        config: &BaseModelConfig,
        target_labels: &LabelSet,
        chars: CharVocab,
        source_embeddings: Arc<EmbeddingMatrix>,
        target_embeddings: Arc<EmbeddingMatrix>,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = BaseNet::new(&mut store, config, chars, &mut stream(seed, 3))?;
        let mut rng = stream(seed, 3);
        let target_crf = CrfLayer::new(&mut store, TARGET_HEAD, config.word_hidden, target_labels.len(), GroupKind::Adapt, &mut rng)?;
        let source_crf = CrfLayer::new(&mut store, SOURCE_HEAD, config.word_hidden, config.label_set.len(), GroupKind::Adapt, &mut rng)?;
        set_head(&mut store, &target_crf, fresh_head(config.word_hidden, target_labels, seed, 5)?)?;
        set_head(&mut store, &source_crf, fresh_head(config.word_hidden, &config.label_set, seed, 6)?)?;
        let target_config = BaseModelConfig {
            label_set: target_labels.clone(),
            ..config.clone()
        };
        Ok(Self {
            source: BaseTagger {
                net: net.clone(),
                crf: source_crf,
                labels: config.label_set.clone(),
                embeddings: source_embeddings,
            },
            target: BaseTagger {
                net,
                crf: target_crf,
                labels: target_labels.clone(),
                embeddings: target_embeddings,
            },
            store,
            source_config: config.clone(),
            target_config,
        })
    }

    /// Fresh joint model for MULT from scratch.
    pub fn fresh(
        config: &BaseModelConfig,
        target_labels: &LabelSet,
        chars: CharVocab,
        source_embeddings: Arc<EmbeddingMatrix>,
        target_embeddings: Arc<EmbeddingMatrix>,
        seed: u64,
    ) -> Result<Self> {
        check_embeddings(&source_embeddings, &target_embeddings)?;
        Self::build(config, target_labels, chars, source_embeddings, target_embeddings, seed)
    }

    /// INIT-initialized joint model: the shared encoder and the source head
    /// come from `source`; the target head is the one INIT would create.
    pub fn from_source(
        source: &SourceModel,
        target_labels: &LabelSet,
        target_embeddings: Arc<EmbeddingMatrix>,
        seed: u64,
    ) -> Result<Self> {
        check_embeddings(source.embeddings(), &target_embeddings)?;
        let mut joint = Self::build(
            &source.config,
            target_labels,
            source.tagger.net.chars.vocab.clone(),
            source.embeddings().clone(),
            target_embeddings,
            seed,
        )?;
        for id in joint.store.members(GroupKind::Base) {
            let src = source.store.id(joint.store.name(id))?;
            joint.store.set_value(id, source.store.value(src).clone())?;
        }
        let values = source.tagger.crf.params().into_iter().map(|id| source.store.value(id).clone()).collect();
        set_head(&mut joint.store, &joint.source.crf, values)?;
        Ok(joint)
    }

    fn export(&self, tagger: &BaseTagger, config: &BaseModelConfig, kind: u8) -> Result<SourceModel> {
        let mut model = SourceModel::new(config.clone(), tagger.embeddings.clone(), tagger.net.chars.vocab.clone(), 0)?;
        for id in model.store.members(GroupKind::Base) {
            let src = self.store.id(model.store.name(id))?;
            model.store.set_value(id, self.store.value(src).clone())?;
        }
        let values = tagger.crf.params().into_iter().map(|id| self.store.value(id).clone()).collect();
        set_head(&mut model.store, &model.tagger.crf, values)?;
        model.kind = kind;
        Ok(model)
    }

    /// Stand-alone source model (kind 0x01).
    pub fn source_model(&self) -> Result<SourceModel> {
        self.export(&self.source, &self.source_config, crate::base_model::KIND_SOURCE)
    }

    /// Stand-alone target model (kind 0x03).
    pub fn target_model(&self) -> Result<SourceModel> {
        self.export(&self.target, &self.target_config, KIND_MULT_TARGET)
    }
}

#[derive(Debug, Clone)]
pub struct MultOutcome {
    pub joint: JointModel,
    pub report: TrainReport,
    /// Domain of every step taken, in order.
    pub draws: Vec<Domain>,
}

impl MultOutcome {
    pub fn source_draws(&self) -> usize {
        self.draws.iter().filter(|d| **d == Domain::Source).count()
    }
}

/// The MULT loop. An "epoch" is `ceil(|train_t| / batch)` steps; target dev
/// F1 is measured after each and drives early stopping. With λ = 0 the
/// update sequence is exactly that of fine-tuning on the target alone.
pub fn run_mult(
    mut joint: JointModel,
    source_train: &[SequenceExample],
    target_train: &[SequenceExample],
    target_dev: &[SequenceExample],
    mult: &MultConfig,
    train_cfg: &TrainConfig,
) -> Result<MultOutcome> {
    train_cfg.validate()?;
    let mut sampler = DomainSampler::new(mult)?;
    if target_train.is_empty() {
        return Err(Error::InvalidInput("empty target training set".into()));
    }
    if source_train.is_empty() && mult.lambda > 0.0 {
        return Err(Error::InvalidInput("empty source training set".into()));
    }
    let gold_t = encode_gold(&joint.target.labels, target_train)?;
    let gold_s = encode_gold(&joint.source.labels, source_train)?;
    let dev = if target_dev.is_empty() { target_train } else { target_dev };

    let rate = train_cfg.learning_rate;
    let mut adam = Adam::new(AdamConfig::default(), &joint.store, rate, rate);
    let mut target_batches = Batches::new(target_train.len(), train_cfg.batch_size, train_cfg.shuffle_rng());
    let mut source_batches = Batches::new(source_train.len(), train_cfg.batch_size, stream(train_cfg.seed, 6));
    let mut dropout_rng = train_cfg.dropout_rng();
    let mut selector = ModelSelector::new(train_cfg.patience);
    let mut report = TrainReport::default();
    let mut draws = Vec::new();
    let steps = target_batches.per_epoch();

    for epoch in 1..=train_cfg.max_epochs {
        let mut loss_sum = 0.0;
        for _ in 0..steps {
            let domain = sampler.draw();
            draws.push(domain);
            let (tagger, batches, data, gold) = match domain {
                Domain::Source => (&joint.source, &mut source_batches, source_train, &gold_s),
                Domain::Target => (&joint.target, &mut target_batches, target_train, &gold_t),
            };
            let batch: Vec<(&[String], &[usize])> = batches
                .next_batch()
                .into_iter()
                .map(|i| (data[i].tokens.as_slice(), gold[i].as_slice()))
                .collect();
            loss_sum += train_step(tagger, &mut joint.store, &mut adam, &batch, train_cfg, &mut dropout_rng)?;
        }
        let dev_f1 = evaluate_tagger(&joint.target, &joint.store, dev)?.f1();
        let mean_loss = loss_sum / steps as f64;
        debug!("mult epoch {epoch}: loss {mean_loss:.4}, target dev F1 {dev_f1:.4}");
        report.history.push(EpochRecord {
            epoch,
            mean_loss,
            dev_f1,
        });
        if !selector.observe(epoch, dev_f1, &joint.store) {
            break;
        }
    }
    let (best_epoch, best_dev_f1) = selector.restore(&mut joint.store);
    report.best_epoch = best_epoch;
    report.best_dev_f1 = best_dev_f1;
    Ok(MultOutcome { joint, report, draws })
}

/// MULT from a fresh initialization.
#[allow(clippy::too_many_arguments)]
pub fn mult_train(
    config: &BaseModelConfig,
    target_labels: &LabelSet,
    source_embeddings: Arc<EmbeddingMatrix>,
    target_embeddings: Arc<EmbeddingMatrix>,
    source_train: &[SequenceExample],
    target_train: &[SequenceExample],
    target_dev: &[SequenceExample],
    mult: &MultConfig,
    train_cfg: &TrainConfig,
) -> Result<MultOutcome> {
    mult.validate()?;
    let mut all = source_train.to_vec();
    all.extend_from_slice(target_train);
    let joint = JointModel::fresh(
        config,
        target_labels,
        char_vocab_of(&all),
        source_embeddings,
        target_embeddings,
        train_cfg.seed,
    )?;
    run_mult(joint, source_train, target_train, target_dev, mult, train_cfg)
}

/// INIT followed by MULT.
#[allow(clippy::too_many_arguments)]
pub fn mult_init_train(
    source: &SourceModel,
    target_labels: &LabelSet,
    target_embeddings: Arc<EmbeddingMatrix>,
    source_train: &[SequenceExample],
    target_train: &[SequenceExample],
    target_dev: &[SequenceExample],
    mult: &MultConfig,
    train_cfg: &TrainConfig,
) -> Result<MultOutcome> {
    mult.validate()?;
    let joint = JointModel::from_source(source, target_labels, target_embeddings, train_cfg.seed)?;
    run_mult(joint, source_train, target_train, target_dev, mult, train_cfg)
}
