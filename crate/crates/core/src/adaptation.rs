//! The adapted target model: a frozen word projection, a sentence-level
//! BLSTM pre-encoder, the transferred character and word encoders, an output
//! BLSTM re-encoder and a new CRF. The transferred layers train at
//! `ψ · α_adapt`; the adaptation layers at `α_adapt`.

use std::path::Path;
use std::sync::Arc;

use log::info;
use nerxfer_autograd::{Adam, AdamConfig, Checkpoint, Graph, GroupKind, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::base_model::{group_for, BaseModelConfig, BaseNet, CharVocab, CrfLayer, EmbeddingRef, SourceModel};
use crate::embeddings::{project_word, EmbeddingMatrix, ProjectionMatrix};
use crate::error::{Error, Result};
use crate::nn::{BiLstm, Mode};
use crate::pipeline::data::{LabelSet, SequenceExample};
use crate::pipeline::eval::Metrics;
use crate::training::{evaluate_tagger, fit, stream, Tagger, TrainConfig, TrainReport};

pub const KIND_TARGET: u8 = 0x02;

/// ψ values tried by [`tune_psi`] when no grid is given.
pub const DEFAULT_PSI_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
pub const DEFAULT_PSI: f64 = 0.6;

const PROJECTION_RECORD: &str = "projection.z";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetModelConfig {
    /// Must equal the source word embedding size.
    pub sent_adapt_hidden: usize,
    pub out_adapt_hidden: usize,
    pub label_set: LabelSet,
    pub psi: f64,
    pub alpha_adapt: f64,
    /// Seeds the adaptation-layer initialization.
    pub seed: u64,
}

impl TargetModelConfig {
    /// Defaults derived from the source geometry: the sentence layer matches
    /// the word embedding size, the output layer is half the word BLSTM.
    pub fn for_source(source: &BaseModelConfig, label_set: LabelSet) -> Self {
        Self {
            sent_adapt_hidden: source.word_emb_dim,
            out_adapt_hidden: source.word_hidden / 2,
            label_set,
            psi: DEFAULT_PSI,
            alpha_adapt: 0.001,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.psi) {
            return Err(Error::InvalidInput(format!("psi must be in [0, 1], got {}", self.psi)));
        }
        if !(self.alpha_adapt > 0.0 && self.alpha_adapt.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "alpha_adapt must be positive, got {}",
                self.alpha_adapt
            )));
        }
        for (name, v) in [
            ("sent_adapt_hidden", self.sent_adapt_hidden),
            ("out_adapt_hidden", self.out_adapt_hidden),
        ] {
            if v == 0 || v % 2 != 0 {
                return Err(Error::InvalidInput(format!("{name} must be positive and even, got {v}")));
            }
        }
        Ok(())
    }

    pub fn base_rate(&self) -> f64 {
        self.psi * self.alpha_adapt
    }

    pub fn adapt_rate(&self) -> f64 {
        self.alpha_adapt
    }
}

/// `Σ d_in·d_h + d_h²` over recurrent layers: a bookkeeping convention that
/// ignores gate multiplicity and biases.
pub fn param_count_paper_convention(layers: &[(usize, usize)]) -> u64 {
    layers
        .iter()
        .map(|&(d_in, d_h)| (d_in * d_h + d_h * d_h) as u64)
        .sum()
}

/// Recurrent layer dims `(d_in, d_h)` of a base model, in the convention above.
pub fn base_layer_dims(cfg: &BaseModelConfig) -> Vec<(usize, usize)> {
    vec![
        (cfg.char_emb_dim, cfg.char_hidden),
        (cfg.word_input_dim(), cfg.word_hidden),
    ]
}

/// Recurrent layer dims of a target model built from `base`.
pub fn target_layer_dims(base: &BaseModelConfig, cfg: &TargetModelConfig) -> Vec<(usize, usize)> {
    vec![
        (base.char_emb_dim, base.char_hidden),
        (base.word_emb_dim, cfg.sent_adapt_hidden),
        (base.word_input_dim(), base.word_hidden),
        (base.word_hidden, cfg.out_adapt_hidden),
    ]
}

/// `[L, d_s]` projected target embeddings; unknown words give zero rows.
pub fn project_tokens(v_t: &EmbeddingMatrix, z: &ProjectionMatrix, tokens: &[String]) -> Result<Tensor> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("empty sentence".into()));
    }
    let data = tokens.iter().flat_map(|t| project_word(t, v_t, z)).collect();
    Ok(Tensor::matrix(tokens.len(), z.source_dim(), data)?)
}

#[derive(Debug, Clone)]
pub struct TargetTagger {
    pub projection: ProjectionMatrix,
    pub embeddings: Arc<EmbeddingMatrix>,
    pub sent_adapt: BiLstm,
    pub net: BaseNet,
    pub out_adapt: BiLstm,
    pub crf: CrfLayer,
    pub labels: LabelSet,
}

impl TargetTagger {
    /// Output of the sentence adaptation layer, `[L, sent_adapt_hidden]`.
    pub fn sentence_features(&self, g: &mut Graph, store: &ParamStore, tokens: &[String], mode: &mut Mode) -> Result<Var> {
        let p = g.constant(project_tokens(&self.embeddings, &self.projection, tokens)?)?;
        let p = mode.dropout(g, p)?;
        self.sent_adapt.forward(g, store, p)
    }
}

impl Tagger for TargetTagger {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn crf(&self) -> &CrfLayer {
        &self.crf
    }

    fn emissions(&self, g: &mut Graph, store: &ParamStore, tokens: &[String], mode: &mut Mode) -> Result<Var> {
        let s = self.sentence_features(g, store, tokens, mode)?;
        // Character features bypass the word and sentence adaptation layers.
        let x = self.net.join_char_features(g, store, s, tokens)?;
        let x = mode.dropout(g, x)?;
        let h = self.net.encode_sentence(g, store, x)?;
        let h = mode.dropout(g, h)?;
        let o = self.out_adapt.forward(g, store, h)?;
        self.crf.emissions(g, store, o)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TargetMeta {
    config: TargetModelConfig,
    base: BaseModelConfig,
    chars: String,
    embeddings: EmbeddingRef,
    source_sha256: String,
}

#[derive(Debug, Clone)]
pub struct TargetModel {
    pub config: TargetModelConfig,
    pub base_config: BaseModelConfig,
    pub tagger: TargetTagger,
    pub store: ParamStore,
    /// SHA-256 of the source checkpoint the base layers came from.
    pub source_sha256: String,
}

impl TargetModel {
    /// Fresh parameters everywhere; base layers are overwritten by callers.
    fn build(
        config: TargetModelConfig,
        base_config: BaseModelConfig,
        chars: CharVocab,
        mut projection: ProjectionMatrix,
        embeddings: Arc<EmbeddingMatrix>,
    ) -> Result<Self> {
        config.validate()?;
        base_config.validate()?;
        if projection.source_dim() != base_config.word_emb_dim {
            return Err(Error::Dimension(format!(
                "projection outputs {} dims but the source embeddings have {}",
                projection.source_dim(),
                base_config.word_emb_dim
            )));
        }
        if projection.target_dim() != embeddings.dim() {
            return Err(Error::Dimension(format!(
                "projection expects {}-dim target embeddings, got {}",
                projection.target_dim(),
                embeddings.dim()
            )));
        }
        if config.sent_adapt_hidden != base_config.word_emb_dim {
            return Err(Error::Dimension(format!(
                "sent_adapt_hidden ({}) must equal the source word embedding size ({})",
                config.sent_adapt_hidden, base_config.word_emb_dim
            )));
        }
        projection.freeze();

        let mut store = ParamStore::new();
        let mut base_rng = stream(config.seed, 4);
        let net = BaseNet::new(&mut store, &base_config, chars, &mut base_rng)?;
        let mut rng = stream(config.seed, 3);
        let sent_adapt = BiLstm::new(
            &mut store,
            "sent_adapt",
            base_config.word_emb_dim,
            config.sent_adapt_hidden,
            GroupKind::Adapt,
            &mut rng,
        )?;
        let out_adapt = BiLstm::new(
            &mut store,
            "out_adapt",
            base_config.word_hidden,
            config.out_adapt_hidden,
            GroupKind::Adapt,
            &mut rng,
        )?;
        let crf = CrfLayer::new(
            &mut store,
            "crf",
            config.out_adapt_hidden,
            config.label_set.len(),
            GroupKind::Adapt,
            &mut rng,
        )?;
        let tagger = TargetTagger {
            projection,
            embeddings,
            sent_adapt,
            net,
            out_adapt,
            crf,
            labels: config.label_set.clone(),
        };
        Ok(Self {
            config,
            base_config,
            tagger,
            store,
            source_sha256: String::new(),
        })
    }

    pub fn labels(&self) -> &LabelSet {
        &self.tagger.labels
    }

    /// Adam with `base = ψ·α_adapt`, `adapt = α_adapt`.
    pub fn optimizer(&self) -> Adam {
        Adam::new(
            AdamConfig::default(),
            &self.store,
            self.config.base_rate(),
            self.config.adapt_rate(),
        )
    }

    pub fn predict(&self, tokens: &[String]) -> Result<Vec<String>> {
        self.tagger.predict(&self.store, tokens)
    }

    pub fn emissions(&self, tokens: &[String]) -> Result<Tensor> {
        self.tagger.emission_values(&self.store, tokens)
    }

    pub fn evaluate(&self, examples: &[SequenceExample]) -> Result<Metrics> {
        evaluate_tagger(&self.tagger, &self.store, examples)
    }

    pub fn accounting_layers(&self) -> Vec<(usize, usize)> {
        target_layer_dims(&self.base_config, &self.config)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = TargetMeta {
            config: self.config.clone(),
            base: self.base_config.clone(),
            chars: self.tagger.net.chars.vocab.to_string_repr(),
            embeddings: EmbeddingRef::of(&self.tagger.embeddings),
            source_sha256: self.source_sha256.clone(),
        };
        let mut ck = Checkpoint::new(KIND_TARGET, serde_json::to_string(&meta).expect("serializable"));
        ck.push_store(&self.store);
        ck.push(PROJECTION_RECORD, self.tagger.projection.matrix().clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, embeddings: Arc<EmbeddingMatrix>) -> Result<Self> {
        if ck.kind != KIND_TARGET {
            return Err(Error::Checkpoint(format!("kind {:#04x} is not a target-model checkpoint", ck.kind)));
        }
        let meta: TargetMeta =
            serde_json::from_str(&ck.metadata).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        meta.embeddings.check(&embeddings, "target")?;
        let z = ck
            .get(PROJECTION_RECORD)
            .ok_or_else(|| Error::Checkpoint(format!("missing record `{PROJECTION_RECORD}`")))?;
        let projection = ProjectionMatrix::new(z.clone())?;
        let mut model = Self::build(
            meta.config,
            meta.base,
            CharVocab::from_chars(meta.chars.chars()),
            projection,
            embeddings,
        )?;
        ck.load_into(&mut model.store)?;
        model.source_sha256 = meta.source_sha256;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint().to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, embeddings: Arc<EmbeddingMatrix>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&Checkpoint::from_bytes(&bytes)?, embeddings)
    }
}

/// Build the target model: base layers copied bit-exactly from `source`,
/// adaptation layers and the CRF freshly initialized from `cfg.seed`.
pub fn assemble_target(
    source: &SourceModel,
    z: ProjectionMatrix,
    target_embeddings: Arc<EmbeddingMatrix>,
    cfg: TargetModelConfig,
) -> Result<TargetModel> {
    let mut model = TargetModel::build(
        cfg,
        source.config.clone(),
        source.tagger.net.chars.vocab.clone(),
        z,
        target_embeddings,
    )?;
    for id in model.store.members(GroupKind::Base) {
        let name = model.store.name(id).to_string();
        debug_assert_eq!(group_for(&name), GroupKind::Base);
        let src = source.store.id(&name)?;
        model.store.set_value(id, source.store.value(src).clone())?;
    }
    model.source_sha256 = source.checkpoint_sha256()?;
    Ok(model)
}

/// Train the target model with the two-rate scheme and early stopping on
/// `dev` F1. Rates come from the model config; `train_cfg.learning_rate` is
/// not used.
pub fn transfer_train(
    model: &mut TargetModel,
    train: &[SequenceExample],
    dev: &[SequenceExample],
    train_cfg: &TrainConfig,
) -> Result<TrainReport> {
    model.config.validate()?;
    let mut adam = model.optimizer();
    let frozen = model.tagger.projection.matrix().clone();
    let report = fit(&model.tagger, &mut model.store, &mut adam, train, dev, train_cfg)?;
    debug_assert_eq!(&frozen, model.tagger.projection.matrix());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiTrial {
    pub psi: f64,
    pub dev_f1: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct PsiSearch {
    pub trials: Vec<PsiTrial>,
    pub best: TargetModel,
    pub best_report: TrainReport,
}

impl PsiSearch {
    pub fn best_psi(&self) -> f64 {
        self.best.config.psi
    }
}

/// Assemble and train one target model per ψ in `grid`; keep the one with
/// the highest dev F1 (the first on ties).
#[allow(clippy::too_many_arguments)]
pub fn tune_psi(
    source: &SourceModel,
    z: &ProjectionMatrix,
    target_embeddings: Arc<EmbeddingMatrix>,
    cfg: &TargetModelConfig,
    grid: &[f64],
    train: &[SequenceExample],
    dev: &[SequenceExample],
    train_cfg: &TrainConfig,
) -> Result<PsiSearch> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty psi grid".into()));
    }
    let mut trials = Vec::new();
    let mut best: Option<(TargetModel, TrainReport)> = None;
    for &psi in grid {
        let cfg = TargetModelConfig { psi, ..cfg.clone() };
        let mut model = assemble_target(source, z.clone(), target_embeddings.clone(), cfg)?;
        let report = transfer_train(&mut model, train, dev, train_cfg)?;
        info!("psi {psi}: dev F1 {:.4}", report.best_dev_f1);
        trials.push(PsiTrial {
            psi,
            dev_f1: report.best_dev_f1,
            best_epoch: report.best_epoch,
        });
        if best.as_ref().is_none_or(|(_, r)| report.best_dev_f1 > r.best_dev_f1) {
            best = Some((model, report));
        }
    }
    let (best, best_report) = best.expect("non-empty grid");
    Ok(PsiSearch {
        trials,
        best,
        best_report,
    })
}
