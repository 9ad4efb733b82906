//! The BLSTM-CRF tagger: a character BLSTM word encoder, a word-level BLSTM
//! over `[word embedding ; char features]`, and a linear-chain CRF.

pub mod char_encoder;
pub mod crf;

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use nerxfer_autograd::{Adam, AdamConfig, Axis, Checkpoint, Graph, GroupKind, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::nn::{BiLstm, Mode};
use crate::pipeline::data::{Dataset, LabelSet, SequenceExample};
use crate::pipeline::eval::Metrics;
use crate::training::{evaluate_tagger, fit, stream, Tagger, TrainConfig, TrainReport};

pub use char_encoder::{CharEncoder, CharVocab};
pub use crf::{CrfLayer, CrfPotentials};

/// Checkpoint kind byte of a source (or INIT-initialized) model.
pub const KIND_SOURCE: u8 = 0x01;
/// Checkpoint kind byte of the target model of a MULT run.
pub const KIND_MULT_TARGET: u8 = 0x03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModelConfig {
    pub char_emb_dim: usize,
    pub char_hidden: usize,
    pub word_emb_dim: usize,
    pub word_hidden: usize,
    pub label_set: LabelSet,
}

impl BaseModelConfig {
    /// Default geometry (char 25→50, word 200+50→200) over `label_set`.
    pub fn new(label_set: LabelSet) -> Self {
        Self {
            char_emb_dim: 25,
            char_hidden: 50,
            word_emb_dim: 200,
            word_hidden: 200,
            label_set,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("char_emb_dim", self.char_emb_dim),
            ("char_hidden", self.char_hidden),
            ("word_emb_dim", self.word_emb_dim),
            ("word_hidden", self.word_hidden),
        ] {
            if v == 0 {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("char_hidden", self.char_hidden), ("word_hidden", self.word_hidden)] {
            if v % 2 != 0 {
                return Err(Error::InvalidInput(format!("{name} must be even, got {v}")));
            }
        }
        Ok(())
    }

    /// Input width of the word-level BLSTM.
    pub fn word_input_dim(&self) -> usize {
        self.word_emb_dim + self.char_hidden
    }
}

/// Parameters shared by every model built on the base encoder live in the
/// `base` group; output layers live in `adapt`.
pub fn group_for(name: &str) -> GroupKind {
    if name.starts_with("char.") || name.starts_with("word.") {
        GroupKind::Base
    } else {
        GroupKind::Adapt
    }
}

/// Character encoder and word-level BLSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseNet {
    pub chars: CharEncoder,
    pub word: BiLstm,
}

impl BaseNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &BaseModelConfig,
        vocab: CharVocab,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let chars = CharEncoder::new(store, vocab, config.char_emb_dim, config.char_hidden, GroupKind::Base, rng)?;
        let word = BiLstm::new(store, "word", config.word_input_dim(), config.word_hidden, GroupKind::Base, rng)?;
        Ok(Self { chars, word })
    }

    pub fn attach(store: &ParamStore, vocab: CharVocab) -> Result<Self> {
        Ok(Self {
            chars: CharEncoder::attach(store, vocab)?,
            word: BiLstm::attach(store, "word")?,
        })
    }

    /// `[L, word_emb_dim + char_hidden]` inputs of the word BLSTM given
    /// per-token word vectors `words` (`[L, word_emb_dim]`).
    pub fn join_char_features(&self, g: &mut Graph, store: &ParamStore, words: Var, tokens: &[String]) -> Result<Var> {
        let chars = self.chars.encode_words(g, store, tokens)?;
        Ok(g.concat(&[words, chars], Axis::Cols)?)
    }

    /// Per-token `word_hidden` states.
    pub fn encode_sentence(&self, g: &mut Graph, store: &ParamStore, inputs: Var) -> Result<Var> {
        self.word.forward(g, store, inputs)
    }

    pub fn encode_word_chars(&self, g: &mut Graph, store: &ParamStore, word: &str) -> Result<Var> {
        self.chars.encode_word(g, store, word)
    }
}

/// `[L, dim]` table of word vectors; unknown words map to zero vectors.
pub fn lookup_tokens(embeddings: &EmbeddingMatrix, tokens: &[String]) -> Result<Tensor> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("empty sentence".into()));
    }
    let data = tokens.iter().flat_map(|t| embeddings.vector_or_zero(t)).collect();
    Ok(Tensor::matrix(tokens.len(), embeddings.dim(), data)?)
}

/// A base network with a CRF head reading the word BLSTM directly.
#[derive(Debug, Clone)]
pub struct BaseTagger {
    pub net: BaseNet,
    pub crf: CrfLayer,
    pub labels: LabelSet,
    pub embeddings: Arc<EmbeddingMatrix>,
}

impl BaseTagger {
    /// Word-BLSTM inputs before dropout.
    pub fn word_inputs(&self, g: &mut Graph, store: &ParamStore, tokens: &[String]) -> Result<Var> {
        let words = g.constant(lookup_tokens(&self.embeddings, tokens)?)?;
        self.net.join_char_features(g, store, words, tokens)
    }
}

impl Tagger for BaseTagger {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn crf(&self) -> &CrfLayer {
        &self.crf
    }

    fn emissions(&self, g: &mut Graph, store: &ParamStore, tokens: &[String], mode: &mut Mode) -> Result<Var> {
        let x = self.word_inputs(g, store, tokens)?;
        let x = mode.dropout(g, x)?;
        let h = self.net.encode_sentence(g, store, x)?;
        self.crf.emissions(g, store, h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct EmbeddingRef {
    pub fingerprint: String,
    pub dim: usize,
    pub vocab_size: usize,
}

impl EmbeddingRef {
    pub fn of(e: &EmbeddingMatrix) -> Self {
        Self {
            fingerprint: e.fingerprint(),
            dim: e.dim(),
            vocab_size: e.len(),
        }
    }

    /// Warn when `e` is not the table the model was saved with.
    pub fn check(&self, e: &EmbeddingMatrix, what: &str) -> Result<()> {
        if self.dim != e.dim() {
            return Err(Error::Dimension(format!(
                "{what} checkpoint expects {}-dim embeddings, got {}",
                self.dim,
                e.dim()
            )));
        }
        if self.fingerprint != e.fingerprint() {
            warn!("{what} checkpoint was saved with a different embedding table");
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SourceMeta {
    config: BaseModelConfig,
    chars: String,
    embeddings: EmbeddingRef,
}

/// A trained (or freshly initialized) base tagger with its parameters.
#[derive(Debug, Clone)]
pub struct SourceModel {
    pub config: BaseModelConfig,
    pub tagger: BaseTagger,
    pub store: ParamStore,
    /// Checkpoint kind byte.
    pub kind: u8,
}

impl SourceModel {
    pub fn new(config: BaseModelConfig, embeddings: Arc<EmbeddingMatrix>, chars: CharVocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if embeddings.dim() != config.word_emb_dim {
            return Err(Error::Dimension(format!(
                "word_emb_dim is {} but the embedding table has dim {}",
                config.word_emb_dim,
                embeddings.dim()
            )));
        }
        let mut rng = stream(seed, 3);
        let mut store = ParamStore::new();
        let net = BaseNet::new(&mut store, &config, chars, &mut rng)?;
        let crf = CrfLayer::new(
            &mut store,
            "crf",
            config.word_hidden,
            config.label_set.len(),
            group_for("crf"),
            &mut rng,
        )?;
        let tagger = BaseTagger {
            net,
            crf,
            labels: config.label_set.clone(),
            embeddings,
        };
        Ok(Self {
            config,
            tagger,
            store,
            kind: KIND_SOURCE,
        })
    }

    pub fn labels(&self) -> &LabelSet {
        &self.tagger.labels
    }

    pub fn embeddings(&self) -> &Arc<EmbeddingMatrix> {
        &self.tagger.embeddings
    }

    pub fn optimizer(&self, base_rate: f64, adapt_rate: f64) -> Adam {
        Adam::new(AdamConfig::default(), &self.store, base_rate, adapt_rate)
    }

    pub fn predict(&self, tokens: &[String]) -> Result<Vec<String>> {
        self.tagger.predict(&self.store, tokens)
    }

    pub fn evaluate(&self, examples: &[SequenceExample]) -> Result<Metrics> {
        evaluate_tagger(&self.tagger, &self.store, examples)
    }

    pub fn encode_word_chars(&self, word: &str) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let v = self.tagger.net.encode_word_chars(&mut g, &self.store, word)?;
        Ok(g.value(v).data().to_vec())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = SourceMeta {
            config: self.config.clone(),
            chars: self.tagger.net.chars.vocab.to_string_repr(),
            embeddings: EmbeddingRef::of(&self.tagger.embeddings),
        };
        let mut ck = Checkpoint::new(self.kind, serde_json::to_string(&meta).expect("serializable"));
        ck.push_store(&self.store);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint, embeddings: Arc<EmbeddingMatrix>) -> Result<Self> {
        if ck.kind != KIND_SOURCE && ck.kind != KIND_MULT_TARGET {
            return Err(Error::Checkpoint(format!("kind {:#04x} is not a base-model checkpoint", ck.kind)));
        }
        let meta: SourceMeta =
            serde_json::from_str(&ck.metadata).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        meta.embeddings.check(&embeddings, "source")?;
        let mut model = Self::new(meta.config, embeddings, CharVocab::from_chars(meta.chars.chars()), 0)?;
        ck.load_into(&mut model.store)?;
        model.kind = ck.kind;
        Ok(model)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        Ok(self.to_checkpoint()?.write_to(w)?)
    }

    pub fn read_from<R: Read>(r: &mut R, embeddings: Arc<EmbeddingMatrix>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read_from(r)?, embeddings)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_checkpoint()?.to_bytes();
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, embeddings: Arc<EmbeddingMatrix>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&Checkpoint::from_bytes(&bytes)?, embeddings)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn checkpoint_sha256(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_checkpoint()?.to_bytes())))
    }
}

/// Character vocabulary of every token in `examples`.
pub fn char_vocab_of(examples: &[SequenceExample]) -> CharVocab {
    CharVocab::from_words(examples.iter().flat_map(|e| e.tokens.iter().map(String::as_str)))
}

/// Train a source tagger on `data.train`, selecting on `data`'s dev set.
pub fn train_source(
    data: &Dataset,
    embeddings: Arc<EmbeddingMatrix>,
    config: &BaseModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(SourceModel, TrainReport)> {
    if data.train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    for ex in data.train.iter().chain(&data.dev) {
        config.label_set.encode(&ex.labels)?;
    }
    let mut model = SourceModel::new(config.clone(), embeddings, char_vocab_of(&data.train), train_cfg.seed)?;
    let mut adam = model.optimizer(train_cfg.learning_rate, train_cfg.learning_rate);
    let report = fit(&model.tagger, &mut model.store, &mut adam, &data.train, &data.dev, train_cfg)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SourceModel {
        let emb = EmbeddingMatrix::from_rows([("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]).unwrap();
        let labels = LabelSet::new(vec!["O".into(), "B-X".into()]).unwrap();
        let cfg = BaseModelConfig {
            char_emb_dim: 3,
            char_hidden: 4,
            word_emb_dim: 2,
            word_hidden: 6,
            label_set: labels,
        };
        SourceModel::new(cfg, Arc::new(emb), CharVocab::from_words(["ab"]), 7).unwrap()
    }

    #[test]
    fn groups_split_encoder_from_head() {
        let m = tiny();
        for (_, p) in m.store.iter() {
            assert_eq!(p.group, group_for(&p.name), "{}", p.name);
        }
        assert!(m.store.num_scalars(GroupKind::Base) > 0);
        assert!(m.store.num_scalars(GroupKind::Adapt) > 0);
    }

    #[test]
    fn default_char_features_have_fifty_dims() {
        let emb = EmbeddingMatrix::from_rows([("a", vec![0.5; 200])]).unwrap();
        let labels = LabelSet::new(vec!["O".into()]).unwrap();
        let m = SourceModel::new(BaseModelConfig::new(labels), Arc::new(emb), CharVocab::from_words(["a"]), 0).unwrap();
        let v = m.encode_word_chars("a").unwrap();
        assert_eq!(v.len(), 50);
        assert_eq!(v, m.encode_word_chars("a").unwrap());
        assert_eq!(m.config.word_input_dim(), 250);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = tiny();
        let bytes = m.to_checkpoint().unwrap().to_bytes();
        let back = SourceModel::read_from(&mut bytes.as_slice(), m.embeddings().clone()).unwrap();
        assert_eq!(back.store.snapshot(), m.store.snapshot());
        let s: Vec<String> = ["a", "zz", "b"].iter().map(|s| s.to_string()).collect();
        assert_eq!(back.predict(&s).unwrap(), m.predict(&s).unwrap());
    }

    #[test]
    fn empty_sentence_is_rejected() {
        assert!(tiny().predict(&[]).is_err());
    }
}
