//! Character-level word representations from a BLSTM over character embeddings.

use std::collections::HashMap;

use nerxfer_autograd::{Axis, Graph, GroupKind, ParamId, ParamStore, Var};
use rand::Rng;

use crate::error::Result;
use crate::nn::{glorot, BiLstm};

/// Character inventory; id 0 is reserved for unknown characters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub const UNK: usize = 0;

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut v = Self {
            chars: Vec::new(),
            index: HashMap::new(),
        };
        for c in chars {
            if !v.index.contains_key(&c) {
                v.index.insert(c, v.chars.len() + 1);
                v.chars.push(c);
            }
        }
        v
    }

    /// Characters of `words` in first-seen order.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_chars(words.into_iter().flat_map(str::chars))
    }

    /// Size including the unknown slot.
    pub fn len(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(Self::UNK)
    }

    pub fn ids(&self, word: &str) -> Vec<usize> {
        word.chars().map(|c| self.id(c)).collect()
    }

    /// Known characters as a string (UNK excluded), for serialization.
    pub fn to_string_repr(&self) -> String {
        self.chars.iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharEncoder {
    pub vocab: CharVocab,
    pub table: ParamId,
    pub lstm: BiLstm,
}

impl CharEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab: CharVocab,
        emb_dim: usize,
        hidden: usize,
        group: GroupKind,
        rng: &mut R,
    ) -> Result<Self> {
        let table = store.add("char.table", glorot(rng, vocab.len(), emb_dim), group)?;
        let lstm = BiLstm::new(store, "char.lstm", emb_dim, hidden, group, rng)?;
        Ok(Self { vocab, table, lstm })
    }

    pub fn attach(store: &ParamStore, vocab: CharVocab) -> Result<Self> {
        Ok(Self {
            vocab,
            table: store.id("char.table")?,
            lstm: BiLstm::attach(store, "char.lstm")?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.lstm.hidden()
    }

    /// `[1, hidden]`: final forward state joined with final backward state.
    pub fn encode_word(&self, g: &mut Graph, store: &ParamStore, word: &str) -> Result<Var> {
        let mut ids = self.vocab.ids(word);
        if ids.is_empty() {
            ids.push(CharVocab::UNK);
        }
        let table = g.param(store, self.table);
        let chars = g.gather_rows(table, &ids)?;
        self.lstm.final_state(g, store, chars)
    }

    /// `[L, hidden]` for a sentence.
    pub fn encode_words(&self, g: &mut Graph, store: &ParamStore, words: &[String]) -> Result<Var> {
        let rows = words
            .iter()
            .map(|w| self.encode_word(g, store, w))
            .collect::<Result<Vec<_>>>()?;
        Ok(g.concat(&rows, Axis::Rows)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.table];
        p.extend(self.lstm.params());
        p
    }
}
