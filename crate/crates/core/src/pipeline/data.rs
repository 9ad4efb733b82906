//! Labeled sentences, label inventories and train/dev/test bundles.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::conll::read_conll;

pub const OUTSIDE: &str = "O";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceExample {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
}

impl SequenceExample {
    pub fn new(tokens: Vec<String>, labels: Vec<String>) -> Result<Self> {
        if tokens.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} tokens but {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        Ok(Self { tokens, labels })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Ordered label inventory; `O` always has index 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if !labels.iter().any(|l| l == OUTSIDE) {
            return Err(Error::InvalidInput("label set must contain \"O\"".into()));
        }
        let mut index = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self { labels, index })
    }

    /// `O` first, then every other label seen in `examples` in sorted order.
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a SequenceExample>) -> Self {
        let others: BTreeSet<&str> = examples
            .into_iter()
            .flat_map(|e| e.labels.iter().map(String::as_str))
            .filter(|&l| l != OUTSIDE)
            .collect();
        let mut labels = vec![OUTSIDE.to_string()];
        labels.extend(others.into_iter().map(str::to_string));
        Self::new(labels).expect("contains O and no duplicates")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn encode(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| self.id(l).ok_or_else(|| Error::UnknownLabel(l.clone())))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.labels[i].clone()).collect()
    }

    pub fn contains_all(&self, examples: &[SequenceExample]) -> bool {
        examples.iter().flat_map(|e| &e.labels).all(|l| self.id(l).is_some())
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(s: LabelSet) -> Self {
        s.labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SequenceExample>,
    pub dev: Vec<SequenceExample>,
    pub test: Vec<SequenceExample>,
    pub label_set: LabelSet,
}

impl Dataset {
    /// Derive the label set from train ∪ dev; test labels outside it become `O`.
    pub fn new(
        train: Vec<SequenceExample>,
        dev: Vec<SequenceExample>,
        mut test: Vec<SequenceExample>,
    ) -> Self {
        let label_set = LabelSet::from_examples(train.iter().chain(&dev));
        let mut unknown = 0;
        for ex in &mut test {
            for l in &mut ex.labels {
                if label_set.id(l).is_none() {
                    *l = OUTSIDE.to_string();
                    unknown += 1;
                }
            }
        }
        if unknown > 0 {
            warn!("{unknown} test labels not in the training label set were mapped to O");
        }
        Self {
            train,
            dev,
            test,
            label_set,
        }
    }

    pub fn load(train: &Path, dev: Option<&Path>, test: Option<&Path>) -> Result<Self> {
        let read = |p: Option<&Path>| -> Result<Vec<SequenceExample>> {
            match p {
                Some(p) => Ok(read_conll(p)?.examples),
                None => Ok(Vec::new()),
            }
        };
        let examples = read(Some(train))?;
        if examples.is_empty() {
            return Err(Error::InvalidInput(format!("{}: no training sentences", train.display())));
        }
        Ok(Self::new(examples, read(dev)?, read(test)?))
    }

    /// Sentences used for model selection: dev, or train when dev is empty.
    pub fn selection_set(&self) -> &[SequenceExample] {
        if self.dev.is_empty() {
            &self.train
        } else {
            &self.dev
        }
    }
}
