//! Exact-match entity-level precision, recall and F1.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::conll::split_tag;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EntitySpan {
    pub kind: String,
    /// Inclusive.
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

/// Maximal runs that begin with `B-X` (or an `I-X` not continuing an `X`)
/// and continue with `I-X`.
pub fn extract_entities<S: AsRef<str>>(labels: &[S]) -> BTreeSet<EntitySpan> {
    let mut spans = BTreeSet::new();
    let mut open: Option<(String, usize)> = None;
    for (i, l) in labels.iter().enumerate() {
        let tag = split_tag(l.as_ref());
        let continues = matches!(
            (&open, tag),
            (Some((ty, _)), Some(('I', t))) if ty == t
        );
        if continues {
            continue;
        }
        if let Some((kind, start)) = open.take() {
            spans.insert(EntitySpan { kind, start, end: i });
        }
        if let Some(('B' | 'I', t)) = tag {
            open = Some((t.to_string(), i));
        }
    }
    if let Some((kind, start)) = open {
        spans.insert(EntitySpan {
            kind,
            start,
            end: labels.len(),
        });
    }
    spans
}

/// BIO labels for `len` tokens covering the given (non-overlapping) spans.
pub fn spans_to_labels(len: usize, spans: &BTreeSet<EntitySpan>) -> Vec<String> {
    let mut out = vec!["O".to_string(); len];
    for s in spans {
        out[s.start] = format!("B-{}", s.kind);
        for l in &mut out[s.start + 1..s.end] {
            *l = format!("I-{}", s.kind);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Micro-averaged scores plus a per-entity-type breakdown.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub overall: Counts,
    pub per_type: BTreeMap<String, Counts>,
}

impl Metrics {
    pub fn precision(&self) -> f64 {
        self.overall.precision()
    }

    pub fn recall(&self) -> f64 {
        self.overall.recall()
    }

    pub fn f1(&self) -> f64 {
        self.overall.f1()
    }

    pub fn merge(&mut self, other: &Metrics) {
        self.overall.add(other.overall);
        for (k, c) in &other.per_type {
            self.per_type.entry(k.clone()).or_default().add(*c);
        }
    }

    /// Score one aligned sentence.
    pub fn sentence<S: AsRef<str>, T: AsRef<str>>(pred: &[S], gold: &[T]) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(Error::InvalidInput(format!(
                "prediction has {} labels but gold has {}",
                pred.len(),
                gold.len()
            )));
        }
        let p = extract_entities(pred);
        let g = extract_entities(gold);
        let mut m = Metrics::default();
        for s in &p {
            let c = m.per_type.entry(s.kind.clone()).or_default();
            if g.contains(s) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for s in g.difference(&p) {
            m.per_type.entry(s.kind.clone()).or_default().fn_ += 1;
        }
        let per_type = m.per_type.values().copied().collect::<Vec<_>>();
        for c in per_type {
            m.overall.add(c);
        }
        Ok(m)
    }
}

/// Corpus-level entity scores over aligned label sequences.
pub fn evaluate<S: AsRef<str>, T: AsRef<str>>(pred: &[Vec<S>], gold: &[Vec<T>]) -> Result<Metrics> {
    if pred.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "{} predicted sentences but {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let mut total = Metrics::default();
    for (p, g) in pred.iter().zip(gold) {
        total.merge(&Metrics::sentence(p, g)?);
    }
    Ok(total)
}
