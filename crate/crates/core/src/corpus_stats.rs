//! Corpus word statistics and the confidence-weighted pivot lexicon that
//! anchors the target→source embedding projection.
//!
//! Identical words frequent in both corpora form the `P1` part of the
//! lexicon; an optional hand-made word-pair list (for example a text
//! normalization lexicon) forms `P2`. Every entry carries a confidence
//! `c = 2·f̄s·f̄t / (f̄s + f̄t)` built from max-normalized frequencies.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default rank cutoff for the `P1` frequency thresholds.
pub const DEFAULT_TOP_K: usize = 5000;

/// Lowercase and split on whitespace.
pub fn tokenize_line(line: &str) -> Vec<String> {
    line.split_whitespace().map(|t| t.to_lowercase()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrequencyTable {
    counts: BTreeMap<String, u64>,
    total_tokens: u64,
    max_count: u64,
}

/// Count token occurrences over a stream of tokenized sentences.
pub fn count_frequencies<I, S, T>(corpus: I) -> Result<FrequencyTable>
where
    I: IntoIterator<Item = S>,
    S: IntoIterator<Item = T>,
    T: AsRef<str>,
{
    let mut table = FrequencyTable::default();
    for sentence in corpus {
        for tok in sentence {
            table.add(tok.as_ref(), 1)?;
        }
    }
    if table.total_tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(table)
}

/// Sharded variant of [`count_frequencies`]; the merge is order independent
/// so the result is identical to the sequential count.
pub fn count_frequencies_parallel(corpus: &[Vec<String>]) -> Result<FrequencyTable> {
    let table = corpus
        .par_chunks(256)
        .map(|chunk| {
            let mut t = FrequencyTable::default();
            for tok in chunk.iter().flatten() {
                t.add(tok, 1)?;
            }
            Ok::<_, Error>(t)
        })
        .try_reduce(FrequencyTable::default, |mut a, b| {
            a.merge(&b);
            Ok(a)
        })?;
    if table.total_tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(table)
}

/// Read a raw corpus, one sentence per line, tokenized by [`tokenize_line`].
pub fn read_corpus(path: &Path) -> Result<FrequencyTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = FrequencyTable::default();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        for tok in tokenize_line(&line) {
            table.add(&tok, 1)?;
        }
    }
    if table.total_tokens == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(table)
}

impl FrequencyTable {
    fn add(&mut self, word: &str, count: u64) -> Result<()> {
        if word.is_empty() {
            return Err(Error::InvalidInput("empty token".into()));
        }
        let c = self.counts.entry(word.to_string()).or_insert(0);
        *c += count;
        self.max_count = self.max_count.max(*c);
        self.total_tokens += count;
        Ok(())
    }

    pub fn merge(&mut self, other: &FrequencyTable) {
        for (w, &c) in &other.counts {
            let e = self.counts.entry(w.clone()).or_insert(0);
            *e += c;
            self.max_count = self.max_count.max(*e);
        }
        self.total_tokens += other.total_tokens;
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn max_count(&self) -> u64 {
        self.max_count
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(w, &c)| (w.as_str(), c))
    }

    /// Words ranked by count (descending), ties by word.
    pub fn ranked(&self) -> Vec<(&str, u64)> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    /// Count of the `top_k`-th most frequent word. Falls back to the
    /// smallest count when the vocabulary is shorter than `top_k`.
    pub fn threshold(&self, top_k: usize) -> u64 {
        let ranked = self.ranked();
        if top_k == 0 || ranked.is_empty() {
            return ranked.first().map_or(0, |r| r.1);
        }
        match ranked.get(top_k - 1) {
            Some(&(_, c)) => c,
            None => {
                warn!(
                    "top_k = {top_k} exceeds vocabulary size {}; using the smallest count",
                    ranked.len()
                );
                ranked.last().map_or(0, |r| r.1)
            }
        }
    }

    /// `f(w) / max f`, with unseen words smoothed to a count of one.
    pub fn normalized(&self, word: &str) -> f64 {
        let c = self.count(word).max(1);
        c as f64 / self.max_count.max(1) as f64
    }

    /// "word count" per line, most frequent first.
    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (word, c) in self.ranked() {
            writeln!(w, "{word} {c}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = FrequencyTable::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let cols: Vec<&str> = line.split_whitespace().collect();
            match cols.as_slice() {
                [] => continue,
                [w, c] => {
                    let c: u64 = c
                        .parse()
                        .map_err(|_| Error::parse(path, i + 1, format!("bad count `{c}`")))?;
                    table.add(w, c)?;
                }
                _ => return Err(Error::parse(path, i + 1, "expected 2 columns")),
            }
        }
        if table.total_tokens == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconConfig {
    pub top_k: usize,
    pub p2_path: Option<PathBuf>,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            p2_path: None,
        }
    }
}

/// Which part of the lexicon an entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Identical word frequent in both corpora.
    P1,
    /// Supplied word-pair list.
    P2,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::P1 => "P1",
            Origin::P2 => "P2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PivotEntry {
    pub source: String,
    pub target: String,
    pub confidence: f64,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PivotLexicon {
    pub entries: Vec<PivotEntry>,
}

/// Identical words whose counts reach the rank-`top_k` threshold in both
/// tables, sorted lexicographically.
pub fn build_p1(ft_s: &FrequencyTable, ft_t: &FrequencyTable, cfg: &LexiconConfig) -> Vec<(String, String)> {
    let phi_s = ft_s.threshold(cfg.top_k);
    let phi_t = ft_t.threshold(cfg.top_k);
    // BTreeMap iteration is already lexicographic.
    ft_s.iter()
        .filter(|&(w, c)| c >= phi_s && ft_t.count(w) >= phi_t.max(1))
        .map(|(w, _)| (w.to_string(), w.to_string()))
        .collect()
}

/// Parse a word-pair list of `target_variant source_form` lines into
/// `(source, target)` pairs. Blank and `#` lines are ignored; the first
/// occurrence of a duplicate pair wins.
pub fn load_p2(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_p2(BufReader::new(file), path)
}

pub(crate) fn parse_p2<R: BufRead>(reader: R, path: &Path) -> Result<Vec<(String, String)>> {
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        let [target, source] = cols.as_slice() else {
            return Err(Error::parse(path, i + 1, "expected 2 columns"));
        };
        let pair = (source.to_lowercase(), target.to_lowercase());
        if seen.insert(pair.clone()) {
            pairs.push(pair);
        }
    }
    Ok(pairs)
}

/// Sørensen–Dice combination of the two normalized frequencies.
pub fn confidence(w_s: &str, w_t: &str, ft_s: &FrequencyTable, ft_t: &FrequencyTable) -> f64 {
    dice(ft_s.normalized(w_s), ft_t.normalized(w_t))
}

/// `2ab / (a + b)`; zero when both inputs are zero.
pub fn dice(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Union of `p1` and `p2` with confidences attached. A pair present in both
/// is kept once, tagged `P1`.
pub fn merge_lexicon(
    p1: &[(String, String)],
    p2: &[(String, String)],
    ft_s: &FrequencyTable,
    ft_t: &FrequencyTable,
) -> Result<PivotLexicon> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    let tagged = p1
        .iter()
        .map(|p| (p, Origin::P1))
        .chain(p2.iter().map(|p| (p, Origin::P2)));
    for ((s, t), origin) in tagged {
        if seen.insert((s.as_str(), t.as_str())) {
            entries.push(PivotEntry {
                source: s.clone(),
                target: t.clone(),
                confidence: confidence(s, t, ft_s, ft_t),
                origin,
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyLexicon);
    }
    Ok(PivotLexicon { entries })
}

pub fn build_lexicon(ft_s: &FrequencyTable, ft_t: &FrequencyTable, cfg: &LexiconConfig) -> Result<PivotLexicon> {
    if cfg.top_k == 0 {
        return Err(Error::InvalidInput("top_k must be at least 1".into()));
    }
    let p1 = build_p1(ft_s, ft_t, cfg);
    let p2 = match &cfg.p2_path {
        Some(p) => load_p2(p)?,
        None => Vec::new(),
    };
    merge_lexicon(&p1, &p2, ft_s, ft_t)
}

impl PivotLexicon {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.entries.iter().filter(|e| e.origin == origin).count()
    }

    /// Identity pairs with confidence 1 over `words`.
    pub fn identity<S: AsRef<str>>(words: &[S]) -> Self {
        Self {
            entries: words
                .iter()
                .map(|w| PivotEntry {
                    source: w.as_ref().to_string(),
                    target: w.as_ref().to_string(),
                    confidence: 1.0,
                    origin: Origin::P1,
                })
                .collect(),
        }
    }

    /// Three columns `w_s w_t c`, grouped under `# P1` / `# P2` markers.
    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for origin in [Origin::P1, Origin::P2] {
            let mut group = self.entries.iter().filter(|e| e.origin == origin).peekable();
            if group.peek().is_none() {
                continue;
            }
            writeln!(w, "# {origin}")?;
            for e in group {
                writeln!(w, "{} {} {:.6}", e.source, e.target, e.confidence)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut origin = Origin::P1;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let trimmed = line.trim();
            match trimmed {
                "" => continue,
                "# P1" => origin = Origin::P1,
                "# P2" => origin = Origin::P2,
                _ if trimmed.starts_with('#') => continue,
                _ => {
                    let cols: Vec<&str> = trimmed.split_whitespace().collect();
                    let [s, t, c] = cols.as_slice() else {
                        return Err(Error::parse(path, i + 1, "expected 3 columns"));
                    };
                    let confidence: f64 = c
                        .parse()
                        .ok()
                        .filter(|c: &f64| (0.0..=1.0).contains(c))
                        .ok_or_else(|| Error::parse(path, i + 1, format!("bad confidence `{c}`")))?;
                    entries.push(PivotEntry {
                        source: s.to_string(),
                        target: t.to_string(),
                        confidence,
                        origin,
                    });
                }
            }
        }
        if entries.is_empty() {
            return Err(Error::EmptyLexicon);
        }
        Ok(Self { entries })
    }
}
