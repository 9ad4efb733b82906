//! Two-column CoNLL reading and writing with BIO repair.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::info;

use crate::error::{Error, Result};
use crate::pipeline::data::{SequenceExample, OUTSIDE};

#[derive(Debug, Clone, PartialEq)]
pub struct ConllDocument {
    pub examples: Vec<SequenceExample>,
    /// Number of `I-X` tags rewritten to `B-X`.
    pub repairs: usize,
}

/// Split a BIO tag into prefix and entity type.
pub fn split_tag(tag: &str) -> Option<(char, &str)> {
    if tag == OUTSIDE {
        return Some(('O', ""));
    }
    let (prefix, ty) = tag.split_once('-')?;
    match prefix {
        "B" | "I" if !ty.is_empty() => Some((prefix.chars().next()?, ty)),
        _ => None,
    }
}

/// Rewrite `I-X` that does not continue an `X` entity into `B-X`.
/// Returns the number of rewritten tags.
pub fn repair_bio(labels: &mut [String]) -> usize {
    let mut repairs = 0;
    let mut prev_type: Option<String> = None;
    for l in labels.iter_mut() {
        match split_tag(l) {
            Some(('I', ty)) => {
                if prev_type.as_deref() != Some(ty) {
                    *l = format!("B-{ty}");
                    repairs += 1;
                }
                prev_type = split_tag(l).map(|(_, t)| t.to_string());
            }
            Some(('B', ty)) => prev_type = Some(ty.to_string()),
            _ => prev_type = None,
        }
    }
    repairs
}

pub fn read_conll(path: &Path) -> Result<ConllDocument> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let doc = parse_conll(BufReader::new(file), path)?;
    if doc.repairs > 0 {
        info!("{}: repaired {} BIO tags", path.display(), doc.repairs);
    }
    Ok(doc)
}

pub fn parse_conll<R: BufRead>(reader: R, path: &Path) -> Result<ConllDocument> {
    let mut examples = Vec::new();
    let mut repairs = 0;
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    let mut flush = |tokens: &mut Vec<String>, labels: &mut Vec<String>| {
        if !tokens.is_empty() {
            repairs += repair_bio(labels);
            examples.push(SequenceExample {
                tokens: std::mem::take(tokens),
                labels: std::mem::take(labels),
            });
        }
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            flush(&mut tokens, &mut labels);
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [tok, tag] = cols.as_slice() else {
            return Err(Error::parse(path, i + 1, format!("expected 2 columns, got {}", cols.len())));
        };
        if split_tag(tag).is_none() {
            return Err(Error::parse(path, i + 1, format!("invalid BIO tag `{tag}`")));
        }
        tokens.push(tok.to_string());
        labels.push(tag.to_string());
    }
    flush(&mut tokens, &mut labels);
    Ok(ConllDocument { examples, repairs })
}

pub fn write_conll<W: Write>(w: &mut W, examples: &[SequenceExample]) -> std::io::Result<()> {
    for (k, ex) in examples.iter().enumerate() {
        if k > 0 {
            writeln!(w)?;
        }
        for (t, l) in ex.tokens.iter().zip(&ex.labels) {
            writeln!(w, "{t} {l}")?;
        }
    }
    Ok(())
}

pub fn save_conll(path: &Path, examples: &[SequenceExample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_conll(&mut w, examples)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
