//! CoNLL input and output, span extraction and scoring.

mod common;

use common::words;
use nerxfer::pipeline::conll::{parse_conll, write_conll};
use nerxfer::pipeline::eval::{evaluate, extract_entities, spans_to_labels};
use nerxfer::pipeline::SequenceExample;
use proptest::prelude::*;
use std::path::Path;

fn parse(text: &str) -> nerxfer::pipeline::conll::ConllDocument {
    parse_conll(text.as_bytes(), Path::new("inline")).unwrap()
}

#[test]
fn reads_sentences_and_repairs_orphan_inside_tags() {
    let doc = parse("John B-PER\nSmith I-PER\n\nok O\n");
    assert_eq!(doc.examples.len(), 2);
    assert_eq!(doc.examples[0].tokens, words(&["John", "Smith"]));
    let doc = parse("x I-LOC\n");
    assert_eq!(doc.examples[0].labels, words(&["B-LOC"]));
    assert_eq!(doc.repairs, 1);
    assert!(parse("").examples.is_empty());
}

#[test]
fn evaluator_examples() {
    let gold = vec![words(&["B-PER", "I-PER", "O"])];
    let m = evaluate(&gold, &gold).unwrap();
    assert_eq!((m.precision(), m.recall(), m.f1()), (1.0, 1.0, 1.0));
    let m = evaluate(&[words(&["B-PER", "O", "O"])], &gold).unwrap();
    assert_eq!((m.precision(), m.recall(), m.f1()), (0.0, 0.0, 0.0));
    let two = vec![words(&["B-PER", "O", "B-LOC"])];
    let m = evaluate(&[words(&["B-PER", "O", "O"])], &two).unwrap();
    assert_eq!((m.precision(), m.recall()), (1.0, 0.5));
    assert!((m.f1() - 2.0 / 3.0).abs() < 1e-15);
    assert!(evaluate(&[words(&["O"])], &gold).is_err());
}

fn labeling() -> impl Strategy<Value = Vec<String>> {
    let tag = prop::sample::select(vec!["O", "B-PER", "I-PER", "B-LOC", "I-LOC"]).prop_map(str::to_string);
    prop::collection::vec(tag, 1..12)
}

proptest! {
    #[test]
    fn span_round_trip_is_idempotent(labels in labeling()) {
        let spans = extract_entities(&labels);
        let again = extract_entities(&spans_to_labels(labels.len(), &spans));
        prop_assert_eq!(spans, again);
    }

    #[test]
    fn conll_round_trip_is_exact_after_repair(sentences in prop::collection::vec(labeling(), 1..6)) {
        let mut text = String::new();
        for labels in &sentences {
            for (i, l) in labels.iter().enumerate() {
                text.push_str(&format!("w{i} {l}\n"));
            }
            text.push('\n');
        }
        let first = parse(&text);
        let mut buf = Vec::new();
        write_conll(&mut buf, &first.examples).unwrap();
        let second = parse(std::str::from_utf8(&buf).unwrap());
        prop_assert_eq!(second.repairs, 0);
        prop_assert_eq!(&second.examples, &first.examples);
        let mut again = Vec::new();
        write_conll(&mut again, &second.examples).unwrap();
        prop_assert_eq!(again, buf);
    }

    #[test]
    fn metrics_ignore_sentence_order(pairs in prop::collection::vec(labeling(), 1..8), rot in 0usize..8) {
        let gold: Vec<Vec<String>> = pairs.clone();
        let pred: Vec<Vec<String>> = pairs.iter().map(|l| l.iter().rev().cloned().collect()).collect();
        let m = evaluate(&pred, &gold).unwrap();
        let k = rot % gold.len();
        let (mut g2, mut p2) = (gold.clone(), pred.clone());
        g2.rotate_left(k);
        p2.rotate_left(k);
        let m2 = evaluate(&p2, &g2).unwrap();
        prop_assert_eq!((m.precision(), m.recall(), m.f1()), (m2.precision(), m2.recall(), m2.f1()));
    }

    #[test]
    fn perfect_prediction_scores_one(labels in labeling()) {
        let m = evaluate(std::slice::from_ref(&labels), std::slice::from_ref(&labels)).unwrap();
        if extract_entities(&labels).is_empty() {
            prop_assert_eq!(m.f1(), 0.0);
        } else {
            prop_assert_eq!((m.precision(), m.recall(), m.f1()), (1.0, 1.0, 1.0));
        }
    }
}

#[test]
fn examples_reject_misaligned_labels() {
    assert!(SequenceExample::new(words(&["a", "b"]), words(&["O"])).is_err());
}
