//! Hand-labelled responses quoted from published transcripts. Every record
//! must come out of the classifier with the labelled stance, kind and amount.

use opinion_core::classifier::{Classification, Classifier, NoKind};
use opinion_core::{Stance, UpdateMode};
use serde::Deserialize;

#[derive(Deserialize)]
struct Record {
    text: String,
    mode: UpdateMode,
    item_a: String,
    item_b: String,
    stance: Stance,
    no_kind: Option<NoKind>,
    allocation: Option<f64>,
    allocation_range: Option<(f64, f64)>,
}

fn records() -> Vec<Record> {
    include_str!("../data/corpus.jsonl")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("corpus line"))
        .collect()
}

#[test]
fn corpus_is_large_enough() {
    let r = records();
    assert!(r.len() >= 30);
    for s in Stance::ALL {
        assert!(r.iter().any(|x| x.stance == s), "{s:?} missing from corpus");
    }
}

#[test]
fn corpus_classifies_exactly() {
    let base = Classifier::default();
    let mut failures = Vec::new();
    let recs = records();
    for (i, r) in recs.iter().enumerate() {
        let c = base.clone().with_items(&r.item_a, &r.item_b);
        let got = match c.classify(&r.text, r.mode) {
            Classification::Explicit(o) => o,
            other => {
                failures.push(format!("#{i}: got {other:?}: {}", r.text));
                continue;
            }
        };
        let ok = got.stance == r.stance
            && got.no_kind == r.no_kind
            && got.allocation.map(|v| (v * 1e6).round()) == r.allocation.map(|v| (v * 1e6).round())
            && got.allocation_range == r.allocation_range;
        if !ok {
            failures.push(format!("#{i}: got {got:?}: {}", r.text));
        }
    }
    assert!(
        failures.is_empty(),
        "{} of {} wrong:\n{}",
        failures.len(),
        recs.len(),
        failures.join("\n")
    );
}
