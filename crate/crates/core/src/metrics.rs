//! Intent exact-match accuracy, per-intent macro F1 and strict span F1.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::parse_tag;
use crate::error::{Error, Result};

/// A typed span `[start, end)` over word positions.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub slot: String,
    pub start: usize,
    pub end: usize,
}

fn as_set(labels: &[String]) -> BTreeSet<&str> {
    labels.iter().map(String::as_str).collect()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_len(op: &str, pred: usize, gold: usize) -> Result<()> {
    if pred != gold {
        return Err(Error::contract(format!("{op}: {pred} predictions for {gold} gold items")));
    }
    Ok(())
}

/// Fraction of turns whose predicted act set equals the gold set.
/// Zero for no turns.
pub fn intent_exact_match(pred: &[Vec<String>], gold: &[Vec<String>]) -> Result<f64> {
    check_len("intent_exact_match", pred.len(), gold.len())?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| as_set(p) == as_set(g)).count();
    Ok(ratio(hits, gold.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold turns carrying the label.
    pub support: usize,
}

/// Precision, recall and F1 per act label, for every label that occurs in
/// gold or predictions, in lexicographic order.
pub fn per_label_scores(pred: &[Vec<String>], gold: &[Vec<String>]) -> Result<Vec<LabelScore>> {
    check_len("per_label_scores", pred.len(), gold.len())?;
    // label -> (tp, fp, fn)
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gold) {
        let (p, g) = (as_set(p), as_set(g));
        for &l in p.union(&g) {
            let c = counts.entry(l).or_default();
            match (p.contains(l), g.contains(l)) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => unreachable!(),
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(label, (tp, fp, fn_))| {
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            LabelScore {
                label: label.to_string(),
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: tp + fn_,
            }
        })
        .collect())
}

/// Unweighted mean of per-label F1 over labels occurring in gold or
/// predictions. Zero when no label occurs.
pub fn intent_macro_f1(pred: &[Vec<String>], gold: &[Vec<String>]) -> Result<f64> {
    let scores = per_label_scores(pred, gold)?;
    if scores.is_empty() {
        return Ok(0.0);
    }
    Ok(scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64)
}

/// Typed spans of a BIO sequence. A span opens at `B-X`, or at `I-X` when
/// not continuing an `X` span, and extends over the following `I-X` tags.
pub fn extract_spans(tags: &[String]) -> Result<Vec<Span>> {
    let mut spans = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let parsed = parse_tag(tag).transpose()?;
        match parsed {
            None => {
                if let Some((slot, start)) = open.take() {
                    spans.push(Span { slot: slot.to_string(), start, end: i });
                }
            }
            Some(('I', slot)) if open.is_some_and(|(s, _)| s == slot) => {}
            Some((_, slot)) => {
                if let Some((s, start)) = open.take() {
                    spans.push(Span { slot: s.to_string(), start, end: i });
                }
                open = Some((slot, i));
            }
        }
    }
    if let Some((slot, start)) = open {
        spans.push(Span { slot: slot.to_string(), start, end: tags.len() });
    }
    Ok(spans)
}

/// Span counts behind [`slot_span_f1`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpanCounts {
    pub true_positive: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SpanCounts {
    pub fn f1(&self) -> f64 {
        harmonic(ratio(self.true_positive, self.predicted), ratio(self.true_positive, self.gold))
    }
}

pub fn span_counts(pred: &[Vec<String>], gold: &[Vec<String>]) -> Result<SpanCounts> {
    check_len("slot_span_f1", pred.len(), gold.len())?;
    let mut c = SpanCounts::default();
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::contract(format!(
                "slot_span_f1: turn {i} has {} predicted and {} gold tags",
                p.len(),
                g.len()
            )));
        }
        let ps: BTreeSet<Span> = extract_spans(p)?.into_iter().collect();
        let gs: BTreeSet<Span> = extract_spans(g)?.into_iter().collect();
        c.true_positive += ps.intersection(&gs).count();
        c.predicted += ps.len();
        c.gold += gs.len();
    }
    Ok(c)
}

/// Strict span F1 pooled over turns: a predicted span counts only if its
/// type and both boundaries match a gold span.
pub fn slot_span_f1(pred: &[Vec<String>], gold: &[Vec<String>]) -> Result<f64> {
    Ok(span_counts(pred, gold)?.f1())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub id_acc: f64,
    pub id_f1: f64,
    pub sl_f1: f64,
    pub per_label: Vec<LabelScore>,
    pub n_turns: usize,
    pub n_gold_spans: usize,
    pub n_pred_spans: usize,
}

impl EvalReport {
    /// Scores aligned per-turn predictions against gold.
    pub fn compute(
        pred_acts: &[Vec<String>],
        gold_acts: &[Vec<String>],
        pred_tags: &[Vec<String>],
        gold_tags: &[Vec<String>],
    ) -> Result<EvalReport> {
        let spans = span_counts(pred_tags, gold_tags)?;
        Ok(EvalReport {
            id_acc: intent_exact_match(pred_acts, gold_acts)?,
            id_f1: intent_macro_f1(pred_acts, gold_acts)?,
            sl_f1: spans.f1(),
            per_label: per_label_scores(pred_acts, gold_acts)?,
            n_turns: gold_acts.len(),
            n_gold_spans: spans.gold,
            n_pred_spans: spans.predicted,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}
