//! Precision, recall and F1 over valid relations, with a confidence
//! threshold that turns low-scoring valid predictions into `None`.

use serde::{Deserialize, Serialize};

use crate::corpus::{RelationSample, RelationSchema};
use crate::error::Result;
use crate::students::{PredictionDistribution, Predictor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl EvalResult {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, threshold: f64) -> Self {
        let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
        let precision = ratio(tp, fp);
        let recall = ratio(tp, fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            threshold,
            tp,
            fp,
            fn_,
        }
    }
}

/// Per-relation counts for a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationScore {
    pub relation: String,
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Final label after thresholding: a valid argmax below `threshold`
/// becomes `None`; a `None` argmax stays `None`.
pub fn apply_threshold(pred: &PredictionDistribution, schema: &RelationSchema, threshold: f64) -> usize {
    let top = pred.argmax();
    if schema.is_none(top) || pred.probs[top] < threshold {
        schema.none_index()
    } else {
        top
    }
}

/// `(tp, fp, fn)` over valid relations. A wrong valid prediction counts as
/// both a false positive and a false negative.
pub fn confusion(predicted: &[usize], gold: &[usize], schema: &RelationSchema) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in predicted.iter().zip(gold) {
        let p_valid = !schema.is_none(p);
        let g_valid = !schema.is_none(g);
        if p_valid && p == g {
            tp += 1;
            continue;
        }
        if p_valid {
            fp += 1;
        }
        if g_valid {
            fn_ += 1;
        }
    }
    (tp, fp, fn_)
}

pub fn evaluate_predictions(
    preds: &[PredictionDistribution],
    gold: &[usize],
    schema: &RelationSchema,
    threshold: f64,
) -> EvalResult {
    let predicted: Vec<usize> = preds.iter().map(|p| apply_threshold(p, schema, threshold)).collect();
    let (tp, fp, fn_) = confusion(&predicted, gold, schema);
    EvalResult::from_counts(tp, fp, fn_, threshold)
}

pub fn evaluate(
    model: &dyn Predictor,
    samples: &[RelationSample],
    schema: &RelationSchema,
    threshold: f64,
) -> Result<EvalResult> {
    let preds = model.predict_all(samples)?;
    Ok(evaluate_predictions(&preds, &gold_labels(samples), schema, threshold))
}

pub fn gold_labels(samples: &[RelationSample]) -> Vec<usize> {
    samples.iter().map(|s| s.label).collect()
}

/// Exact threshold search over 0, 1 and every observed max-probability,
/// which are the only values that change the outcome. Ties resolve to the
/// smallest threshold.
pub fn select_threshold_predictions(
    preds: &[PredictionDistribution],
    gold: &[usize],
    schema: &RelationSchema,
) -> EvalResult {
    // (score, correct) for every valid argmax; None argmaxes never count
    let mut items: Vec<(f64, bool)> = preds
        .iter()
        .zip(gold)
        .filter_map(|(p, &g)| {
            let top = p.argmax();
            (!schema.is_none(top)).then(|| (p.probs[top], top == g))
        })
        .collect();
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let gold_valid = gold.iter().filter(|&&g| !schema.is_none(g)).count();

    let mut candidates: Vec<f64> = std::iter::once(0.0)
        .chain(items.iter().map(|i| i.0))
        .chain(std::iter::once(1.0))
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let total_correct = items.iter().filter(|i| i.1).count();
    let mut below = 0; // items with score < current candidate
    let mut correct_below = 0;
    let mut best: Option<EvalResult> = None;
    for &t in &candidates {
        while below < items.len() && items[below].0 < t {
            correct_below += usize::from(items[below].1);
            below += 1;
        }
        let tp = total_correct - correct_below;
        let fp = (items.len() - below) - tp;
        let fn_ = gold_valid - tp;
        let r = EvalResult::from_counts(tp, fp, fn_, t);
        if best.as_ref().is_none_or(|b| r.f1 > b.f1) {
            best = Some(r);
        }
    }
    best.expect("candidate list is never empty")
}

pub fn select_threshold(
    model: &dyn Predictor,
    validation: &[RelationSample],
    schema: &RelationSchema,
) -> Result<EvalResult> {
    let preds = model.predict_all(validation)?;
    Ok(select_threshold_predictions(&preds, &gold_labels(validation), schema))
}

pub fn per_relation(
    preds: &[PredictionDistribution],
    gold: &[usize],
    schema: &RelationSchema,
    threshold: f64,
) -> Vec<RelationScore> {
    let predicted: Vec<usize> = preds.iter().map(|p| apply_threshold(p, schema, threshold)).collect();
    (0..schema.num_classes())
        .filter(|&r| !schema.is_none(r))
        .map(|r| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (&p, &g) in predicted.iter().zip(gold) {
                match (p == r, g == r) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            let e = EvalResult::from_counts(tp, fp, fn_, threshold);
            RelationScore {
                relation: schema.name(r).to_string(),
                support: tp + fn_,
                tp,
                fp,
                fn_,
                precision: e.precision,
                recall: e.recall,
                f1: e.f1,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> RelationSchema {
        RelationSchema::new(vec!["None".into(), "r1".into(), "r2".into(), "r3".into()]).unwrap()
    }

    fn dist(v: &[f64]) -> PredictionDistribution {
        PredictionDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn threshold_rules() {
        let s = schema();
        assert_eq!(apply_threshold(&dist(&[0.7, 0.1, 0.1, 0.1]), &s, 0.0), 0);
        assert_eq!(apply_threshold(&dist(&[0.3, 0.4, 0.2, 0.1]), &s, 0.5), 0);
        assert_eq!(apply_threshold(&dist(&[0.05, 0.9, 0.03, 0.02]), &s, 0.5), 1);
    }

    #[test]
    fn hand_confusion() {
        let s = schema();
        let (tp, fp, fn_) = confusion(&[1, 3, 0, 0], &[1, 2, 0, 0], &s);
        assert_eq!((tp, fp, fn_), (1, 1, 1));
        let r = EvalResult::from_counts(tp, fp, fn_, 0.0);
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn perfect_and_degenerate() {
        let s = schema();
        let preds = vec![dist(&[0.1, 0.9, 0.0, 0.0]), dist(&[0.9, 0.1, 0.0, 0.0])];
        let r = evaluate_predictions(&preds, &[1, 0], &s, 0.0);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let all_none = vec![dist(&[0.9, 0.1, 0.0, 0.0]); 2];
        let r = evaluate_predictions(&all_none, &[1, 2], &s, 0.0);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn threshold_one_suppresses_everything_below_certainty() {
        let s = schema();
        let preds = vec![dist(&[0.1, 0.9, 0.0, 0.0]), dist(&[0.0, 0.2, 0.8, 0.0])];
        let r = evaluate_predictions(&preds, &[1, 2], &s, 1.0);
        assert_eq!(r.recall, 0.0);
    }

    #[test]
    fn select_picks_smallest_optimal_threshold() {
        let s = schema();
        let preds = vec![dist(&[0.3, 0.7, 0.0, 0.0])];
        let r = select_threshold_predictions(&preds, &[1], &s);
        assert_eq!(r.threshold, 0.0);
        assert_eq!(r.f1, 1.0);

        let preds = vec![dist(&[0.1, 0.9, 0.0, 0.0]); 3];
        let r = select_threshold_predictions(&preds, &[1, 1, 1], &s);
        assert!(r.threshold <= 0.9);
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn select_drops_low_confidence_mistakes() {
        let s = schema();
        let preds = vec![
            dist(&[0.1, 0.9, 0.0, 0.0]),
            dist(&[0.45, 0.55, 0.0, 0.0]),
        ];
        let r = select_threshold_predictions(&preds, &[1, 0], &s);
        assert_eq!(r.f1, 1.0);
        assert!(r.threshold > 0.55 && r.threshold <= 0.9);
    }

    #[test]
    fn per_relation_sums_to_micro_counts() {
        let s = schema();
        let preds = vec![
            dist(&[0.1, 0.9, 0.0, 0.0]),
            dist(&[0.1, 0.0, 0.0, 0.9]),
            dist(&[0.1, 0.0, 0.9, 0.0]),
        ];
        let gold = [1, 2, 0];
        let micro = evaluate_predictions(&preds, &gold, &s, 0.0);
        let rows = per_relation(&preds, &gold, &s, 0.0);
        assert_eq!(rows.iter().map(|r| r.tp).sum::<usize>(), micro.tp);
        assert_eq!(rows.iter().map(|r| r.fp).sum::<usize>(), micro.fp);
        assert_eq!(rows.iter().map(|r| r.fn_).sum::<usize>(), micro.fn_);
    }

    fn arb_case() -> impl Strategy<Value = (Vec<PredictionDistribution>, Vec<usize>)> {
        prop::collection::vec(
            (prop::collection::vec(0.01f64..1.0, 4), 0usize..4),
            1..40,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .map(|(w, g)| {
                    let s: f64 = w.iter().sum();
                    (dist(&w.iter().map(|x| x / s).collect::<Vec<_>>()), g)
                })
                .unzip()
        })
    }

    proptest! {
        #[test]
        fn recall_never_rises_with_threshold((preds, gold) in arb_case(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let s = schema();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let r_lo = evaluate_predictions(&preds, &gold, &s, lo).recall;
            let r_hi = evaluate_predictions(&preds, &gold, &s, hi).recall;
            prop_assert!(r_hi <= r_lo);
        }

        #[test]
        fn sweep_beats_any_fixed_threshold((preds, gold) in arb_case(), t in 0.0f64..=1.0) {
            let s = schema();
            let best = select_threshold_predictions(&preds, &gold, &s);
            let fixed = evaluate_predictions(&preds, &gold, &s, t);
            prop_assert!(best.f1 >= fixed.f1);
            let replay = evaluate_predictions(&preds, &gold, &s, best.threshold);
            prop_assert_eq!(replay, best);
        }
    }
}
