//! Per-epoch noisy-sample filtering driven by the teacher's predictions.
//!
//! A `None`-labelled sample survives only if the teacher's top prediction
//! is `None`. A valid-labelled sample survives if its label is among the
//! teacher's `K` most probable relations. The whole initial corpus is
//! scored every time, so a sample dropped once can come back.

use serde::{Deserialize, Serialize};

use crate::corpus::{RelationSample, RelationSchema};
use crate::error::{Error, Result};
use crate::students::{PredictionDistribution, Predictor};

/// Which samples of the initial training corpus take part in an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub mask: Vec<bool>,
    /// The epoch (1-based) this mask is used for.
    pub epoch: usize,
    /// Dropped samples per relation index.
    pub filtered_per_relation: Vec<usize>,
}

impl ActiveSet {
    /// Epoch 1 trains on everything.
    pub fn full(len: usize, num_classes: usize) -> Self {
        Self {
            mask: vec![true; len],
            epoch: 1,
            filtered_per_relation: vec![0; num_classes],
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&k| k).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn filtered_none(&self, schema: &RelationSchema) -> usize {
        self.filtered_per_relation[schema.none_index()]
    }

    pub fn filtered_valid(&self, schema: &RelationSchema) -> usize {
        self.filtered_per_relation.iter().sum::<usize>() - self.filtered_none(schema)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterReason {
    Clean,
    NoneMismatch,
    NotInTopk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterDecision {
    pub index: usize,
    pub kept: bool,
    /// `(relation index, probability)`, most probable first.
    pub teacher_top: Vec<(usize, f64)>,
    pub reason: FilterReason,
}

/// One line of a filter audit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub id: String,
    pub relation: String,
    pub kept: bool,
    pub reason: FilterReason,
    pub teacher_top: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_truth: Option<bool>,
}

impl FilterDecision {
    pub fn to_record(&self, sample: &RelationSample, schema: &RelationSchema) -> FilterRecord {
        FilterRecord {
            id: sample.id.clone(),
            relation: schema.name(sample.label).to_string(),
            kept: self.kept,
            reason: self.reason,
            teacher_top: self
                .teacher_top
                .iter()
                .map(|&(r, p)| (schema.name(r).to_string(), p))
                .collect(),
            noise_truth: sample.noise_truth,
        }
    }
}

/// The `k` most probable relations, ties broken by ascending index.
pub fn top_k(pred: &PredictionDistribution, k: usize) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = pred.probs.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

pub fn predict_topk(
    teacher: &dyn Predictor,
    sample: &RelationSample,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    Ok(top_k(&teacher.predict(sample)?, k))
}

/// Keep/drop decision for one sample.
pub fn decide(pred: &PredictionDistribution, label: usize, schema: &RelationSchema, k: usize) -> (bool, FilterReason, Vec<(usize, f64)>) {
    let top = top_k(pred, k);
    if schema.is_none(label) {
        if pred.argmax() == label {
            (true, FilterReason::Clean, top)
        } else {
            (false, FilterReason::NoneMismatch, top)
        }
    } else if top.iter().any(|&(r, _)| r == label) {
        (true, FilterReason::Clean, top)
    } else {
        (false, FilterReason::NotInTopk, top)
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub active: ActiveSet,
    pub decisions: Vec<FilterDecision>,
}

fn check_k(k: usize, schema: &RelationSchema) -> Result<()> {
    if k == 0 || k > schema.num_classes() {
        return Err(Error::Config(format!(
            "K = {k} outside [1, {}]",
            schema.num_classes()
        )));
    }
    Ok(())
}

/// Filters from precomputed teacher predictions, one per corpus sample.
pub fn filter_predictions(
    preds: &[PredictionDistribution],
    labels: &[usize],
    schema: &RelationSchema,
    k: usize,
    epoch: usize,
) -> Result<FilterOutcome> {
    check_k(k, schema)?;
    let mut filtered = vec![0; schema.num_classes()];
    let mut mask = Vec::with_capacity(preds.len());
    let mut decisions = Vec::with_capacity(preds.len());
    for (index, (pred, &label)) in preds.iter().zip(labels).enumerate() {
        let (kept, reason, teacher_top) = decide(pred, label, schema, k);
        if !kept {
            filtered[label] += 1;
        }
        mask.push(kept);
        decisions.push(FilterDecision {
            index,
            kept,
            teacher_top,
            reason,
        });
    }
    Ok(FilterOutcome {
        active: ActiveSet {
            mask,
            epoch,
            filtered_per_relation: filtered,
        },
        decisions,
    })
}

/// Scores the entire initial corpus with `teacher` and builds the mask for
/// `epoch`. No previous mask is consulted.
pub fn filter_corpus(
    teacher: &dyn Predictor,
    corpus: &[RelationSample],
    schema: &RelationSchema,
    k: usize,
    epoch: usize,
) -> Result<FilterOutcome> {
    check_k(k, schema)?;
    let preds = teacher.predict_all(corpus)?;
    let labels: Vec<usize> = corpus.iter().map(|s| s.label).collect();
    filter_predictions(&preds, &labels, schema, k, epoch)
}

/// How well a dropped set matches ground-truth noise flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterQuality {
    pub dropped: usize,
    pub dropped_noisy: usize,
    pub noisy_total: usize,
    /// Fraction of dropped samples that are truly noisy.
    pub precision: f64,
    /// Fraction of truly noisy samples that were dropped.
    pub recall: f64,
}

/// `None` when any sample lacks a noise flag.
pub fn filter_quality(mask: &[bool], corpus: &[RelationSample]) -> Option<FilterQuality> {
    let mut q = FilterQuality {
        dropped: 0,
        dropped_noisy: 0,
        noisy_total: 0,
        precision: 0.0,
        recall: 0.0,
    };
    for (&kept, s) in mask.iter().zip(corpus) {
        let noisy = s.noise_truth?;
        q.noisy_total += usize::from(noisy);
        if !kept {
            q.dropped += 1;
            q.dropped_noisy += usize::from(noisy);
        }
    }
    q.precision = if q.dropped == 0 { 0.0 } else { q.dropped_noisy as f64 / q.dropped as f64 };
    q.recall = if q.noisy_total == 0 { 0.0 } else { q.dropped_noisy as f64 / q.noisy_total as f64 };
    Some(q)
}
