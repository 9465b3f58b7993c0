use serde::{Deserialize, Serialize};

use crate::autodiff::PROB_FLOOR;
use crate::error::{Error, Result};

/// Batch loss and its two parts, each already averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub consistency: f64,
    /// Samples whose true-class probability had to be floored before the log.
    pub clamped: usize,
}

/// Cross-entropy of the student against the labels plus the squared
/// distance between student and teacher rows, both divided by the batch
/// size. Pure arithmetic: the training loop computes the same quantity on
/// the tape, one sample at a time.
pub fn combined_loss(student: &[Vec<f64>], teacher: &[Vec<f64>], labels: &[usize]) -> Result<LossBreakdown> {
    let b = student.len();
    if b == 0 || teacher.len() != b || labels.len() != b {
        return Err(Error::shape(
            "combined_loss",
            format!("{b} student rows, {} teacher rows, {} labels", teacher.len(), labels.len()),
        ));
    }
    let mut out = LossBreakdown::default();
    for ((s, t), &y) in student.iter().zip(teacher).zip(labels) {
        if s.len() != t.len() || y >= s.len() {
            return Err(Error::shape("combined_loss", format!("row widths {} / {}, label {y}", s.len(), t.len())));
        }
        if s[y] < PROB_FLOOR {
            out.clamped += 1;
        }
        out.cross_entropy -= s[y].max(PROB_FLOOR).ln();
        out.consistency += s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    out.cross_entropy /= b as f64;
    out.consistency /= b as f64;
    out.total = out.cross_entropy + out.consistency;
    Ok(out)
}
