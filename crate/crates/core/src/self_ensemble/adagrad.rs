use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamStore};
use crate::error::{Error, Result};

pub const ADAGRAD_EPS: f64 = 1e-8;

/// Adagrad with one squared-gradient accumulator per scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adagrad {
    pub learning_rate: f64,
    pub accumulators: ParamStore,
}

/// Whether a call to [`Adagrad::step`] changed anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    SkippedNonFinite,
}

impl Adagrad {
    pub fn new(params: &ParamStore, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {learning_rate} must be positive")));
        }
        Ok(Self {
            learning_rate,
            accumulators: params.zeros_like(),
        })
    }

    /// `acc += g^2; w -= lr * g / sqrt(acc + eps)`. Rows absent from a sparse
    /// gradient have `g = 0` and so are untouched. A batch with any
    /// non-finite gradient is skipped whole.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<StepOutcome> {
        self.accumulators.check_compatible(params)?;
        if !grads.is_finite() {
            log::warn!("non-finite gradient, batch skipped");
            return Ok(StepOutcome::SkippedNonFinite);
        }
        let lr = self.learning_rate;
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let cols = params.get(id).cols();
            let frozen = params.frozen_row(id);
            let w = params.get_mut(id).data_mut();
            let acc = self.accumulators.get_mut(id).data_mut();
            let frozen = frozen.map(|r| r * cols..(r + 1) * cols);
            grads.slot(id).for_each_chunk(cols, |off, g| {
                for (j, &gj) in g.iter().enumerate() {
                    let k = off + j;
                    if frozen.as_ref().is_some_and(|f| f.contains(&k)) {
                        continue;
                    }
                    acc[k] += gj * gj;
                    w[k] -= lr * gj / (acc[k] + ADAGRAD_EPS).sqrt();
                }
            });
        }
        Ok(StepOutcome::Applied)
    }
}
