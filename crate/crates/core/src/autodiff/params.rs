use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    tensor: Tensor,
    /// Row kept at zero and never updated (the PAD word row).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frozen_row: Option<usize>,
}

/// Ordered, named collection of trainable tensors.
///
/// Student, teacher and optimizer accumulators all use this layout, so a
/// [`ParamId`] means the same tensor in each of them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            frozen_row: None,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Adds a table whose `row` is zeroed and excluded from every update.
    pub fn add_with_frozen_row(
        &mut self,
        name: impl Into<String>,
        mut tensor: Tensor,
        row: usize,
    ) -> ParamId {
        tensor.row_slice_mut(row).fill(0.0);
        let id = self.add(name, tensor);
        self.entries[id.0].frozen_row = Some(row);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn frozen_row(&self, id: ParamId) -> Option<usize> {
        self.entries[id.0].frozen_row
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Same names, same shapes, same frozen rows.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape(
                "param_store",
                format!("{} vs {} tensors", self.entries.len(), other.entries.len()),
            ));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || !a.tensor.same_shape(&b.tensor) || a.frozen_row != b.frozen_row {
                return Err(Error::shape(
                    "param_store",
                    format!(
                        "`{}` {:?} vs `{}` {:?}",
                        a.name,
                        a.tensor.shape(),
                        b.name,
                        b.tensor.shape()
                    ),
                ));
            }
        }
        Ok(())
    }

    /// A store with the same layout and every value zero.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: Tensor::zeros(e.tensor.shape().to_vec()),
                    frozen_row: e.frozen_row,
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }
}

/// Gradient for one parameter tensor.
///
/// Embedding lookups produce [`GradSlot::Rows`] so a sentence only touches
/// the rows it used.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum GradSlot {
    #[default]
    Empty,
    Dense(Vec<f64>),
    Rows(BTreeMap<usize, Vec<f64>>),
}

impl GradSlot {
    /// Visits `(flat offset range start, values)` chunks.
    pub fn for_each_chunk(&self, cols: usize, mut f: impl FnMut(usize, &[f64])) {
        match self {
            GradSlot::Empty => {}
            GradSlot::Dense(v) => f(0, v),
            GradSlot::Rows(rows) => {
                for (&r, v) in rows {
                    f(r * cols, v);
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            GradSlot::Empty => true,
            GradSlot::Dense(v) => v.iter().all(|x| x.is_finite()),
            GradSlot::Rows(rows) => rows.values().flatten().all(|x| x.is_finite()),
        }
    }

    /// Dense copy of length `len`.
    pub fn to_dense(&self, len: usize, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        self.for_each_chunk(cols, |off, v| {
            for (o, x) in out[off..off + v.len()].iter_mut().zip(v) {
                *o += x;
            }
        });
        out
    }
}

/// Per-parameter gradients produced by one backward pass, or the sum of
/// several.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    slots: Vec<GradSlot>,
    cols: Vec<usize>,
    lens: Vec<usize>,
}

impl Gradients {
    pub fn for_store(store: &ParamStore) -> Self {
        Self {
            slots: vec![GradSlot::Empty; store.len()],
            cols: store.ids().map(|id| store.get(id).cols()).collect(),
            lens: store.ids().map(|id| store.get(id).len()).collect(),
        }
    }

    pub fn slot(&self, id: ParamId) -> &GradSlot {
        &self.slots[id.0]
    }

    pub fn dense(&self, id: ParamId) -> Vec<f64> {
        self.slots[id.0].to_dense(self.lens[id.0], self.cols[id.0])
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().all(GradSlot::is_finite)
    }

    pub(crate) fn add_dense(&mut self, id: ParamId, grad: &[f64]) {
        let slot = &mut self.slots[id.0];
        match slot {
            GradSlot::Empty => *slot = GradSlot::Dense(grad.to_vec()),
            GradSlot::Dense(v) => add_into(v, grad),
            GradSlot::Rows(rows) => {
                let cols = self.cols[id.0];
                let mut dense = grad.to_vec();
                for (&r, v) in rows.iter() {
                    add_into(&mut dense[r * cols..(r + 1) * cols], v);
                }
                *slot = GradSlot::Dense(dense);
            }
        }
    }

    pub(crate) fn add_row(&mut self, id: ParamId, row: usize, grad: &[f64]) {
        let cols = self.cols[id.0];
        let slot = &mut self.slots[id.0];
        match slot {
            GradSlot::Empty => {
                let mut m = BTreeMap::new();
                m.insert(row, grad.to_vec());
                *slot = GradSlot::Rows(m);
            }
            GradSlot::Dense(v) => add_into(&mut v[row * cols..(row + 1) * cols], grad),
            GradSlot::Rows(rows) => match rows.get_mut(&row) {
                Some(v) => add_into(v, grad),
                None => {
                    rows.insert(row, grad.to_vec());
                }
            },
        }
    }

    /// Adds `other` into `self`. Callers reduce in a fixed order so the
    /// floating-point sum is reproducible.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (i, slot) in other.slots.iter().enumerate() {
            let id = ParamId(i);
            match slot {
                GradSlot::Empty => {}
                GradSlot::Dense(v) => self.add_dense(id, v),
                GradSlot::Rows(rows) => {
                    for (&r, v) in rows {
                        self.add_row(id, r, v);
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
