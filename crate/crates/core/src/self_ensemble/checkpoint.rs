use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{TrainConfig, Trainer};
use crate::autodiff::ParamStore;
use crate::corpus::{RelationSchema, Vocabulary};
use crate::error::{Error, Result};
use crate::rng;
use crate::students::{Classifier, RelationModel};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to evaluate a run, or to inspect where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub manifest_id: String,
    pub schema: RelationSchema,
    pub vocab: Vocabulary,
    pub config: TrainConfig,
    pub student: ParamStore,
    pub teacher: ParamStore,
    /// Teacher weights from the epoch with the best validation F1.
    pub best_teacher: ParamStore,
    pub accumulators: ParamStore,
    pub step_idx: u64,
    pub epoch: usize,
    pub best_epoch: usize,
    /// Validation-selected confidence threshold of the best epoch.
    pub threshold: f64,
    pub active_mask: Vec<bool>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer, manifest_id: impl Into<String>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            manifest_id: manifest_id.into(),
            schema: t.schema().clone(),
            vocab: t.vocab().clone(),
            config: t.config().clone(),
            student: t.student().clone(),
            teacher: t.teacher().params().clone(),
            best_teacher: t.best_teacher().clone(),
            accumulators: t.optimizer().accumulators.clone(),
            step_idx: t.step_idx(),
            epoch: t.epoch(),
            best_epoch: t.best().map_or(0, |b| b.1),
            threshold: t.best().map_or(0.0, |b| b.0.threshold),
            active_mask: t.active().mask.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: checkpoint version {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                ck.version
            )));
        }
        Ok(ck)
    }

    /// Rebuilds the model layout and checks every stored tensor set
    /// against it.
    pub fn model(&self) -> Result<RelationModel> {
        let mut r = rng::stream(self.config.seed, "init", &[]);
        let (model, _) =
            RelationModel::new(self.config.model.clone(), self.vocab.len(), self.schema.num_classes(), &mut r)?;
        for p in [&self.student, &self.teacher, &self.best_teacher, &self.accumulators] {
            model.check_params(p)?;
        }
        Ok(model)
    }

    /// The best teacher as a predictor.
    pub fn classifier<'a>(&'a self, model: &'a RelationModel) -> Classifier<'a> {
        model.classifier(&self.best_teacher, &self.vocab)
    }
}
