use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adagrad::{Adagrad, StepOutcome};
use super::ema::TeacherState;
use super::schedule::AlphaSchedule;
use crate::autodiff::{Gradients, Graph, ParamStore};
use crate::corpus::{CorpusSplit, RelationSample, RelationSchema, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{select_threshold, EvalResult};
use crate::noise_filter::{filter_corpus, ActiveSet, FilterOutcome};
use crate::rng;
use crate::students::{init_model, EncodedSample, ModelConfig, PretrainedEmbeddings, RelationModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub alpha_max: f64,
    pub ramp_epochs: usize,
    pub top_k: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a validation F1 improvement before stopping.
    pub patience: usize,
    pub filtering: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 50,
            alpha_max: 0.9,
            ramp_epochs: 5,
            top_k: 3,
            learning_rate: 0.01,
            max_epochs: 30,
            patience: 5,
            filtering: true,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.top_k == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch_size, top_k, max_epochs and patience must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.alpha_max) {
            return Err(Error::Config(format!("alpha_max {} outside [0, 1)", self.alpha_max)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.ramp_epochs == 0 {
            return Err(Error::Config("ramp_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
    pub val_threshold: f64,
    /// Samples trained on this epoch.
    pub active_size: usize,
    /// Samples excluded from this epoch, by gold label kind.
    pub filtered_none: usize,
    pub filtered_valid: usize,
    pub alpha_end: f64,
    pub train_loss: f64,
    pub skipped_batches: usize,
    pub clamped_losses: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// The decay used at every applied optimiser step, in order.
    pub alphas: Vec<f64>,
}

/// What [`Trainer::run_epoch`] reports back.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub record: EpochRecord,
    /// The filter pass that produced the next epoch's active set.
    pub filter: Option<FilterOutcome>,
    pub finished: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RelationModel,
    pub vocab: Vocabulary,
    pub best_teacher: ParamStore,
    pub best_epoch: usize,
    pub best: EvalResult,
    pub log: TrainLog,
}

struct SampleGrad {
    grads: Gradients,
    loss: f64,
    clamped: bool,
}

/// Student/teacher training over a fixed train/validation split.
///
/// Drive it epoch by epoch with [`Trainer::run_epoch`] or all at once with
/// [`train`].
pub struct Trainer {
    config: TrainConfig,
    schema: RelationSchema,
    model: RelationModel,
    vocab: Vocabulary,
    train: Vec<RelationSample>,
    encoded: Vec<EncodedSample>,
    validation: Vec<RelationSample>,
    student: ParamStore,
    teacher: TeacherState,
    optimizer: Adagrad,
    schedule: AlphaSchedule,
    step_idx: u64,
    epoch: usize,
    active: ActiveSet,
    best_teacher: ParamStore,
    best: Option<EvalResult>,
    best_epoch: usize,
    stale_epochs: usize,
    finished: bool,
    log: TrainLog,
}

impl Trainer {
    pub fn new(config: TrainConfig, schema: RelationSchema, split: CorpusSplit) -> Result<Self> {
        Self::with_embeddings(config, schema, split, None)
    }

    /// As [`Trainer::new`], optionally seeding the word table from
    /// pretrained vectors before the teacher copies it.
    pub fn with_embeddings(
        config: TrainConfig,
        schema: RelationSchema,
        split: CorpusSplit,
        embeddings: Option<&PretrainedEmbeddings>,
    ) -> Result<Self> {
        config.validate()?;
        if split.train.is_empty() || split.validation.is_empty() {
            return Err(Error::Config("training and validation sets must be non-empty".into()));
        }
        if config.top_k > schema.num_classes() {
            return Err(Error::Config(format!(
                "K = {} exceeds the {} classes",
                config.top_k,
                schema.num_classes()
            )));
        }
        for s in split.train.iter().chain(&split.validation) {
            if s.label >= schema.num_classes() {
                return Err(Error::Data {
                    id: s.id.clone(),
                    msg: format!("label {} outside the schema", s.label),
                });
            }
        }
        let vocab = Vocabulary::build(&split.train);
        let (model, mut student) =
            init_model(config.model.clone(), vocab.len(), schema.num_classes(), config.seed)?;
        if let Some(e) = embeddings {
            let hits = e.apply(&mut student, model.tables().word, &vocab)?;
            log::info!("pretrained vectors found for {hits} of {} words", vocab.len());
        }
        let encoded = split
            .train
            .iter()
            .map(|s| EncodedSample::new(s, &vocab, config.model.max_distance))
            .collect::<Result<Vec<_>>>()?;
        let schedule =
            AlphaSchedule::new(config.ramp_epochs, split.train.len(), config.batch_size, config.alpha_max)?;
        let optimizer = Adagrad::new(&student, config.learning_rate)?;
        let teacher = TeacherState::from_student(&student);
        Ok(Self {
            active: ActiveSet::full(split.train.len(), schema.num_classes()),
            best_teacher: student.clone(),
            config,
            schema,
            model,
            vocab,
            train: split.train,
            encoded,
            validation: split.validation,
            student,
            teacher,
            optimizer,
            schedule,
            step_idx: 0,
            epoch: 0,
            best: None,
            best_epoch: 0,
            stale_epochs: 0,
            finished: false,
            log: TrainLog::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn schema(&self) -> &RelationSchema {
        &self.schema
    }

    pub fn model(&self) -> &RelationModel {
        &self.model
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn student(&self) -> &ParamStore {
        &self.student
    }

    pub fn teacher(&self) -> &TeacherState {
        &self.teacher
    }

    pub fn optimizer(&self) -> &Adagrad {
        &self.optimizer
    }

    pub fn schedule(&self) -> &AlphaSchedule {
        &self.schedule
    }

    pub fn step_idx(&self) -> u64 {
        self.step_idx
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// The mask the next epoch will train on.
    pub fn active(&self) -> &ActiveSet {
        &self.active
    }

    pub fn train_samples(&self) -> &[RelationSample] {
        &self.train
    }

    pub fn validation_samples(&self) -> &[RelationSample] {
        &self.validation
    }

    pub fn best_teacher(&self) -> &ParamStore {
        &self.best_teacher
    }

    pub fn best(&self) -> Option<(&EvalResult, usize)> {
        self.best.as_ref().map(|b| (b, self.best_epoch))
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Forward and backward for one sample. The teacher runs without
    /// dropout and without a tape; its output enters the loss as a constant.
    fn sample_gradient(&self, idx: usize, scale: f64) -> Result<SampleGrad> {
        let s = &self.encoded[idx];
        let target = self.model.predict_encoded(self.teacher.params(), s)?;
        let mut g = Graph::new(&self.student);
        let mut drop = rng::stream(self.config.seed, "dropout", &[self.epoch as u64 + 1, idx as u64]);
        let probs = self.model.forward(&mut g, s, Some(&mut drop))?;
        let loss = g.loss(probs, s.label, Some(&target.probs), scale)?;
        let grads = g.backward(loss)?;
        Ok(SampleGrad {
            grads,
            loss: g.value(loss).data()[0],
            clamped: g.loss_was_clamped(),
        })
    }

    /// Gradient of the batch-mean loss, summed in batch order whatever the
    /// worker count. `None` when the batch produced a non-finite value.
    fn batch_gradient(&self, batch: &[usize]) -> Result<Option<(Gradients, f64, usize)>> {
        let scale = 1.0 / batch.len() as f64;
        let parts: Vec<Result<SampleGrad>> =
            batch.par_iter().map(|&i| self.sample_gradient(i, scale)).collect();
        let mut total = Gradients::for_store(&self.student);
        let mut loss = 0.0;
        let mut clamped = 0;
        for p in parts {
            match p {
                Ok(p) => {
                    total.accumulate(&p.grads);
                    loss += p.loss;
                    clamped += usize::from(p.clamped);
                }
                Err(Error::NonFinite { op }) => {
                    log::warn!("non-finite value in `{op}`, batch skipped");
                    return Ok(None);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Some((total, loss, clamped)))
    }

    /// Student update for one batch; returns the batch loss and how many
    /// samples hit the probability floor. The teacher is left alone here,
    /// see [`Trainer::update_teacher`].
    pub fn optimize_student(&mut self, batch: &[usize]) -> Result<Option<(f64, usize)>> {
        let Some((grads, loss, clamped)) = self.batch_gradient(batch)? else {
            return Ok(None);
        };
        match self.optimizer.step(&mut self.student, &grads)? {
            StepOutcome::Applied => {
                if clamped > 0 {
                    log::warn!("{clamped} sample(s) had a true-class probability below the floor");
                }
                Ok(Some((loss, clamped)))
            }
            StepOutcome::SkippedNonFinite => Ok(None),
        }
    }

    /// EMA step with the decay for the current step index, then advances it.
    pub fn update_teacher(&mut self) -> Result<f64> {
        let alpha = self.schedule.alpha(self.step_idx);
        self.teacher.ema_update(&self.student, alpha)?;
        self.log.alphas.push(alpha);
        self.step_idx += 1;
        Ok(alpha)
    }

    /// Active indices of the coming epoch in shuffled order.
    pub fn epoch_order(&self) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut order = self.active.active_indices();
        let mut r = rng::stream(self.config.seed, "shuffle", &[self.epoch as u64 + 1]);
        order.shuffle(&mut r);
        order
    }

    /// Trains one epoch on the active set, validates the teacher, and
    /// prepares the next active set unless training is over.
    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        if self.finished {
            return Err(Error::Training("training already finished".into()));
        }
        let started = Instant::now();
        let order = self.epoch_order();
        let mut loss_sum = 0.0;
        let mut applied = 0usize;
        let mut skipped = 0usize;
        let mut clamped = 0usize;
        for batch in order.chunks(self.config.batch_size) {
            match self.optimize_student(batch)? {
                Some((l, c)) => {
                    loss_sum += l;
                    clamped += c;
                    applied += 1;
                    self.update_teacher()?;
                }
                None => skipped += 1,
            }
        }
        self.epoch += 1;

        let teacher = self.model.classifier(self.teacher.params(), &self.vocab);
        let val = select_threshold(&teacher, &self.validation, &self.schema)?;
        if self.best.as_ref().is_none_or(|b| val.f1 > b.f1) {
            self.best = Some(val.clone());
            self.best_epoch = self.epoch;
            self.best_teacher = self.teacher.params().clone();
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
        }
        let record = EpochRecord {
            epoch: self.epoch,
            val_precision: val.precision,
            val_recall: val.recall,
            val_f1: val.f1,
            val_threshold: val.threshold,
            active_size: self.active.active_count(),
            filtered_none: self.active.filtered_none(&self.schema),
            filtered_valid: self.active.filtered_valid(&self.schema),
            alpha_end: self.log.alphas.last().copied().unwrap_or(0.0),
            train_loss: if applied == 0 { 0.0 } else { loss_sum / applied as f64 },
            skipped_batches: skipped,
            clamped_losses: clamped,
        };
        self.log.epochs.push(record.clone());
        self.finished = self.epoch >= self.config.max_epochs || self.stale_epochs >= self.config.patience;

        let mut filter = None;
        if !self.finished && self.config.filtering {
            let outcome = filter_corpus(&teacher, &self.train, &self.schema, self.config.top_k, self.epoch + 1)?;
            if outcome.active.active_count() == 0 {
                return Err(Error::Training(format!(
                    "the filter after epoch {} removed every training sample",
                    self.epoch
                )));
            }
            self.active = outcome.active.clone();
            filter = Some(outcome);
        } else if !self.finished {
            self.active.epoch = self.epoch + 1;
        }
        Ok(EpochReport {
            record,
            filter,
            finished: self.finished,
            seconds: started.elapsed().as_secs_f64(),
        })
    }

    pub fn finish(self) -> Result<TrainOutcome> {
        let best = self
            .best
            .ok_or_else(|| Error::Training("no epoch has been run".into()))?;
        Ok(TrainOutcome {
            model: self.model,
            vocab: self.vocab,
            best_teacher: self.best_teacher,
            best_epoch: self.best_epoch,
            best,
            log: self.log,
        })
    }
}

/// Runs [`Trainer`] to completion and returns the best teacher.
pub fn train(config: TrainConfig, schema: RelationSchema, split: CorpusSplit) -> Result<TrainOutcome> {
    let mut t = Trainer::new(config, schema, split)?;
    while !t.is_finished() {
        let r = t.run_epoch()?;
        log::info!(
            "epoch {}: val F1 {:.4}, active {}, alpha {:.4}",
            r.record.epoch,
            r.record.val_f1,
            r.record.active_size,
            r.record.alpha_end
        );
    }
    t.finish()
}
