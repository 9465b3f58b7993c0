//! Student encoders: CNN, PCNN, entity attention (EA) and Bi-GRU word
//! attention (BGWA), all over word plus two relative-position embeddings.

mod embedding;
mod gru;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::corpus::{RelationSample, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

pub use embedding::{
    position_bucket, position_rows, EmbeddingTables, EncodedSample, PretrainedEmbeddings,
};
pub use gru::{gru_sequence, Direction, GruParams};

use embedding::uniform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Cnn,
    Pcnn,
    Ea,
    Bgwa,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Cnn,
        Architecture::Pcnn,
        Architecture::Ea,
        Architecture::Bgwa,
    ];
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Cnn => "cnn",
            Architecture::Pcnn => "pcnn",
            Architecture::Ea => "ea",
            Architecture::Bgwa => "bgwa",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Architecture::Cnn),
            "pcnn" => Ok(Architecture::Pcnn),
            "ea" => Ok(Architecture::Ea),
            "bgwa" => Ok(Architecture::Bgwa),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Encoder hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub word_dim: usize,
    pub pos_dim: usize,
    /// Relative distances beyond this share one clip row.
    pub max_distance: usize,
    pub filters: usize,
    pub window: usize,
    /// Per direction.
    pub gru_hidden: usize,
    /// Hidden width of the attention scorers (EA and BGWA).
    pub attention_dim: usize,
    pub dropout: f64,
    /// Half-width of the uniform initialisation.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::Cnn,
            word_dim: 50,
            pos_dim: 5,
            max_distance: 50,
            filters: 230,
            window: 3,
            gru_hidden: 115,
            attention_dim: 50,
            dropout: 0.5,
            init_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("pos_dim", self.pos_dim),
            ("filters", self.filters),
            ("window", self.window),
            ("gru_hidden", self.gru_hidden),
            ("attention_dim", self.attention_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn token_dim(&self) -> usize {
        self.word_dim + 2 * self.pos_dim
    }

    /// Width of the penultimate feature vector.
    pub fn feature_dim(&self) -> usize {
        match self.arch {
            Architecture::Cnn => self.filters,
            Architecture::Pcnn | Architecture::Bgwa => 3 * self.filters,
            Architecture::Ea => self.filters + 2 * self.word_dim,
        }
    }
}

/// Softmax output over the relation schema.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistribution {
    pub probs: Vec<f64>,
}

impl PredictionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("not a probability distribution: {probs:?}")));
        }
        Ok(Self { probs })
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_prob(&self) -> f64 {
        self.probs[self.argmax()]
    }
}

/// Anything that scores a sample: a trained model, or a scripted stand-in.
pub trait Predictor: Sync {
    fn predict(&self, sample: &RelationSample) -> Result<PredictionDistribution>;

    /// Order-preserving batch prediction, parallel over samples.
    fn predict_all(&self, samples: &[RelationSample]) -> Result<Vec<PredictionDistribution>> {
        samples.par_iter().map(|s| self.predict(s)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Attention {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Attention {
    fn init(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, scale: f64, rng: &mut StreamRng) -> Self {
        Self {
            w1: store.add(format!("{prefix}.w1"), uniform(input, hidden, scale, rng)),
            b1: store.add(format!("{prefix}.b1"), uniform(1, hidden, scale, rng)),
            w2: store.add(format!("{prefix}.w2"), uniform(hidden, 1, scale, rng)),
            b2: store.add(format!("{prefix}.b2"), uniform(1, 1, scale, rng)),
        }
    }

    /// `softmax_t(w2 . tanh(W1 x_t + b1) + b2)` over the rows of `input`,
    /// returned as an n x 1 column.
    fn weights(&self, g: &mut Graph, input: Var) -> Result<Var> {
        let w1 = g.param(self.w1);
        let b1 = g.param(self.b1);
        let w2 = g.param(self.w2);
        let b2 = g.param(self.b2);
        let h = g.matmul(input, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.tanh(h);
        let s = g.matmul(h, w2)?;
        let s = g.add_row(s, b2)?;
        let s = g.transpose(s);
        let a = g.softmax_rows(s);
        Ok(g.transpose(a))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Encoder {
    Cnn,
    Pcnn,
    Ea([Attention; 2]),
    Bgwa { gru: [GruParams; 2], attention: Attention },
}

/// A student architecture bound to its parameter layout.
///
/// The same `RelationModel` runs on the student's parameters during
/// training and on the teacher's for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationModel {
    config: ModelConfig,
    num_classes: usize,
    tables: EmbeddingTables,
    conv_filters: ParamId,
    conv_bias: ParamId,
    encoder: Encoder,
    out_w: ParamId,
    out_b: ParamId,
    template: ParamStore,
}

/// Values recorded by [`RelationModel::inspect`].
#[derive(Debug, Clone)]
pub struct Inspection {
    pub probs: PredictionDistribution,
    pub feature: Vec<f64>,
    /// One attention column per scorer (two for EA, one for BGWA).
    pub attention: Vec<Vec<f64>>,
}

impl RelationModel {
    /// Builds the layout and a freshly initialised parameter set.
    pub fn new(
        config: ModelConfig,
        vocab_size: usize,
        num_classes: usize,
        init_rng: &mut StreamRng,
    ) -> Result<(Self, ParamStore)> {
        config.validate()?;
        if num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let s = config.init_scale;
        let mut store = ParamStore::new();
        let tables = EmbeddingTables::init(
            &mut store,
            vocab_size,
            config.word_dim,
            config.pos_dim,
            config.max_distance,
            s,
            init_rng,
        );
        let (encoder, conv_input) = match config.arch {
            Architecture::Cnn => (Encoder::Cnn, config.token_dim()),
            Architecture::Pcnn => (Encoder::Pcnn, config.token_dim()),
            Architecture::Ea => {
                let a1 = Attention::init(&mut store, "ea.e1", 2 * config.word_dim, config.attention_dim, s, init_rng);
                let a2 = Attention::init(&mut store, "ea.e2", 2 * config.word_dim, config.attention_dim, s, init_rng);
                (Encoder::Ea([a1, a2]), config.token_dim())
            }
            Architecture::Bgwa => {
                let h = config.gru_hidden;
                let fwd = GruParams::init(&mut store, "gru.fwd", config.token_dim(), h, s, init_rng);
                let bwd = GruParams::init(&mut store, "gru.bwd", config.token_dim(), h, s, init_rng);
                let attention = Attention::init(&mut store, "bgwa.att", 2 * h, config.attention_dim, s, init_rng);
                (Encoder::Bgwa { gru: [fwd, bwd], attention }, 2 * h)
            }
        };
        let conv_filters = store.add(
            "conv.filters",
            uniform(config.filters, config.window * conv_input, s, init_rng),
        );
        let conv_bias = store.add("conv.bias", uniform(1, config.filters, s, init_rng));
        let out_w = store.add("out.w", uniform(config.feature_dim(), num_classes, s, init_rng));
        let out_b = store.add("out.b", uniform(1, num_classes, s, init_rng));
        let model = Self {
            config,
            num_classes,
            tables,
            conv_filters,
            conv_bias,
            encoder,
            out_w,
            out_b,
            template: store.zeros_like(),
        };
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn tables(&self) -> &EmbeddingTables {
        &self.tables
    }

    pub fn output_weights(&self) -> (ParamId, ParamId) {
        (self.out_w, self.out_b)
    }

    /// Fails unless `params` has exactly this model's layout.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        self.template.check_compatible(params)
    }

    /// Records the forward pass and returns the `1 x C` probability row.
    /// Dropout is applied only when `dropout_rng` is given.
    pub fn forward(
        &self,
        g: &mut Graph,
        s: &EncodedSample,
        dropout_rng: Option<&mut StreamRng>,
    ) -> Result<Var> {
        Ok(self.forward_traced(g, s, dropout_rng)?.0)
    }

    fn forward_traced(
        &self,
        g: &mut Graph,
        s: &EncodedSample,
        dropout_rng: Option<&mut StreamRng>,
    ) -> Result<(Var, Var, Vec<Var>)> {
        if s.is_empty() {
            return Err(Error::shape("forward", "empty sentence"));
        }
        let (x, words) = self.tables.token_vectors(g, s)?;
        let mut attention = Vec::new();
        let feature = match &self.encoder {
            Encoder::Cnn => {
                let c = self.convolve(g, x)?;
                let pooled = g.max_pool(c)?;
                self.pooled_activation(g, pooled, 1)?
            }
            Encoder::Pcnn => {
                let c = self.convolve(g, x)?;
                let pooled = g.piecewise_max_pool(c, s.e1, s.e2)?;
                self.pooled_activation(g, pooled, 3)?
            }
            Encoder::Ea(scorers) => {
                let c = self.convolve(g, x)?;
                let pooled = g.max_pool(c)?;
                let global = self.pooled_activation(g, pooled, 1)?;
                let mut parts = vec![global];
                for (scorer, span) in scorers.iter().zip([s.e1, s.e2]) {
                    let last = g.slice_rows(words, span.1, 1)?;
                    let rep = g.repeat_rows(last, s.len())?;
                    let pair = g.hconcat(&[words, rep])?;
                    let a = scorer.weights(g, pair)?;
                    attention.push(a);
                    let at = g.transpose(a);
                    parts.push(g.matmul(at, words)?);
                }
                g.hconcat(&parts)?
            }
            Encoder::Bgwa { gru, attention: scorer } => {
                let fwd = gru_sequence(g, x, &gru[0], Direction::Forward)?;
                let bwd = gru_sequence(g, x, &gru[1], Direction::Backward)?;
                let hidden = g.hconcat(&[fwd, bwd])?;
                let a = scorer.weights(g, hidden)?;
                attention.push(a);
                let scaled = g.scale_rows(hidden, a)?;
                let c = self.convolve(g, scaled)?;
                let pooled = g.piecewise_max_pool(c, s.e1, s.e2)?;
                self.pooled_activation(g, pooled, 3)?
            }
        };
        let dropped = match dropout_rng {
            Some(rng) if self.config.dropout > 0.0 => {
                let keep = 1.0 - self.config.dropout;
                let width = g.value(feature).len();
                let mask = (0..width)
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                g.mask_mul(feature, mask)?
            }
            _ => feature,
        };
        let w = g.param(self.out_w);
        let b = g.param(self.out_b);
        let logits = g.matmul(dropped, w)?;
        let logits = g.add_row(logits, b)?;
        let probs = g.softmax_rows(logits);
        g.check_finite()?;
        Ok((probs, feature, attention))
    }

    fn convolve(&self, g: &mut Graph, input: Var) -> Result<Var> {
        let f = g.param(self.conv_filters);
        g.conv1d(input, f)
    }

    /// Adds the per-filter bias to every pooled segment and applies tanh.
    /// The bias is constant over positions and tanh is monotone, so this
    /// equals pooling `tanh(conv + bias)`.
    fn pooled_activation(&self, g: &mut Graph, pooled: Var, segments: usize) -> Result<Var> {
        let b = g.param(self.conv_bias);
        let b = if segments == 1 {
            b
        } else {
            g.hconcat(&vec![b; segments])?
        };
        let z = g.add_row(pooled, b)?;
        Ok(g.tanh(z))
    }

    /// Eval-mode prediction: no dropout, no tape.
    pub fn predict_encoded(&self, params: &ParamStore, s: &EncodedSample) -> Result<PredictionDistribution> {
        let mut g = Graph::inference(params);
        let p = self.forward(&mut g, s, None)?;
        PredictionDistribution::new(g.value(p).data().to_vec())
    }

    /// Eval-mode forward that also returns the feature vector and attention.
    pub fn inspect(&self, params: &ParamStore, s: &EncodedSample) -> Result<Inspection> {
        let mut g = Graph::inference(params);
        let (p, f, att) = self.forward_traced(&mut g, s, None)?;
        Ok(Inspection {
            probs: PredictionDistribution::new(g.value(p).data().to_vec())?,
            feature: g.value(f).data().to_vec(),
            attention: att.iter().map(|a| g.value(*a).data().to_vec()).collect(),
        })
    }

    pub fn classifier<'a>(&'a self, params: &'a ParamStore, vocab: &'a Vocabulary) -> Classifier<'a> {
        Classifier {
            model: self,
            params,
            vocab,
        }
    }
}

/// A model, a parameter set and the vocabulary used to encode raw samples.
#[derive(Clone, Copy)]
pub struct Classifier<'a> {
    pub model: &'a RelationModel,
    pub params: &'a ParamStore,
    pub vocab: &'a Vocabulary,
}

impl Predictor for Classifier<'_> {
    fn predict(&self, sample: &RelationSample) -> Result<PredictionDistribution> {
        let enc = EncodedSample::new(sample, self.vocab, self.model.config.max_distance)?;
        self.model.predict_encoded(self.params, &enc)
    }
}

/// Builds a model and its initial parameters from the run seed's `init`
/// stream.
pub fn init_model(
    config: ModelConfig,
    vocab_size: usize,
    num_classes: usize,
    seed: u64,
) -> Result<(RelationModel, ParamStore)> {
    let mut r = rng::stream(seed, "init", &[]);
    RelationModel::new(config, vocab_size, num_classes, &mut r)
}

/// Zeroes every tensor in `params` whose name starts with `prefix`.
pub fn zero_params(params: &mut ParamStore, prefix: &str) {
    let ids: Vec<ParamId> = params.ids().filter(|&id| params.name(id).starts_with(prefix)).collect();
    for id in ids {
        let shape = params.get(id).shape().to_vec();
        *params.get_mut(id) = Tensor::zeros(shape);
    }
}

#[cfg(test)]
mod tests;
