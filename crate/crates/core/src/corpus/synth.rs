//! Synthetic distant-supervision corpora with known noise.
//!
//! Every valid relation owns a set of trigger words. A clean positive
//! contains one trigger of its label between the two entities; a clean
//! `None` sentence contains no trigger at all. Positive noise keeps a valid
//! label on a trigger-free sentence, negative noise labels a sentence that
//! does contain a trigger as `None`. Triggers and filler words are drawn
//! from Zipf distributions, so some triggers are rare.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::{RelationSample, RelationSchema, Span, MAX_TOKENS, NONE_RELATION};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Valid relations, not counting `None`.
    pub num_relations: usize,
    pub samples_per_relation: usize,
    /// `None` samples per valid sample.
    pub none_ratio: f64,
    /// Probability that a valid-labelled sample carries no trigger.
    pub pos_noise: f64,
    /// Probability that a `None`-labelled sample carries a trigger.
    pub neg_noise: f64,
    pub vocab_size: usize,
    pub entity_vocab: usize,
    pub triggers_per_relation: usize,
    pub trigger_zipf: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_relations: 10,
            samples_per_relation: 180,
            none_ratio: 2.3,
            pos_noise: 0.3,
            neg_noise: 0.2,
            vocab_size: 1000,
            entity_vocab: 400,
            triggers_per_relation: 12,
            trigger_zipf: 1.1,
            min_len: 8,
            max_len: 24,
            id_prefix: "syn".into(),
        }
    }
}

impl SynthConfig {
    /// The same generator with both noise rates at zero, for held-out
    /// test data.
    pub fn noise_free(&self, samples_per_relation: usize) -> Self {
        Self {
            samples_per_relation,
            pos_noise: 0.0,
            neg_noise: 0.0,
            id_prefix: "test".into(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, rate) in [("pos_noise", self.pos_noise), ("neg_noise", self.neg_noise)] {
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("{name} = {rate} outside [0, 1]"));
            }
        }
        if !(self.none_ratio >= 0.0 && self.none_ratio.is_finite()) {
            return bad(format!("none_ratio = {} must be >= 0", self.none_ratio));
        }
        if self.num_relations == 0 || self.triggers_per_relation == 0 {
            return bad("need at least one relation and one trigger per relation".into());
        }
        if self.vocab_size == 0 || self.entity_vocab == 0 {
            return bad("vocabularies must be non-empty".into());
        }
        if self.min_len < 7 || self.max_len < self.min_len || self.max_len > MAX_TOKENS {
            return bad(format!(
                "sentence length range [{}, {}] must satisfy 7 <= min <= max <= {MAX_TOKENS}",
                self.min_len, self.max_len
            ));
        }
        if !(self.trigger_zipf > 0.0) {
            return bad("trigger_zipf must be positive".into());
        }
        Ok(())
    }

    pub fn schema(&self) -> RelationSchema {
        let mut names = vec![NONE_RELATION.to_string()];
        names.extend((0..self.num_relations).map(relation_name));
        RelationSchema::new(names).expect("generated schema is valid")
    }
}

fn relation_name(r: usize) -> String {
    format!("rel_{r:02}")
}

fn trigger_word(r: usize, j: usize) -> String {
    format!("t{r:02}_{j:02}")
}

/// Schema index of the relation a synthetic trigger word belongs to.
/// Relations are numbered from 1 because `None` sits at index 0.
pub fn trigger_relation(token: &str) -> Option<usize> {
    let rest = token.strip_prefix('t')?;
    let (r, j) = rest.split_once('_')?;
    if r.len() != 2 || j.len() != 2 || !j.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    r.parse::<usize>().ok().map(|r| r + 1)
}

/// Status of a synthetic sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    CleanPositive,
    NoisyPositive,
    CleanNone,
    NoisyNone,
}

impl NoiseKind {
    pub fn of(sample: &RelationSample, schema: &RelationSchema) -> Option<Self> {
        let noisy = sample.noise_truth?;
        Some(match (schema.is_none(sample.label), noisy) {
            (false, false) => NoiseKind::CleanPositive,
            (false, true) => NoiseKind::NoisyPositive,
            (true, false) => NoiseKind::CleanNone,
            (true, true) => NoiseKind::NoisyNone,
        })
    }
}

struct Sampler {
    cfg: SynthConfig,
    filler: Zipf<f64>,
    trigger: Zipf<f64>,
}

impl Sampler {
    fn filler(&self, rng: &mut StreamRng) -> String {
        format!("w{}", self.filler.sample(rng) as usize - 1)
    }

    fn entity(&self, rng: &mut StreamRng) -> String {
        format!("E{}", rng.gen_range(0..self.cfg.entity_vocab))
    }

    /// A sentence with two entities and, optionally, a trigger of valid
    /// relation `trigger_of` (0-based) placed between them.
    fn sentence(
        &self,
        rng: &mut StreamRng,
        trigger_of: Option<usize>,
    ) -> (Vec<String>, Span, Span) {
        let n = rng.gen_range(self.cfg.min_len..=self.cfg.max_len);
        let len_a = rng.gen_range(1..=2);
        let len_b = rng.gen_range(1..=2);
        // leave room for at least two tokens between the entities
        let start_a = rng.gen_range(0..=n - len_a - len_b - 2);
        let start_b = rng.gen_range(start_a + len_a + 2..=n - len_b);
        let first = Span::new(start_a, start_a + len_a - 1);
        let second = Span::new(start_b, start_b + len_b - 1);

        let mut tokens: Vec<String> = (0..n).map(|_| self.filler(rng)).collect();
        for span in [first, second] {
            for t in &mut tokens[span.start..=span.end] {
                *t = self.entity(rng);
            }
        }
        if let Some(r) = trigger_of {
            let at = rng.gen_range(first.end + 1..second.start);
            let j = self.trigger.sample(rng) as usize - 1;
            tokens[at] = trigger_word(r, j);
        }
        if rng.gen_bool(0.5) {
            (tokens, first, second)
        } else {
            (tokens, second, first)
        }
    }
}

/// Seed of the clean test corpus that goes with a training corpus
/// generated from `seed`.
pub fn test_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, "synth-test", &[])
}

/// Generates a labelled corpus and its schema. Deterministic in
/// `(config, seed)`.
pub fn generate_synthetic(
    config: &SynthConfig,
    seed: u64,
) -> Result<(Vec<RelationSample>, RelationSchema)> {
    config.validate()?;
    let schema = config.schema();
    let sampler = Sampler {
        cfg: config.clone(),
        filler: Zipf::new(config.vocab_size as u64, 1.0)
            .map_err(|e| Error::Config(e.to_string()))?,
        trigger: Zipf::new(config.triggers_per_relation as u64, config.trigger_zipf)
            .map_err(|e| Error::Config(e.to_string()))?,
    };
    let mut rng = rng::stream(seed, "synth", &[]);
    let mut samples = Vec::new();
    let n_valid = config.num_relations * config.samples_per_relation;
    let n_none = (config.none_ratio * n_valid as f64).round() as usize;

    for r in 0..config.num_relations {
        for _ in 0..config.samples_per_relation {
            let noisy = rng.gen_bool(config.pos_noise);
            let (tokens, e1, e2) = sampler.sentence(&mut rng, (!noisy).then_some(r));
            samples.push((tokens, e1, e2, r + 1, noisy));
        }
    }
    for _ in 0..n_none {
        let noisy = rng.gen_bool(config.neg_noise);
        let trigger = noisy.then(|| rng.gen_range(0..config.num_relations));
        let (tokens, e1, e2) = sampler.sentence(&mut rng, trigger);
        samples.push((tokens, e1, e2, schema.none_index(), noisy));
    }
    samples.shuffle(&mut rng);

    let out = samples
        .into_iter()
        .enumerate()
        .map(|(i, (tokens, e1, e2, label, noisy))| RelationSample {
            id: format!("{}{i:06}", config.id_prefix),
            tokens,
            e1,
            e2,
            label,
            noise_truth: Some(noisy),
        })
        .collect();
    Ok((out, schema))
}
