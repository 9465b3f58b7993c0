use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::students::Architecture;

#[derive(Debug, Parser)]
#[command(name = "relex-sef", version, about = "Self-ensemble noise filtering for distantly supervised relation extraction")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a student/teacher pair and write a checkpoint.
    Train(TrainArgs),
    /// Score a corpus with a checkpoint's best teacher.
    Eval(EvalArgs),
    /// Generate a synthetic noisy corpus.
    Synth(SynthArgs),
    /// Audit which samples a checkpoint's teacher would drop.
    FilterReport(FilterReportArgs),
}

/// Every field can also come from the `--config` JSON file, keyed by the
/// flag name with underscores. Flags win over the file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// JSON file with defaults for any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Training corpus (JSONL).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Relation schema (JSON).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Separate validation corpus; without it the training corpus is split.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Student encoder: cnn, pcnn, ea or bgwa.
    #[arg(long)]
    pub arch: Option<Architecture>,
    /// Train on the full corpus every epoch.
    #[arg(long)]
    pub no_filter: bool,
    /// Keep a valid-labelled sample only if its label is in the teacher's top K.
    #[arg(long)]
    pub k: Option<usize>,
    /// Final EMA decay of the teacher.
    #[arg(long)]
    pub alpha_max: Option<f64>,
    /// Epochs over which the decay ramps up to its final value.
    #[arg(long)]
    pub ramp_epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Adagrad learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many epochs without a validation F1 gain.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Fraction of the corpus kept for training when no validation corpus is given.
    #[arg(long)]
    pub train_ratio: Option<f64>,
    /// Word vectors in text format, one word per line.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub pos_dim: Option<usize>,
    /// Relative positions are clipped to this distance.
    #[arg(long)]
    pub max_distance: Option<usize>,
    /// Convolution filters.
    #[arg(long)]
    pub filters: Option<usize>,
    /// Convolution window width.
    #[arg(long)]
    pub window: Option<usize>,
    /// Hidden units per GRU direction.
    #[arg(long)]
    pub gru_hidden: Option<usize>,
    #[arg(long)]
    pub attention_dim: Option<usize>,
    /// Half-width of the uniform initialisation range.
    #[arg(long)]
    pub init_scale: Option<f64>,
}

/// Builds `Self` taking each listed `Option` field from `$flags` when set
/// and from `$file` otherwise.
macro_rules! merge_options {
    ($flags:ident, $file:ident, { $($extra:ident: $val:expr),* $(,)? }, $($field:ident),* $(,)?) => {
        Self {
            $($extra: $val,)*
            $($field: $flags.$field.or($file.$field),)*
        }
    };
}

impl TrainArgs {
    pub fn merge(self, file: TrainArgs) -> Self {
        let flags = self;
        merge_options!(
            flags, file,
            { config: flags.config, no_filter: flags.no_filter || file.no_filter },
            corpus, schema, out, validation, arch, k, alpha_max, ramp_epochs, batch, lr, seed, epochs,
            patience, dropout, train_ratio, embeddings, word_dim, pos_dim, max_distance, filters, window,
            gru_hidden, attention_dim, init_scale,
        )
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus to score (JSONL).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Fails unless it matches the checkpoint's schema.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Fixed confidence threshold.
    #[arg(long, conflicts_with = "validation")]
    pub threshold: Option<f64>,
    /// Re-select the threshold on this corpus.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Valid relations, not counting None.
    #[arg(long)]
    pub relations: Option<usize>,
    #[arg(long)]
    pub samples_per_relation: Option<usize>,
    #[arg(long)]
    pub none_ratio: Option<f64>,
    #[arg(long)]
    pub pos_noise: Option<f64>,
    #[arg(long)]
    pub neg_noise: Option<f64>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub entity_vocab: Option<usize>,
    #[arg(long)]
    pub triggers: Option<usize>,
    #[arg(long)]
    pub trigger_zipf: Option<f64>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Also write a noise-free test corpus with this many samples per valid
    /// relation.
    #[arg(long)]
    pub test_per_relation: Option<usize>,
}

impl SynthArgs {
    pub fn merge(self, file: SynthArgs) -> Self {
        let flags = self;
        merge_options!(
            flags, file,
            { config: flags.config },
            out, seed, relations, samples_per_relation, none_ratio, pos_noise, neg_noise, vocab_size,
            entity_vocab, triggers, trigger_zipf, min_len, max_len, test_per_relation,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TeacherChoice {
    /// Teacher from the epoch with the best validation F1.
    Best,
    /// Teacher as it was when training stopped.
    Final,
}

#[derive(Debug, Clone, Args)]
pub struct FilterReportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to the checkpoint's K.
    #[arg(long)]
    pub k: Option<usize>,
    /// Output directory for `decisions.jsonl` and `summary.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = TeacherChoice::Best)]
    pub teacher: TeacherChoice,
}
