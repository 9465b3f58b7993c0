use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::args::{EvalArgs, FilterReportArgs, SynthArgs, TeacherChoice, TrainArgs};
use super::manifest::{InputDigest, RunManifest};
use crate::corpus::{
    generate_synthetic, load_corpus, load_schema, split_train_valid, write_corpus, write_schema, CorpusSplit,
    test_seed, RelationSample, SynthConfig,
};
use crate::error::Error;
use crate::evaluation::{evaluate_predictions, gold_labels, per_relation, select_threshold, EvalResult, RelationScore};
use crate::noise_filter::{filter_corpus, filter_quality, FilterOutcome, FilterQuality};
use crate::self_ensemble::{Checkpoint, EpochRecord, TrainConfig, Trainer};
use crate::students::{ModelConfig, PretrainedEmbeddings, Predictor};

pub(super) enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Validation failures become usage errors; everything else stays a
/// runtime failure.
fn config_as_usage(e: Error) -> CliError {
    match e {
        Error::Config(msg) => CliError::Usage(msg),
        other => CliError::Runtime(other),
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult {
    std::fs::create_dir_all(path).map_err(|e| CliError::Runtime(Error::io(path, e)))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Runtime(Error::io(path, e)))
}

/// Writes one JSON value per line.
fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, &row).map_err(Error::from)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::Runtime(Error::io(path, e)))
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    manifest_id: &'a str,
    #[serde(flatten)]
    inner: T,
}

/// Resolved settings of a training run; this is what the manifest records.
#[derive(Debug, Clone, Serialize)]
struct TrainRun {
    train: TrainConfig,
    train_ratio: f64,
    separate_validation: bool,
    pretrained_embeddings: bool,
}

fn train_config(a: &TrainArgs) -> CliResult<TrainRun> {
    let d = TrainConfig::default();
    let m = ModelConfig::default();
    let train = TrainConfig {
        model: ModelConfig {
            arch: a.arch.unwrap_or(m.arch),
            word_dim: a.word_dim.unwrap_or(m.word_dim),
            pos_dim: a.pos_dim.unwrap_or(m.pos_dim),
            max_distance: a.max_distance.unwrap_or(m.max_distance),
            filters: a.filters.unwrap_or(m.filters),
            window: a.window.unwrap_or(m.window),
            gru_hidden: a.gru_hidden.unwrap_or(m.gru_hidden),
            attention_dim: a.attention_dim.unwrap_or(m.attention_dim),
            dropout: a.dropout.unwrap_or(m.dropout),
            init_scale: a.init_scale.unwrap_or(m.init_scale),
        },
        batch_size: a.batch.unwrap_or(d.batch_size),
        alpha_max: a.alpha_max.unwrap_or(d.alpha_max),
        ramp_epochs: a.ramp_epochs.unwrap_or(d.ramp_epochs),
        top_k: a.k.unwrap_or(d.top_k),
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        max_epochs: a.epochs.unwrap_or(d.max_epochs),
        patience: a.patience.unwrap_or(d.patience),
        filtering: !a.no_filter,
        seed: a.seed.unwrap_or(d.seed),
    };
    train.validate().map_err(config_as_usage)?;
    let train_ratio = a.train_ratio.unwrap_or(0.9);
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(usage(format!("--train-ratio {train_ratio} outside (0, 1)")));
    }
    if a.validation.is_some() && a.train_ratio.is_some() {
        return Err(usage("--train-ratio has no effect together with --validation"));
    }
    Ok(TrainRun {
        train,
        train_ratio,
        separate_validation: a.validation.is_some(),
        pretrained_embeddings: a.embeddings.is_some(),
    })
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    value.as_deref().ok_or_else(|| usage(format!("missing --{flag}")))
}

pub(super) fn cmd_train(flags: TrainArgs) -> CliResult {
    let args = match &flags.config {
        Some(path) => {
            let file: TrainArgs = read_config(path)?;
            flags.merge(file)
        }
        None => flags,
    };
    let corpus_path = required(&args.corpus, "corpus")?;
    let schema_path = required(&args.schema, "schema")?;
    let out = required(&args.out, "out")?;
    let run = train_config(&args)?;
    let seed = run.train.seed;

    let schema = load_schema(schema_path)?;
    if run.train.top_k > schema.num_classes() {
        return Err(usage(format!("--k {} exceeds the {} classes", run.train.top_k, schema.num_classes())));
    }
    let corpus = load_corpus(corpus_path, &schema)?;
    let split = match &args.validation {
        Some(v) => CorpusSplit {
            train: corpus,
            validation: load_corpus(v, &schema)?,
            seed,
        },
        None => split_train_valid(&corpus, run.train_ratio, seed)?,
    };
    let embeddings = match &args.embeddings {
        Some(p) => Some(PretrainedEmbeddings::load(p, run.train.model.word_dim)?),
        None => None,
    };

    let mut inputs = vec![InputDigest::of("corpus", corpus_path)?, InputDigest::of("schema", schema_path)?];
    if let Some(v) = &args.validation {
        inputs.push(InputDigest::of("validation", v)?);
    }
    if let Some(e) = &args.embeddings {
        inputs.push(InputDigest::of("embeddings", e)?);
    }
    let mut manifest = RunManifest::new("train", seed, &run, inputs)?;
    let id = manifest.id.clone();

    create_dir(out)?;
    create_dir(&out.join("filter"))?;
    write_schema(out.join("schema.json"), &schema)?;
    write_corpus(out.join("validation.jsonl"), &split.validation, &schema)?;

    let mut trainer = Trainer::with_embeddings(run.train.clone(), schema.clone(), split, embeddings.as_ref())
        .map_err(config_as_usage)?;
    log::info!(
        "run {id}: {} training / {} validation samples, {} architecture",
        trainer.train_samples().len(),
        trainer.validation_samples().len(),
        run.train.model.arch
    );

    let log_path = out.join("train_log.jsonl");
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    while !trainer.is_finished() {
        let report = trainer.run_epoch()?;
        manifest.epoch_seconds.push(report.seconds);
        let line = Tagged {
            manifest_id: &id,
            inner: &report.record,
        };
        serde_json::to_writer(&mut log_file, &line).map_err(Error::from)?;
        log_file
            .write_all(b"\n")
            .and_then(|_| log_file.flush())
            .map_err(|e| Error::io(&log_path, e))?;
        log_epoch(&report.record);
        if let Some(f) = &report.filter {
            let path = out.join("filter").join(format!("epoch_{:03}.jsonl", f.active.epoch));
            write_filter_decisions(&path, &id, f, trainer.train_samples(), &schema)?;
        }
    }

    Checkpoint::from_trainer(&trainer, id.clone()).save(out.join("checkpoint.json"))?;
    write_json(
        &out.join("alphas.json"),
        &Tagged {
            manifest_id: &id,
            inner: AlphaTrace {
                alphas: &trainer.log().alphas,
            },
        },
    )?;
    manifest.save(&out.join("manifest.json"))?;
    let (best, epoch) = trainer.best().expect("at least one epoch ran");
    println!(
        "best epoch {epoch}: P {:.4} R {:.4} F1 {:.4} threshold {:.4}",
        best.precision, best.recall, best.f1, best.threshold
    );
    Ok(())
}

#[derive(Serialize)]
struct AlphaTrace<'a> {
    alphas: &'a [f64],
}

fn log_epoch(r: &EpochRecord) {
    log::info!(
        "epoch {}: val P {:.4} R {:.4} F1 {:.4}, active {}, dropped {} None / {} valid, alpha {:.4}, loss {:.4}",
        r.epoch,
        r.val_precision,
        r.val_recall,
        r.val_f1,
        r.active_size,
        r.filtered_none,
        r.filtered_valid,
        r.alpha_end,
        r.train_loss
    );
}

fn write_filter_decisions(
    path: &Path,
    manifest_id: &str,
    outcome: &FilterOutcome,
    corpus: &[RelationSample],
    schema: &crate::corpus::RelationSchema,
) -> CliResult {
    write_jsonl(
        path,
        outcome.decisions.iter().map(|d| Tagged {
            manifest_id,
            inner: d.to_record(&corpus[d.index], schema),
        }),
    )
}

#[derive(Serialize)]
struct EvalReport {
    manifest_id: String,
    threshold_source: &'static str,
    samples: usize,
    result: EvalResult,
    per_relation: Vec<RelationScore>,
    /// Scores restricted to samples flagged noise-free, when flags exist.
    #[serde(skip_serializing_if = "Option::is_none")]
    clean: Option<EvalResult>,
}

pub(super) fn cmd_eval(args: EvalArgs) -> CliResult {
    if let Some(t) = args.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(usage(format!("--threshold {t} outside [0, 1]")));
        }
    }
    let ck = Checkpoint::load(&args.checkpoint)?;
    if let Some(path) = &args.schema {
        let given = load_schema(path)?;
        if given != ck.schema {
            return Err(Error::SchemaMismatch(format!(
                "{} lists {:?}, the checkpoint was trained on {:?}",
                path.display(),
                given.relations(),
                ck.schema.relations()
            ))
            .into());
        }
    }
    let model = ck.model()?;
    let teacher = ck.classifier(&model);
    let corpus = load_corpus(&args.corpus, &ck.schema)?;
    let (threshold, source) = match (&args.threshold, &args.validation) {
        (Some(t), _) => (*t, "flag"),
        (None, Some(v)) => {
            let val = load_corpus(v, &ck.schema)?;
            (select_threshold(&teacher, &val, &ck.schema)?.threshold, "validation")
        }
        (None, None) => (ck.threshold, "checkpoint"),
    };
    let preds = teacher.predict_all(&corpus)?;
    let gold = gold_labels(&corpus);
    let result = evaluate_predictions(&preds, &gold, &ck.schema, threshold);
    let clean = corpus.iter().all(|s| s.noise_truth.is_some()).then(|| {
        let keep: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].noise_truth == Some(false)).collect();
        let p: Vec<_> = keep.iter().map(|&i| preds[i].clone()).collect();
        let g: Vec<_> = keep.iter().map(|&i| gold[i]).collect();
        evaluate_predictions(&p, &g, &ck.schema, threshold)
    });
    let report = EvalReport {
        manifest_id: ck.manifest_id.clone(),
        threshold_source: source,
        samples: corpus.len(),
        per_relation: per_relation(&preds, &gold, &ck.schema, threshold),
        result,
        clean,
    };
    println!(
        "P {:.4} R {:.4} F1 {:.4} at threshold {:.4} ({} samples)",
        report.result.precision, report.result.recall, report.result.f1, threshold, report.samples
    );
    match &args.report {
        Some(path) => write_json(path, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
            Ok(())
        }
    }
}

fn synth_config(a: &SynthArgs) -> CliResult<SynthConfig> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        num_relations: a.relations.unwrap_or(d.num_relations),
        samples_per_relation: a.samples_per_relation.unwrap_or(d.samples_per_relation),
        none_ratio: a.none_ratio.unwrap_or(d.none_ratio),
        pos_noise: a.pos_noise.unwrap_or(d.pos_noise),
        neg_noise: a.neg_noise.unwrap_or(d.neg_noise),
        vocab_size: a.vocab_size.unwrap_or(d.vocab_size),
        entity_vocab: a.entity_vocab.unwrap_or(d.entity_vocab),
        triggers_per_relation: a.triggers.unwrap_or(d.triggers_per_relation),
        trigger_zipf: a.trigger_zipf.unwrap_or(d.trigger_zipf),
        min_len: a.min_len.unwrap_or(d.min_len),
        max_len: a.max_len.unwrap_or(d.max_len),
        id_prefix: d.id_prefix,
    };
    cfg.validate().map_err(config_as_usage)?;
    Ok(cfg)
}

#[derive(Serialize)]
struct SynthRun<'a> {
    synth: &'a SynthConfig,
    test_per_relation: usize,
}

pub(super) fn cmd_synth(flags: SynthArgs) -> CliResult {
    let args = match &flags.config {
        Some(path) => {
            let file: SynthArgs = read_config(path)?;
            flags.merge(file)
        }
        None => flags,
    };
    let out = required(&args.out, "out")?;
    let cfg = synth_config(&args)?;
    let seed = args.seed.unwrap_or(1);
    let test_per_relation = args.test_per_relation.unwrap_or(0);

    let (samples, schema) = generate_synthetic(&cfg, seed)?;
    create_dir(out)?;
    write_corpus(out.join("corpus.jsonl"), &samples, &schema)?;
    write_schema(out.join("schema.json"), &schema)?;
    let mut test_len = 0;
    if test_per_relation > 0 {
        let (test, _) = generate_synthetic(&cfg.noise_free(test_per_relation), test_seed(seed))?;
        test_len = test.len();
        write_corpus(out.join("test.jsonl"), &test, &schema)?;
    }
    let manifest = RunManifest::new(
        "synth",
        seed,
        &SynthRun {
            synth: &cfg,
            test_per_relation,
        },
        Vec::new(),
    )?;
    manifest.save(&out.join("manifest.json"))?;
    let none = samples.iter().filter(|s| schema.is_none(s.label)).count();
    let noisy = samples.iter().filter(|s| s.noise_truth == Some(true)).count();
    println!(
        "{} samples ({} None, {} noisy), {} test samples, {} relations, manifest {}",
        samples.len(),
        none,
        noisy,
        test_len,
        schema.num_classes() - 1,
        manifest.id
    );
    Ok(())
}

#[derive(Serialize)]
struct FilterSummary {
    manifest_id: String,
    k: usize,
    teacher: &'static str,
    total: usize,
    kept: usize,
    dropped_none: usize,
    dropped_valid: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    quality: Option<FilterQuality>,
}

pub(super) fn cmd_filter_report(args: FilterReportArgs) -> CliResult {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let k = args.k.unwrap_or(ck.config.top_k);
    if k == 0 || k > ck.schema.num_classes() {
        return Err(usage(format!("--k {k} outside [1, {}]", ck.schema.num_classes())));
    }
    let model = ck.model()?;
    let (params, which) = match args.teacher {
        TeacherChoice::Best => (&ck.best_teacher, "best"),
        TeacherChoice::Final => (&ck.teacher, "final"),
    };
    let teacher = model.classifier(params, &ck.vocab);
    let corpus = load_corpus(&args.corpus, &ck.schema)?;
    let outcome = filter_corpus(&teacher, &corpus, &ck.schema, k, ck.epoch + 1)?;
    create_dir(&args.out)?;
    write_filter_decisions(&args.out.join("decisions.jsonl"), &ck.manifest_id, &outcome, &corpus, &ck.schema)?;
    let summary = FilterSummary {
        manifest_id: ck.manifest_id.clone(),
        k,
        teacher: which,
        total: corpus.len(),
        kept: outcome.active.active_count(),
        dropped_none: outcome.active.filtered_none(&ck.schema),
        dropped_valid: outcome.active.filtered_valid(&ck.schema),
        quality: filter_quality(&outcome.active.mask, &corpus),
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    print!(
        "kept {} of {} (dropped {} None, {} valid)",
        summary.kept, summary.total, summary.dropped_none, summary.dropped_valid
    );
    match &summary.quality {
        Some(q) => println!("; noise precision {:.3}, recall {:.3}", q.precision, q.recall),
        None => println!(),
    }
    Ok(())
}
