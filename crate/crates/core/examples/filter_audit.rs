//! Trains a teacher for a few epochs, then asks which samples it would drop
//! for several values of K and how many of those carry injected noise.

use std::collections::BTreeMap;

use relex_sef::corpus::{generate_synthetic, split_train_valid, NoiseKind, SynthConfig};
use relex_sef::noise_filter::{filter_corpus, filter_quality, FilterReason};
use relex_sef::self_ensemble::{TrainConfig, Trainer};
use relex_sef::students::ModelConfig;

fn main() -> relex_sef::Result<()> {
    let (samples, schema) = generate_synthetic(&SynthConfig::default(), 3)?;
    let split = split_train_valid(&samples, 0.9, 3)?;
    let config = TrainConfig {
        model: ModelConfig {
            filters: 64,
            ..ModelConfig::default()
        },
        learning_rate: 0.1,
        max_epochs: 4,
        patience: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, schema.clone(), split)?;
    while !trainer.is_finished() {
        trainer.run_epoch()?;
    }
    let teacher = trainer.model().classifier(trainer.teacher().params(), trainer.vocab());
    let corpus = trainer.train_samples();

    for k in [1, 3, 5, schema.num_classes()] {
        let outcome = filter_corpus(&teacher, corpus, &schema, k, trainer.epoch() + 1)?;
        let q = filter_quality(&outcome.active.mask, corpus).expect("synthetic data carries noise flags");
        let mut by_kind: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for d in &outcome.decisions {
            let kind = NoiseKind::of(&corpus[d.index], &schema).unwrap();
            let e = by_kind.entry(format!("{kind:?}")).or_default();
            e.0 += usize::from(!d.kept);
            e.1 += 1;
        }
        println!(
            "K = {k:>2}: dropped {:>4}, noise precision {:.3}, noise recall {:.3}",
            q.dropped, q.precision, q.recall
        );
        for (kind, (dropped, total)) in by_kind {
            println!("         {kind:<14} {dropped:>4} / {total}");
        }
    }

    let outcome = filter_corpus(&teacher, corpus, &schema, 3, trainer.epoch() + 1)?;
    println!("\nsome dropped samples (K = 3):");
    for d in outcome.decisions.iter().filter(|d| d.reason != FilterReason::Clean).take(5) {
        let rec = d.to_record(&corpus[d.index], &schema);
        println!("  {} labelled {} ({:?}), teacher top {:?}", rec.id, rec.relation, rec.reason, rec.teacher_top);
    }
    Ok(())
}
