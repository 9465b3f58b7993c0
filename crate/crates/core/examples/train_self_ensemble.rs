//! Trains a student/teacher pair on a synthetic noisy corpus with and
//! without filtering, then scores both best teachers on a noise-free test
//! set.
//!
//! ```text
//! cargo run --release --example train_self_ensemble -- [cnn|pcnn|ea|bgwa] [seed]
//! ```

use relex_sef::corpus::{generate_synthetic, split_train_valid, test_seed, SynthConfig};
use relex_sef::evaluation::evaluate;
use relex_sef::self_ensemble::{TrainConfig, Trainer};
use relex_sef::students::{Architecture, ModelConfig};

fn main() -> relex_sef::Result<()> {
    let mut args = std::env::args().skip(1);
    let arch: Architecture = args.next().as_deref().unwrap_or("cnn").parse()?;
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let synth = SynthConfig::default();
    let (samples, schema) = generate_synthetic(&synth, seed)?;
    let (test, _) = generate_synthetic(&synth.noise_free(100), test_seed(seed))?;
    let split = split_train_valid(&samples, 0.9, seed)?;

    for filtering in [true, false] {
        let config = TrainConfig {
            model: ModelConfig {
                arch,
                filters: 100,
                ..ModelConfig::default()
            },
            learning_rate: 0.1,
            max_epochs: 8,
            patience: 3,
            filtering,
            seed,
            ..TrainConfig::default()
        };
        println!("{} ({arch})", if filtering { "with filtering" } else { "without filtering" });
        let mut trainer = Trainer::new(config, schema.clone(), split.clone())?;
        while !trainer.is_finished() {
            let r = trainer.run_epoch()?.record;
            println!(
                "  epoch {}: loss {:.4}, val F1 {:.4}, active {} (dropped {} None, {} valid), alpha {:.3}",
                r.epoch, r.train_loss, r.val_f1, r.active_size, r.filtered_none, r.filtered_valid, r.alpha_end
            );
        }
        let (best, epoch) = trainer.best().expect("ran at least one epoch");
        let teacher = trainer.model().classifier(trainer.best_teacher(), trainer.vocab());
        let scores = evaluate(&teacher, &test, &schema, best.threshold)?;
        println!(
            "  best teacher from epoch {epoch}: clean test P {:.4} R {:.4} F1 {:.4}\n",
            scores.precision, scores.recall, scores.f1
        );
    }
    Ok(())
}
