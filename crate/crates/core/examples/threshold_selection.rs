//! Picks the confidence threshold that maximises validation F1 and shows the
//! precision/recall trade-off around it.

use relex_sef::corpus::{generate_synthetic, split_train_valid, test_seed, SynthConfig};
use relex_sef::evaluation::{evaluate_predictions, gold_labels, per_relation, select_threshold_predictions};
use relex_sef::self_ensemble::{train, TrainConfig};
use relex_sef::students::{ModelConfig, Predictor};

fn main() -> relex_sef::Result<()> {
    let synth = SynthConfig::default();
    let (samples, schema) = generate_synthetic(&synth, 5)?;
    let (test, _) = generate_synthetic(&synth.noise_free(50), test_seed(5))?;
    let split = split_train_valid(&samples, 0.9, 5)?;
    let validation = split.validation.clone();
    let config = TrainConfig {
        model: ModelConfig {
            filters: 64,
            ..ModelConfig::default()
        },
        learning_rate: 0.1,
        max_epochs: 3,
        seed: 5,
        ..TrainConfig::default()
    };
    let outcome = train(config, schema.clone(), split)?;
    let teacher = outcome.model.classifier(&outcome.best_teacher, &outcome.vocab);

    let val_preds = teacher.predict_all(&validation)?;
    let val_gold = gold_labels(&validation);
    let chosen = select_threshold_predictions(&val_preds, &val_gold, &schema);
    println!("validation sweep:");
    for t in [0.0, 0.2, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95] {
        let r = evaluate_predictions(&val_preds, &val_gold, &schema, t);
        println!("  threshold {t:.2}: P {:.3} R {:.3} F1 {:.3}", r.precision, r.recall, r.f1);
    }
    println!("selected {:.4} with F1 {:.4}", chosen.threshold, chosen.f1);

    let test_preds = teacher.predict_all(&test)?;
    let test_gold = gold_labels(&test);
    let raw = evaluate_predictions(&test_preds, &test_gold, &schema, 0.0);
    let tuned = evaluate_predictions(&test_preds, &test_gold, &schema, chosen.threshold);
    println!("clean test F1: {:.4} at threshold 0, {:.4} at the selected threshold", raw.f1, tuned.f1);
    for row in per_relation(&test_preds, &test_gold, &schema, chosen.threshold).iter().take(4) {
        println!("  {:<8} P {:.3} R {:.3} F1 {:.3} (support {})", row.relation, row.precision, row.recall, row.f1, row.support);
    }
    Ok(())
}
