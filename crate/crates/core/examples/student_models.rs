//! Builds the four student encoders at their default sizes and inspects one
//! prediction from each, including attention weights where the encoder has
//! them.

use relex_sef::corpus::{RelationSample, RelationSchema, Span, Vocabulary};
use relex_sef::students::{init_model, Architecture, EncodedSample, ModelConfig};

fn main() -> relex_sef::Result<()> {
    let schema = RelationSchema::new(vec!["None".into(), "founded_by".into(), "born_in".into()])?;
    let sentence = "Jobs co-founded Apple in a garage in 1976";
    let sample = RelationSample {
        id: "demo".into(),
        tokens: sentence.split(' ').map(String::from).collect(),
        e1: Span::single(2),
        e2: Span::single(0),
        label: 1,
        noise_truth: None,
    };
    let vocab = Vocabulary::build([&sample]);

    for arch in Architecture::ALL {
        let config = ModelConfig {
            arch,
            ..ModelConfig::default()
        };
        let (model, params) = init_model(config.clone(), vocab.len(), schema.num_classes(), 42)?;
        let encoded = EncodedSample::new(&sample, &vocab, config.max_distance)?;
        let view = model.inspect(&params, &encoded)?;
        println!(
            "{:>4}: {:>7} parameters, feature width {}, probabilities {:.3?}",
            arch.to_string(),
            params.num_scalars(),
            view.feature.len(),
            view.probs.probs
        );
        for (i, weights) in view.attention.iter().enumerate() {
            let top = weights
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(t, w)| format!("{} ({w:.3})", sample.tokens[t]))
                .unwrap();
            println!("      attention {i}: highest weight on {top}");
        }
    }
    Ok(())
}
