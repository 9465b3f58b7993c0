//! Finite-difference check of every student's gradients at a tiny size.

use relex_sef::autodiff::check_gradients;
use relex_sef::students::{position_bucket, Architecture, EncodedSample, ModelConfig, RelationModel};

fn main() -> relex_sef::Result<()> {
    let n = 7;
    let (e1, e2) = (1, 4);
    let sample = EncodedSample {
        words: vec![3, 5, 2, 7, 4, 6, 2],
        pos1: (0..n).map(|t| position_bucket(t as i64 - e1 as i64, 5)).collect(),
        pos2: (0..n).map(|t| position_bucket(t as i64 - e2 as i64, 5)).collect(),
        e1: (e1, e1),
        e2: (e2, e2),
        label: 2,
    };
    let target = [0.1, 0.2, 0.3, 0.4];

    for arch in Architecture::ALL {
        let config = ModelConfig {
            arch,
            word_dim: 4,
            pos_dim: 2,
            max_distance: 5,
            filters: 3,
            window: 2,
            gru_hidden: 3,
            attention_dim: 3,
            dropout: 0.0,
            init_scale: 0.5,
        };
        let mut rng = relex_sef::rng::stream(0, "init", &[]);
        let (model, params) = RelationModel::new(config, 8, 4, &mut rng)?;
        let report = check_gradients(&params, 1e-6, |g| {
            let probs = model.forward(g, &sample, None)?;
            g.loss(probs, sample.label, Some(&target), 1.0)
        })?;
        println!(
            "{:>4}: {:>4} scalars, max relative error {:.2e} (worst: {}[{}])",
            arch.to_string(), report.checked, report.max_rel_error, report.worst_param, report.worst_index
        );
    }
    Ok(())
}
