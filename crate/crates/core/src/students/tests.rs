use super::*;
use crate::autodiff::check_gradients;
use crate::corpus::Span;

fn tiny(arch: Architecture) -> ModelConfig {
    ModelConfig {
        arch,
        word_dim: 4,
        pos_dim: 2,
        max_distance: 5,
        filters: 3,
        window: 2,
        gru_hidden: 3,
        attention_dim: 3,
        dropout: 0.5,
        init_scale: 0.5,
    }
}

fn sample(n: usize, e1: Span, e2: Span) -> EncodedSample {
    EncodedSample {
        words: (0..n).map(|i| 2 + (i * 3) % 6).collect(),
        pos1: (0..n).map(|t| position_bucket(t as i64 - e1.start as i64, 5)).collect(),
        pos2: (0..n).map(|t| position_bucket(t as i64 - e2.start as i64, 5)).collect(),
        e1: e1.as_pair(),
        e2: e2.as_pair(),
        label: 2,
    }
}

fn build(arch: Architecture, seed: u64) -> (RelationModel, ParamStore) {
    init_model(tiny(arch), 8, 4, seed).unwrap()
}

#[test]
fn every_architecture_outputs_a_simplex() {
    for arch in Architecture::ALL {
        let (m, p) = build(arch, 1);
        let d = m.predict_encoded(&p, &sample(7, Span::new(1, 2), Span::single(5))).unwrap();
        assert_eq!(d.probs.len(), 4);
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(d.probs.iter().all(|&x| x > 0.0));
    }
}

#[test]
fn zero_output_layer_gives_uniform() {
    for arch in Architecture::ALL {
        let (m, mut p) = build(arch, 2);
        zero_params(&mut p, "out.");
        let d = m.predict_encoded(&p, &sample(5, Span::single(0), Span::single(3))).unwrap();
        assert!(d.probs.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }
}

#[test]
fn default_feature_widths() {
    let mut c = ModelConfig::default();
    assert_eq!(c.token_dim(), 60);
    assert_eq!(c.feature_dim(), 230);
    c.arch = Architecture::Pcnn;
    assert_eq!(c.feature_dim(), 690);
    c.arch = Architecture::Ea;
    assert_eq!(c.feature_dim(), 330);
    c.arch = Architecture::Bgwa;
    assert_eq!(c.feature_dim(), 690);
}

#[test]
fn pcnn_over_whole_sentence_triples_cnn_features() {
    let (cnn, cp) = build(Architecture::Cnn, 3);
    let (pcnn, pp) = build(Architecture::Pcnn, 3);
    let s = sample(6, Span::new(0, 5), Span::new(0, 5));
    let a = cnn.inspect(&cp, &s).unwrap().feature;
    let b = pcnn.inspect(&pp, &s).unwrap().feature;
    assert_eq!(b, [a.clone(), a.clone(), a].concat());
}

#[test]
fn ea_attention_is_a_distribution() {
    let (m, p) = build(Architecture::Ea, 4);
    let ins = m.inspect(&p, &sample(7, Span::single(1), Span::new(4, 5))).unwrap();
    assert_eq!(ins.attention.len(), 2);
    for a in &ins.attention {
        assert_eq!(a.len(), 7);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn ea_single_token_attends_to_itself() {
    let (m, p) = build(Architecture::Ea, 5);
    let s = sample(1, Span::single(0), Span::single(0));
    let ins = m.inspect(&p, &s).unwrap();
    let word = p.get(m.tables().word).row_slice(s.words[0]).to_vec();
    let f = &ins.feature;
    assert_eq!(&f[3..7], word.as_slice());
    assert_eq!(&f[7..11], word.as_slice());
}

#[test]
fn bgwa_zero_gru_gives_uniform_attention() {
    let (m, mut p) = build(Architecture::Bgwa, 6);
    zero_params(&mut p, "gru.");
    let s = sample(5, Span::single(0), Span::single(3));
    let a = m.inspect(&p, &s).unwrap();
    assert!(a.attention[0].iter().all(|&x| (x - 0.2).abs() < 1e-15));
    let b = m.inspect(&p, &sample(5, Span::single(1), Span::single(4))).unwrap();
    // zero hiddens: nothing depends on the input at all
    assert_eq!(a.probs, b.probs);
}

#[test]
fn gradients_match_finite_differences_at_tiny_config() {
    for arch in Architecture::ALL {
        let (m, p) = build(arch, 7);
        let s = sample(7, Span::new(1, 2), Span::single(5));
        let target = [0.1, 0.2, 0.3, 0.4];
        let report = check_gradients(&p, 1e-5, |g| {
            let probs = m.forward(g, &s, None)?;
            g.loss(probs, s.label, Some(&target), 1.0)
        })
        .unwrap();
        assert!(report.near_pool_tie() || report.max_rel_error < 1e-4, "{arch}: {report:?}");
    }
}

#[test]
fn eval_forward_is_bit_reproducible() {
    for arch in Architecture::ALL {
        let (m, p) = build(arch, 8);
        let s = sample(6, Span::single(2), Span::single(0));
        let a = m.predict_encoded(&p, &s).unwrap();
        let b = m.predict_encoded(&p, &s).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn dropout_only_in_training_mode() {
    let (m, p) = build(Architecture::Cnn, 9);
    let s = sample(6, Span::single(2), Span::single(0));
    let mut r = rng::stream(0, "dropout", &[]);
    let mut g = Graph::new(&p);
    let train = m.forward(&mut g, &s, Some(&mut r)).unwrap();
    let eval = m.predict_encoded(&p, &s).unwrap();
    assert_ne!(g.value(train).data(), eval.probs.as_slice());
}

#[test]
fn permuting_output_columns_permutes_probabilities() {
    let (m, p) = build(Architecture::Pcnn, 10);
    let perm = [2usize, 0, 3, 1];
    let mut q = p.clone();
    let (w, b) = m.output_weights();
    let rows = p.get(w).rows();
    for r in 0..rows {
        for (new, &old) in perm.iter().enumerate() {
            q.get_mut(w).row_slice_mut(r)[new] = p.get(w).row_slice(r)[old];
        }
    }
    for (new, &old) in perm.iter().enumerate() {
        q.get_mut(b).data_mut()[new] = p.get(b).data()[old];
    }
    let s = sample(7, Span::single(1), Span::single(4));
    let a = m.predict_encoded(&p, &s).unwrap();
    let c = m.predict_encoded(&q, &s).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        assert!((c.probs[new] - a.probs[old]).abs() < 1e-15);
    }
}

#[test]
fn zero_position_tables_remove_entity_dependence() {
    for arch in [Architecture::Cnn, Architecture::Ea] {
        let (m, mut p) = build(arch, 11);
        zero_params(&mut p, "pos");
        let a = m.inspect(&p, &sample(7, Span::single(0), Span::single(6))).unwrap();
        let b = m.inspect(&p, &sample(7, Span::single(2), Span::single(3))).unwrap();
        // the global convolutional feature is the first `filters` entries
        assert_eq!(a.feature[..3], b.feature[..3], "{arch}");
        if arch == Architecture::Cnn {
            assert_eq!(a.probs, b.probs);
        }
    }
}

#[test]
fn architecture_names_parse() {
    for arch in Architecture::ALL {
        assert_eq!(arch.to_string().parse::<Architecture>().unwrap(), arch);
    }
    assert!("lstm".parse::<Architecture>().is_err());
}

#[test]
fn argmax_breaks_ties_low() {
    let d = PredictionDistribution::new(vec![0.4, 0.4, 0.2]).unwrap();
    assert_eq!(d.argmax(), 0);
    assert!(PredictionDistribution::new(vec![0.5, 0.6]).is_err());
}
