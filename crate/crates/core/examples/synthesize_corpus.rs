//! Generates a noisy synthetic corpus, writes it as JSONL, and shows how
//! the injected noise looks.
//!
//! ```text
//! cargo run --release --example synthesize_corpus -- [out-dir] [seed]
//! ```

use std::collections::HashMap;
use std::path::PathBuf;

use relex_sef::corpus::{
    generate_synthetic, load_corpus, trigger_relation, write_corpus, write_schema, NoiseKind, SynthConfig,
};

fn main() -> relex_sef::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("relex-sef-synth"));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let config = SynthConfig::default();
    let (samples, schema) = generate_synthetic(&config, seed)?;

    let mut kinds: HashMap<NoiseKind, usize> = HashMap::new();
    for s in &samples {
        *kinds.entry(NoiseKind::of(s, &schema).unwrap()).or_default() += 1;
    }
    println!("{} samples over {} classes (seed {seed})", samples.len(), schema.num_classes());
    for kind in [NoiseKind::CleanPositive, NoiseKind::NoisyPositive, NoiseKind::CleanNone, NoiseKind::NoisyNone] {
        println!("  {kind:?}: {}", kinds.get(&kind).copied().unwrap_or(0));
    }

    // a trigger between the entities decides the true relation
    let truth = |tokens: &[String]| tokens.iter().find_map(|t| trigger_relation(t)).unwrap_or(schema.none_index());
    let agree = samples.iter().filter(|s| truth(&s.tokens) == s.label).count();
    println!("labels agreeing with the trigger oracle: {agree} / {}", samples.len());

    for s in samples.iter().take(4) {
        println!(
            "  {} [{}{}] {}",
            s.id,
            schema.name(s.label),
            if s.noise_truth == Some(true) { ", noisy" } else { "" },
            s.tokens.join(" ")
        );
    }

    std::fs::create_dir_all(&out).map_err(|e| relex_sef::Error::Config(e.to_string()))?;
    write_corpus(out.join("corpus.jsonl"), &samples, &schema)?;
    write_schema(out.join("schema.json"), &schema)?;
    let back = load_corpus(out.join("corpus.jsonl"), &schema)?;
    assert_eq!(back, samples);
    println!("wrote {}", out.display());
    Ok(())
}
