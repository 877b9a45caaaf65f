//! Train a small mashability network end to end: gradient check the
//! architecture, fit a tiny dataset, and round-trip the checkpoint.
//!
//! Training uses LSRO: positives get target (1, 0), negatives (0, 1),
//! and unlabeled matched examples the uniform (0.5, 0.5).
//!
//! Run with: cargo run --release --example train_model

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use stemmix::generation::{build_dataset_cfg, GenConfig};
use stemmix::mashupdb::build_db;
use stemmix::model::{
    candidate_features, grad_check, load_checkpoint, mashability_features, save_checkpoint,
    train_on_features, Hyper, ModelConfig, Variant,
};
use stemmix::synth::{synthesize_corpus, SynthConfig};
use stemmix::Result;

fn main() -> Result<()> {
    // the architecture backpropagates correctly in both variants
    for variant in [Variant::Premix, Variant::Postmix] {
        let err = grad_check(variant, 11)?;
        println!("{variant:?} max relative gradient error {err:.2e}");
        assert!(err < 1e-4);
    }

    // a small corpus and dataset
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    synthesize_corpus(root, 10, 21, &SynthConfig::default())?;
    let db = build_db(root, root.join("manifest.tsv"))?;
    let gen = GenConfig::desk();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let examples = build_dataset_cfg(&db, 20, &mut rng, &gen)?;

    // feature extraction and training at desk scale
    let config = ModelConfig::desk(Variant::Premix);
    let mut feats = Vec::with_capacity(examples.len());
    for ex in &examples {
        feats.push(candidate_features(&db, &ex.candidate, &config, &gen)?);
    }
    let hyper = Hyper {
        lr: 1e-3,
        epochs: 8,
        ..Hyper::default()
    };
    let outcome = train_on_features(&examples, &feats, &config, &hyper)?;
    for m in &outcome.metrics {
        println!("{m}");
    }
    println!("best validation accuracy {:.4}", outcome.best_val_accuracy);

    // checkpoints restore bit-identically
    let ckpt = root.join("model.ckpt");
    let mut network = outcome.network;
    save_checkpoint(&mut network, &ckpt)?;
    let mut restored = load_checkpoint(&ckpt)?;
    let before = mashability_features(&mut network, &feats[0])?;
    let after = mashability_features(&mut restored, &feats[0])?;
    assert_eq!(before, after, "reloaded checkpoint must score identically");
    println!("checkpoint round trip is bit-identical (score {before:.6})");
    Ok(())
}
