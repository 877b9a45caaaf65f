//! The retrieval task: train a model, then for several vocal seeds score
//! the original stem combination against a pool of matched alternatives.
//! A good mashability model puts the original at or near rank 1; the
//! rule-based baseline is scored on the same pools for comparison.
//!
//! Run with: cargo run --release --example rank_candidates

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use stemmix::amu::amu_candidate;
use stemmix::evaluate::{average_rank, rank_pools};
use stemmix::generation::{build_dataset_cfg, GenConfig};
use stemmix::mashupdb::build_db;
use stemmix::model::{
    candidate_features, mashability_features, train_on_features, Hyper, ModelConfig, Variant,
};
use stemmix::synth::{synthesize_corpus, SynthConfig};
use stemmix::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    synthesize_corpus(root, 16, 13, &SynthConfig::default())?;
    let db = build_db(root, root.join("manifest.tsv"))?;
    let gen = GenConfig::desk();

    // train a desk-scale premix model
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let examples = build_dataset_cfg(&db, 60, &mut rng, &gen)?;
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
    let mut network = outcome.network;
    println!(
        "trained, best validation accuracy {:.4}",
        outcome.best_val_accuracy
    );

    // five pools of eight matched candidates each
    let pools = rank_pools(&db, &gen, 5, 8, 17)?;
    let mut model_groups = Vec::new();
    let mut amu_groups = Vec::new();
    for (original, pool) in &pools {
        let score = |c, net: &mut _| -> Result<f64> {
            mashability_features(net, &candidate_features(&db, c, &config, &gen)?)
        };
        let pos = score(original, &mut network)?;
        let pool_scores: Vec<f64> = pool
            .iter()
            .map(|c| score(c, &mut network))
            .collect::<Result<_>>()?;
        let amu_pos = amu_candidate(&db, original, &gen)?;
        let amu_pool: Vec<f64> = pool
            .iter()
            .map(|c| amu_candidate(&db, c, &gen))
            .collect::<Result<_>>()?;
        println!(
            "seed {}: model scores original {pos:.3}, best alternative {:.3}",
            original.vocal_id,
            pool_scores.iter().cloned().fold(f64::MIN, f64::max)
        );
        model_groups.push((pos, pool_scores));
        amu_groups.push((amu_pos, amu_pool));
    }
    let model_rank = average_rank(&model_groups)?;
    let amu_rank = average_rank(&amu_groups)?;
    println!(
        "model   average rank {:.2} (ranks {:?})",
        model_rank.average_rank, model_rank.ranks
    );
    println!(
        "baseline average rank {:.2} (ranks {:?})",
        amu_rank.average_rank, amu_rank.ranks
    );
    Ok(())
}
