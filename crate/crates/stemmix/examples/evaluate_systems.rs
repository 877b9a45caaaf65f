//! Side-by-side evaluation of all systems on one synthetic corpus:
//! {premix, postmix} x {with, without unlabeled examples} plus the
//! rule-based baseline, reported as accuracy and average rank.
//!
//! Uses the tiny model scale so the whole table builds in well under a
//! minute; the desk scale trades minutes for near-ceiling numbers.
//!
//! Run with: cargo run --release --example evaluate_systems

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use stemmix::evaluate::{format_report, run_table, TablePlan};
use stemmix::generation::{build_dataset_cfg, GenConfig};
use stemmix::mashupdb::build_db;
use stemmix::model::{Hyper, ModelConfig, Variant};
use stemmix::synth::{synthesize_corpus, SynthConfig};
use stemmix::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    synthesize_corpus(root, 12, 4, &SynthConfig::default())?;
    let db = build_db(root, root.join("manifest.tsv"))?;
    let gen = GenConfig::desk();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let examples = build_dataset_cfg(&db, 15, &mut rng, &gen)?;

    let plan = TablePlan {
        premix: ModelConfig::tiny(Variant::Premix),
        postmix: ModelConfig::tiny(Variant::Postmix),
        hyper: Hyper {
            lr: 3e-3,
            epochs: 12,
            seed: 8,
            ..Hyper::default()
        },
        gen,
        n_rank_seeds: 3,
        pool_size: 6,
    };
    let rows = run_table(&db, &examples, &plan)?;
    print!("{}", format_report(&rows));
    assert_eq!(rows.len(), 5, "four model systems plus the baseline");
    Ok(())
}
