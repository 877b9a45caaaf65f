//! Analyze a synthetic corpus into a mashup database and exercise its
//! queries: compatible harmonic stems by key and tempo, percussion by
//! tempo window, sibling lookup, and index round-tripping.
//!
//! Run with: cargo run --release --example build_database

use stemmix::mashupdb::{build_db, MashupDB, StemClass};
use stemmix::synth::{synthesize_corpus, SynthConfig};
use stemmix::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    synthesize_corpus(root, 10, 7, &SynthConfig::default())?;

    let db = build_db(root, root.join("manifest.tsv"))?;
    println!("indexed {} stems from 10 songs", db.len());

    // pick one vocal as the seed and ask for compatible partners
    let vocals = db.by_class(StemClass::Vocal);
    let seed = vocals[0];
    let key = seed.key.as_ref().expect("vocal stems carry a key");
    println!(
        "seed {}: {} {} @ {:.1} BPM",
        seed.id, key.tonic, key.mode, seed.tempo_bpm
    );
    let harmonics = db.query_harmonic(key, seed.tempo_bpm);
    let percussions = db.query_percussion(seed.tempo_bpm);
    println!(
        "compatible harmonic stems (key distance <= 3, tempo ratio in [0.8, 1.2]): {}",
        harmonics.len()
    );
    for h in harmonics.iter().take(4) {
        let hk = h.key.as_ref().unwrap();
        println!(
            "  {} ({} {} @ {:.1} BPM)",
            h.id, hk.tonic, hk.mode, h.tempo_bpm
        );
    }
    println!("compatible percussion stems: {}", percussions.len());

    // siblings reassemble the original song
    let sibs = db.siblings(&seed.song_id)?;
    assert_eq!(sibs.len(), 3);
    println!(
        "siblings of {}: {:?}",
        seed.song_id,
        sibs.keys().collect::<Vec<_>>()
    );

    // the index round-trips through disk
    let index = db.save()?;
    let reloaded = MashupDB::load(root)?;
    assert_eq!(reloaded.len(), db.len());
    println!("index at {} reloads identically", index.display());
    Ok(())
}
