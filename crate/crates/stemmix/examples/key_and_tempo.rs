//! Key and rhythm analysis on controlled material: Krumhansl-Schmuckler
//! key estimation on triads, tempo/beat/downbeat tracking on click tracks.
//!
//! Run with: cargo run --release --example key_and_tempo

use stemmix::analysis::{estimate_key, estimate_rhythm, key_distance};
use stemmix::signal::ENGINE_RATE;
use stemmix::synth::{click_track_with_kicks, clicks_with_triad};
use stemmix::Result;

fn main() -> Result<()> {
    // a C major triad riding on 100 BPM clicks
    let clip = clicks_with_triad(100.0, 10.0, 60.0, ENGINE_RATE);
    let key = estimate_key(&clip)?;
    println!(
        "triad on C: tonic {} ({}), confidence {:.2}",
        key.tonic, key.mode, key.confidence
    );
    assert_eq!(key.tonic, 0);

    // key distance is circular: C to A is 3, not 9
    let a = estimate_key(&clicks_with_triad(100.0, 10.0, 69.0, ENGINE_RATE))?;
    println!(
        "triad on A: tonic {}, distance to C = {}",
        a.tonic,
        key_distance(&key, &a)
    );

    // click track with a kick every fourth click: tempo, beats, downbeats
    let clip = click_track_with_kicks(120.0, 10.0, ENGINE_RATE);
    let rhythm = estimate_rhythm(&clip)?;
    println!(
        "120 BPM clicks: estimated {:.2} BPM, {} beats, {} downbeats",
        rhythm.tempo_bpm,
        rhythm.beat_times.len(),
        rhythm.downbeat_times.len()
    );
    assert!((rhythm.tempo_bpm - 120.0).abs() <= 1.0);
    let first_beats: Vec<String> = rhythm
        .beat_times
        .iter()
        .take(5)
        .map(|t| format!("{t:.3}"))
        .collect();
    println!("first beats at: {} s", first_beats.join(", "));
    // downbeats land on the kicks, i.e. every fourth beat
    for d in rhythm.downbeat_times.iter().take(3) {
        let nearest_multiple = (d / 2.0).round() * 2.0;
        assert!(
            (d - nearest_multiple).abs() < 0.05,
            "downbeat {d} off the bar grid"
        );
    }
    println!("downbeats sit on the two-second bar grid");
    Ok(())
}
