//! Phase-vocoder transforms checked through the analysis oracles: time
//! stretching moves the estimated tempo, pitch shifting moves the
//! estimated tonic, and a composed spec does both.
//!
//! Run with: cargo run --release --example stretch_and_shift

use stemmix::analysis::{estimate_key, estimate_rhythm};
use stemmix::signal::ENGINE_RATE;
use stemmix::synth::clicks_with_triad;
use stemmix::transform::{apply_spec, pitch_shift, time_stretch, TransformSpec};
use stemmix::Result;

fn main() -> Result<()> {
    let clip = clicks_with_triad(120.0, 10.0, 60.0, ENGINE_RATE);

    // stretch ratio is output tempo over input tempo
    for ratio in [0.8, 0.9, 1.1, 1.2] {
        let stretched = time_stretch(&clip, ratio)?;
        let tempo = estimate_rhythm(&stretched)?.tempo_bpm;
        println!(
            "ratio {ratio}: {tempo:.1} BPM (expect {:.1})",
            120.0 * ratio
        );
        assert!((tempo / (120.0 * ratio) - 1.0).abs() <= 0.02);
    }

    // pitch shift moves the tonic by the same number of semitones
    for semitones in [-3.0, -1.0, 2.0, 3.0] {
        let shifted = pitch_shift(&clip, semitones)?;
        let tonic = estimate_key(&shifted)?.tonic;
        let expect = ((semitones as i32).rem_euclid(12)) as u8;
        println!("shift {semitones:+}: tonic {tonic} (expect {expect})");
        assert_eq!(tonic, expect);
    }

    // a composed spec: stretch to 144 BPM, up two semitones, half a
    // second of leading silence
    let spec = TransformSpec {
        stretch_ratio: 1.2,
        pitch_semitones: 2.0,
        downbeat_offset_s: 0.5,
    };
    let out = apply_spec(&clip, &spec)?;
    let tempo = estimate_rhythm(&out)?.tempo_bpm;
    let tonic = estimate_key(&out)?.tonic;
    println!("composed spec: {tempo:.1} BPM, tonic {tonic}");
    assert!((tempo / 144.0 - 1.0).abs() <= 0.02);
    assert_eq!(tonic, 2);
    println!("all transform oracles hold");
    Ok(())
}
