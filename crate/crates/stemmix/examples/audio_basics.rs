//! Signal-layer basics: WAV round trips, resampling, mixing with
//! peak protection, and log-mel spectrograms.
//!
//! Run with: cargo run --release --example audio_basics

use stemmix::signal::{load_audio, mel_spectrogram, mix, resample, write_audio, ENGINE_RATE};
use stemmix::synth::click_track;
use stemmix::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let clip = click_track(120.0, 4.0, ENGINE_RATE);
    println!(
        "clip: {:.2} s at {} Hz",
        clip.duration_s(),
        clip.sample_rate
    );

    // WAV round trip is lossless up to 16-bit quantization
    let path = dir.path().join("clicks.wav");
    write_audio(&clip, &path)?;
    let back = load_audio(&path)?;
    let max_err = clip
        .samples
        .iter()
        .zip(&back.samples)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        * 32768.0;
    println!("round-trip max error {max_err:.2} quantization steps");
    assert!(max_err <= 1.0);

    // resampling preserves duration
    let down = resample(&clip, 16000)?;
    println!("resampled to 16 kHz: {:.3} s", down.duration_s());
    assert!((down.duration_s() - clip.duration_s()).abs() <= 1.0 / 16000.0);

    // mixing pads to the longest input and protects the peak
    let longer = click_track(90.0, 5.0, ENGINE_RATE);
    let mixed = mix(&[&clip, &longer], &[1.0, 1.0])?;
    let peak = mixed.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    println!("mix: {:.2} s, peak {peak:.3}", mixed.duration_s());
    assert!(peak <= 1.0);

    // log-mel spectrogram for the model front end
    let mel = mel_spectrogram(&clip)?;
    println!(
        "mel spectrogram: {} frames x {} bands",
        mel.n_frames(),
        mel.n_mels
    );
    Ok(())
}
