//! Deterministic synthetic stem corpus: melody / chord / drum songs with
//! known key and tempo, plus small test signals (click tracks, triads).
//!
//! Stands in for a licensed music collection so the whole pipeline can run
//! at desk scale with ground truth available for every song.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::analysis::Mode;
use crate::error::{Error, Result};
use crate::signal::{write_audio, AudioClip};

const MAJOR_SCALE: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR_SCALE: [i32; 7] = [0, 2, 3, 5, 7, 8, 10];

fn midi_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

/// Ground truth for one synthetic song.
#[derive(Debug, Clone, PartialEq)]
pub struct SongTruth {
    pub song_id: String,
    pub tonic: u8,
    pub mode: Mode,
    pub tempo_bpm: f64,
}

/// Corpus-level knobs. Defaults give desk-scale songs of ~8-16 s.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub tempo_range: (f64, f64),
    pub target_duration_s: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate: crate::signal::ENGINE_RATE,
            tempo_range: (70.0, 170.0),
            target_duration_s: (10.0, 14.0),
        }
    }
}

/// The three stems of one synthetic song.
pub struct SynthSong {
    pub truth: SongTruth,
    pub vocal: AudioClip,
    pub harmonic: AudioClip,
    pub percussion: AudioClip,
}

fn add_at(buf: &mut [f64], start: usize, samples: impl Iterator<Item = f64>) {
    for (i, s) in samples.enumerate() {
        if start + i < buf.len() {
            buf[start + i] += s;
        }
    }
}

fn tone(freq: f64, n: usize, amp: f64, sr: u32, decay: f64) -> impl Iterator<Item = f64> {
    let w = 2.0 * std::f64::consts::PI * freq / sr as f64;
    (0..n).map(move |i| {
        let env = (-decay * i as f64 / sr as f64).exp();
        amp * env * (w * i as f64).sin()
    })
}

/// Short 1 kHz click burst used by test signals.
fn click(n: usize, amp: f64, sr: u32) -> impl Iterator<Item = f64> {
    tone(1000.0, n, amp, sr, 250.0)
}

/// Kick drum: downward sine sweep with a fast decay.
fn kick(n: usize, amp: f64, sr: u32) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        let t = i as f64 / sr as f64;
        let freq = 50.0 + 70.0 * (-t * 28.0).exp();
        let phase =
            2.0 * std::f64::consts::PI * (50.0 * t + 70.0 / 28.0 * (1.0 - (-t * 28.0).exp()));
        let _ = freq;
        amp * (-t * 18.0).exp() * phase.sin()
    })
}

/// Hi-hat: first-differenced noise burst (pushes energy up-spectrum).
fn hat(n: usize, amp: f64, sr: u32, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let mut prev = 0.0;
    (0..n)
        .map(|i| {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let d = x - prev;
            prev = x;
            amp * d * (-40.0 * i as f64 / sr as f64).exp()
        })
        .collect()
}

/// Metronome clicks at a fixed tempo; first click at t = 0.
pub fn click_track(bpm: f64, duration_s: f64, sr: u32) -> AudioClip {
    let n = (duration_s * sr as f64) as usize;
    let mut buf = vec![0.0; n];
    let period = 60.0 / bpm * sr as f64;
    let mut t: f64 = 0.0;
    while (t as usize) < n {
        add_at(
            &mut buf,
            t.round() as usize,
            click(sr as usize / 100, 0.8, sr),
        );
        t += period;
    }
    AudioClip::new(buf, sr)
}

/// Clicks on every beat plus a kick on every 4th (the downbeat).
pub fn click_track_with_kicks(bpm: f64, duration_s: f64, sr: u32) -> AudioClip {
    let mut clip = click_track(bpm, duration_s, sr);
    let period = 60.0 / bpm * sr as f64;
    let mut t: f64 = 0.0;
    let mut beat = 0usize;
    let n = clip.len();
    while (t as usize) < n {
        if beat.is_multiple_of(4) {
            add_at(
                &mut clip.samples,
                t.round() as usize,
                kick(sr as usize / 6, 0.9, sr),
            );
        }
        t += period;
        beat += 1;
    }
    clip
}

/// Click track overlaid with a sustained major triad rooted at `tonic_midi`.
pub fn clicks_with_triad(bpm: f64, duration_s: f64, tonic_midi: f64, sr: u32) -> AudioClip {
    let mut clip = click_track(bpm, duration_s, sr);
    let n = clip.len();
    for (offset, amp) in [(0.0, 0.22), (4.0, 0.16), (7.0, 0.16)] {
        add_at(
            &mut clip.samples,
            0,
            tone(midi_hz(tonic_midi + offset), n, amp, sr, 0.0),
        );
    }
    clip
}

/// Synthesize one song deterministically from a seed.
pub fn synthesize_song(song_id: &str, seed: u64, cfg: &SynthConfig) -> SynthSong {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sr = cfg.sample_rate;
    let tonic: u8 = rng.gen_range(0..12);
    let mode = if rng.gen_bool(0.5) {
        Mode::Major
    } else {
        Mode::Minor
    };
    let tempo_bpm = (rng.gen_range(cfg.tempo_range.0..=cfg.tempo_range.1) * 2.0).round() / 2.0;
    let scale = match mode {
        Mode::Major => MAJOR_SCALE,
        Mode::Minor => MINOR_SCALE,
    };
    let beat_s = 60.0 / tempo_bpm;
    let bar_s = 4.0 * beat_s;
    let target = rng.gen_range(cfg.target_duration_s.0..=cfg.target_duration_s.1);
    let n_bars = ((target / bar_s).round() as usize).max(3);
    let n = (n_bars as f64 * bar_s * sr as f64).round() as usize;
    let beat_n = (beat_s * sr as f64).round();

    // percussion: kick every beat (accented on the downbeat), hats on 8ths
    let mut percussion = vec![0.0; n];
    for beat in 0..n_bars * 4 {
        let start = (beat as f64 * beat_n).round() as usize;
        let amp = if beat % 4 == 0 { 0.9 } else { 0.55 };
        add_at(&mut percussion, start, kick(sr as usize / 6, amp, sr));
        for half in 0..2 {
            let hs = (beat as f64 * beat_n + half as f64 * beat_n / 2.0).round() as usize;
            // accented on the beat, ghosted on the offbeat
            let amp = if half == 0 { 0.22 } else { 0.08 };
            let burst = hat(sr as usize / 25, amp, sr, &mut rng);
            add_at(&mut percussion, hs, burst.into_iter());
        }
    }

    // harmonic: one chord per bar from a tonic-heavy progression
    let progressions: [[usize; 4]; 3] = [[0, 3, 4, 0], [0, 5, 3, 4], [0, 3, 0, 4]];
    let prog = progressions[rng.gen_range(0..progressions.len())];
    let mut harmonic = vec![0.0; n];
    let bar_n = (bar_s * sr as f64).round() as usize;
    for bar in 0..n_bars {
        let degree = prog[bar % 4];
        let chord_tones: Vec<i32> = [0usize, 2, 4]
            .iter()
            .map(|&step| {
                let idx = degree + step;
                scale[idx % 7] + 12 * (idx / 7) as i32
            })
            .collect();
        let start = bar * bar_n;
        let root_midi = 48.0 + tonic as f64;
        // bass root an octave down, then the triad with a soft 2nd harmonic
        add_at(
            &mut harmonic,
            start,
            tone(
                midi_hz(root_midi - 12.0 + chord_tones[0] as f64),
                bar_n,
                0.28,
                sr,
                0.35,
            ),
        );
        for (ci, &semi) in chord_tones.iter().enumerate() {
            let amp = if ci == 0 { 0.2 } else { 0.15 };
            let f = midi_hz(root_midi + semi as f64);
            add_at(&mut harmonic, start, tone(f, bar_n, amp, sr, 0.25));
            add_at(
                &mut harmonic,
                start,
                tone(2.0 * f, bar_n, amp * 0.25, sr, 0.5),
            );
        }
    }

    // vocal: detuned vibrato sine lead, one scale note per beat, with
    // pitch classes drawn from the key profile of the sampled mode
    let mut vocal = vec![0.0; n];
    let detune_cents: f64 = rng.gen_range(-8.0..8.0);
    let profile = crate::analysis::ks_profile(mode);
    let weights: Vec<f64> = scale.iter().map(|&s| profile[s as usize % 12]).collect();
    let total_w: f64 = weights.iter().sum();
    let mut degree_idx = 0usize;
    // sustained tonic+third hum under the lead so the stem carries the key
    // on its own (the lead alone averages out over random scale degrees)
    let third = if mode == Mode::Major { 4 } else { 3 };
    for (deg, amp) in [(0u8, 0.10), (third, 0.06)] {
        let f = midi_hz(48.0 + tonic as f64 + deg as f64);
        add_at(
            &mut vocal,
            0,
            (0..n).map(move |i| {
                let t = i as f64 / sr as f64;
                amp * (2.0 * std::f64::consts::PI * f * t).sin()
            }),
        );
    }
    for beat in 0..n_bars * 4 {
        if beat % 4 == 0 {
            // anchor each bar on the tonic or third
            degree_idx = if rng.gen_bool(0.6) { 0 } else { 2 };
        } else if rng.gen_bool(0.5) {
            let mut pick = rng.gen_range(0.0..total_w);
            degree_idx = 0;
            for (d, &w) in weights.iter().enumerate() {
                if pick < w {
                    degree_idx = d;
                    break;
                }
                pick -= w;
            }
        } else {
            let step: i32 = rng.gen_range(-1..=1);
            degree_idx = (degree_idx as i32 + step).rem_euclid(7) as usize;
        }
        let midi = 60.0 + tonic as f64 + scale[degree_idx] as f64 + detune_cents / 100.0;
        let start = (beat as f64 * beat_n).round() as usize;
        let len = beat_n as usize;
        let base = midi_hz(midi);
        let vib_rate = 5.5;
        let vib_depth = 0.3; // semitones
        add_at(
            &mut vocal,
            start,
            (0..len).map(move |i| {
                let t = i as f64 / sr as f64;
                let vib = vib_depth * (2.0 * std::f64::consts::PI * vib_rate * t).sin();
                let f = base * 2f64.powf(vib / 12.0);
                let env = (1.0 - (-t * 60.0).exp()) * (-t * 1.2).exp();
                0.32 * env * (2.0 * std::f64::consts::PI * f * t).sin()
            }),
        );
    }

    SynthSong {
        truth: SongTruth {
            song_id: song_id.to_string(),
            tonic,
            mode,
            tempo_bpm,
        },
        vocal: AudioClip::new(vocal, sr),
        harmonic: AudioClip::new(harmonic, sr),
        percussion: AudioClip::new(percussion, sr),
    }
}

/// Write an `n_songs` corpus under `out_dir`: one WAV per stem, a
/// tab-separated build manifest, and a ground-truth sidecar.
/// Returns the per-song truths.
pub fn synthesize_corpus(
    out_dir: impl AsRef<Path>,
    n_songs: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Vec<SongTruth>> {
    let out_dir = out_dir.as_ref();
    let stems = out_dir.join("stems");
    std::fs::create_dir_all(&stems).map_err(|e| Error::io(&stems, e))?;
    let mut manifest = String::new();
    let mut truth_file = String::new();
    let mut truths = Vec::with_capacity(n_songs);
    for i in 0..n_songs {
        let song_id = format!("synth{i:04}");
        let song = synthesize_song(
            &song_id,
            seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(i as u64),
            cfg,
        );
        for (class, clip) in [
            ("vocal", &song.vocal),
            ("harmonic", &song.harmonic),
            ("percussion", &song.percussion),
        ] {
            let rel = format!("stems/{song_id}_{class}.wav");
            write_audio(clip, out_dir.join(&rel))?;
            writeln!(manifest, "{song_id}\t{class}\t{rel}").unwrap();
        }
        writeln!(
            truth_file,
            "{}\t{}\t{}\t{}",
            song.truth.song_id, song.truth.tonic, song.truth.mode, song.truth.tempo_bpm
        )
        .unwrap();
        truths.push(song.truth);
    }
    let mpath = out_dir.join("manifest.tsv");
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    let tpath = out_dir.join("truth.tsv");
    std::fs::write(&tpath, truth_file).map_err(|e| Error::io(&tpath, e))?;
    Ok(truths)
}

/// Parse a ground-truth sidecar written by [`synthesize_corpus`].
pub fn load_truth(path: impl AsRef<Path>) -> Result<Vec<SongTruth>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(Error::Manifest {
                line: i + 1,
                detail: format!("expected 4 fields, got {}", parts.len()),
            });
        }
        out.push(SongTruth {
            song_id: parts[0].to_string(),
            tonic: parts[1].parse().map_err(|_| Error::Manifest {
                line: i + 1,
                detail: "bad tonic".into(),
            })?,
            mode: parts[2].parse()?,
            tempo_bpm: parts[3].parse().map_err(|_| Error::Manifest {
                line: i + 1,
                detail: "bad tempo".into(),
            })?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{estimate_key, estimate_rhythm};

    #[test]
    fn song_synthesis_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = synthesize_song("s", 42, &cfg);
        let b = synthesize_song("s", 42, &cfg);
        assert_eq!(a.vocal, b.vocal);
        assert_eq!(a.harmonic, b.harmonic);
        assert_eq!(a.percussion, b.percussion);
        assert_eq!(a.truth, b.truth);
        let c = synthesize_song("s", 43, &cfg);
        assert_ne!(a.truth.tempo_bpm, c.truth.tempo_bpm);
    }

    #[test]
    fn analysis_recovers_truth_on_most_songs() {
        let cfg = SynthConfig::default();
        let n = 20;
        let mut key_hits = 0;
        let mut tempo_hits = 0;
        for i in 0..n {
            let song = synthesize_song(&format!("s{i}"), 1000 + i as u64, &cfg);
            if let Ok(k) = estimate_key(&song.harmonic) {
                if k.tonic == song.truth.tonic {
                    key_hits += 1;
                }
            }
            if let Ok(r) = estimate_rhythm(&song.percussion) {
                if (r.tempo_bpm - song.truth.tempo_bpm).abs() / song.truth.tempo_bpm < 0.02 {
                    tempo_hits += 1;
                }
            }
        }
        assert!(key_hits * 10 >= n * 9, "key hits {key_hits}/{n}");
        assert!(tempo_hits * 10 >= n * 9, "tempo hits {tempo_hits}/{n}");
    }

    #[test]
    fn corpus_files_and_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let truths = synthesize_corpus(dir.path(), 2, 7, &SynthConfig::default()).unwrap();
        assert_eq!(truths.len(), 2);
        let loaded = load_truth(dir.path().join("truth.tsv")).unwrap();
        assert_eq!(loaded, truths);
        let manifest = std::fs::read_to_string(dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(manifest.lines().count(), 6);
        for line in manifest.lines() {
            let rel = line.split('\t').nth(2).unwrap();
            assert!(dir.path().join(rel).exists());
        }
    }
}
