//! Key, tempo, beat, and downbeat estimation.
//!
//! Key comes from a 12-bin chromagram correlated against the
//! Krumhansl-Schmuckler major/minor profiles. Tempo comes from an
//! autocorrelated spectral-flux onset envelope, beats from comb-phase
//! maximization, downbeats from low-band energy at bar starts (4/4 assumed).

use crate::error::{Error, Result};
use crate::signal::{stft_magnitudes, AudioClip};

/// Krumhansl-Schmuckler major key profile.
const KS_MAJOR: [f64; 12] = [
    6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88,
];
/// Krumhansl-Schmuckler minor key profile.
const KS_MINOR: [f64; 12] = [
    6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17,
];

/// The tonic-relative K-S profile for a mode (used by the synthetic corpus
/// to draw melody notes with a realistic pitch-class distribution).
pub fn ks_profile(mode: Mode) -> &'static [f64; 12] {
    match mode {
        Mode::Major => &KS_MAJOR,
        Mode::Minor => &KS_MINOR,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Major,
    Minor,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Major => write!(f, "major"),
            Mode::Minor => write!(f, "minor"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "major" => Ok(Mode::Major),
            "minor" => Ok(Mode::Minor),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Estimated key: tonic pitch class (0 = C), mode, and a margin-based confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyEstimate {
    pub tonic: u8,
    pub mode: Mode,
    pub confidence: f64,
}

impl KeyEstimate {
    pub fn new(tonic: u8, mode: Mode, confidence: f64) -> Self {
        debug_assert!(tonic < 12);
        debug_assert!((0.0..=1.0).contains(&confidence));
        KeyEstimate {
            tonic,
            mode,
            confidence,
        }
    }
}

/// Estimated tempo plus beat and downbeat grids.
#[derive(Debug, Clone, PartialEq)]
pub struct RhythmEstimate {
    pub tempo_bpm: f64,
    pub beat_times: Vec<f64>,
    pub downbeat_times: Vec<f64>,
}

/// Minimal circular distance between two tonic pitch classes, in [0, 6].
/// Mode is ignored.
pub fn key_distance(a: &KeyEstimate, b: &KeyEstimate) -> u8 {
    pitch_class_distance(a.tonic, b.tonic)
}

pub fn pitch_class_distance(a: u8, b: u8) -> u8 {
    let d = (a as i32 - b as i32).rem_euclid(12) as u8;
    d.min(12 - d)
}

/// 12-bin pitch-class profile of a clip.
///
/// The time-averaged magnitude spectrum is folded onto equal-tempered
/// semitones (MIDI 36-96); each semitone contributes the mean magnitude of
/// the FFT bins within +/-50 cents, so a flat spectrum yields flat chroma
/// regardless of how many bins a semitone spans.
pub fn chromagram(clip: &AudioClip) -> Result<[f64; 12]> {
    let win = 4096.min(prev_pow2(clip.len()));
    if win < 1024 {
        return Err(Error::ClipTooShort {
            need: 1024,
            got: clip.len(),
        });
    }
    let mags = stft_magnitudes(clip, win, win / 2)?;
    let n_bins = win / 2 + 1;
    let mut avg = vec![0.0; n_bins];
    for frame in &mags {
        for (a, &m) in avg.iter_mut().zip(frame) {
            *a += m;
        }
    }
    for a in &mut avg {
        *a /= mags.len() as f64;
    }
    let bin_hz = clip.sample_rate as f64 / win as f64;
    // exactly four octaves (C3..B6) so every pitch class covers the same
    // total bandwidth; each bin is split between its two nearest semitones
    // so a flat spectrum folds to flat chroma without rounding ripple
    let f_lo = 440.0 * 2f64.powf((48.0 - 69.0 - 0.5) / 12.0);
    let f_hi = 440.0 * 2f64.powf((95.0 - 69.0 + 0.5) / 12.0);
    let mut chroma = [0.0; 12];
    for (b, &m) in avg.iter().enumerate().take(n_bins) {
        let f = b as f64 * bin_hz;
        if f < f_lo || f > f_hi {
            continue;
        }
        let midi = 69.0 + 12.0 * (f / 440.0).log2();
        let lower = midi.floor();
        let frac = midi - lower;
        let pc = (lower as i64).rem_euclid(12) as usize;
        // 1/f weighting: semitone bandwidth grows with frequency, so this
        // keeps per-semitone density flat for a flat spectrum while leaving
        // chroma rotation covariant under pitch shifts
        let w = m / f;
        chroma[pc] += w * (1.0 - frac);
        chroma[(pc + 1) % 12] += w * frac;
    }
    Ok(chroma)
}

fn prev_pow2(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - n.leading_zeros())
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    if da <= 0.0 || db <= 0.0 {
        0.0
    } else {
        num / (da * db).sqrt()
    }
}

/// Correlate a chroma profile against all 24 rotated K-S templates.
/// Returns (tonic, mode, best correlation, runner-up correlation).
pub fn best_key_for_chroma(chroma: &[f64; 12]) -> (u8, Mode, f64, f64) {
    let mut scored: Vec<(u8, Mode, f64)> = Vec::with_capacity(24);
    for tonic in 0u8..12 {
        for (mode, profile) in [(Mode::Major, &KS_MAJOR), (Mode::Minor, &KS_MINOR)] {
            // rotate the template so its tonic lines up with `tonic`
            let rotated: Vec<f64> = (0..12)
                .map(|pc| profile[(pc + 12 - tonic as usize) % 12])
                .collect();
            scored.push((tonic, mode, pearson(chroma, &rotated)));
        }
    }
    scored.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
    (scored[0].0, scored[0].1, scored[0].2, scored[1].2)
}

/// Estimate the key of a clip (at least 2 s of audio with tonal energy).
pub fn estimate_key(clip: &AudioClip) -> Result<KeyEstimate> {
    let need = 2 * clip.sample_rate as usize;
    if clip.len() < need {
        return Err(Error::ClipTooShort {
            need,
            got: clip.len(),
        });
    }
    let chroma = chromagram(clip)?;
    let total: f64 = chroma.iter().sum();
    if total < 1e-9 {
        return Err(Error::NoTonalEnergy);
    }
    let (tonic, mode, best, second) = best_key_for_chroma(&chroma);
    let confidence = ((best - second) * 4.0).clamp(0.0, 1.0);
    Ok(KeyEstimate::new(tonic, mode, confidence))
}

// Onset envelope parameters (smaller window than the mel frontend for
// better temporal resolution).
const ONSET_WIN: usize = 512;
const ONSET_HOP: usize = 256;

/// Half-wave rectified spectral flux per frame, plus per-frame low-band
/// (< 200 Hz) energy. Frame `f` is timestamped at the window center.
///
/// The flux is cleaned by subtracting a local moving average, keeping
/// accent contrast between strong and weak onsets intact.
fn onset_envelope(clip: &AudioClip) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let mags = stft_magnitudes(clip, ONSET_WIN, ONSET_HOP)?;
    let frame_rate = clip.sample_rate as f64 / ONSET_HOP as f64;
    let bin_hz = clip.sample_rate as f64 / ONSET_WIN as f64;
    let low_cut = (200.0 / bin_hz).ceil() as usize;
    let mut flux = vec![0.0; mags.len()];
    let mut low = vec![0.0; mags.len()];
    for f in 0..mags.len() {
        low[f] = mags[f][..low_cut.min(mags[f].len())].iter().sum();
        if f > 0 {
            flux[f] = mags[f]
                .iter()
                .zip(&mags[f - 1])
                .map(|(a, b)| (a - b).max(0.0))
                .sum();
        }
    }
    // subtract a ~0.2 s moving average, keeping only distinct onsets
    let w = (0.1 * frame_rate).round() as usize;
    let cleaned: Vec<f64> = (0..flux.len())
        .map(|f| {
            let lo = f.saturating_sub(w);
            let hi = (f + w).min(flux.len() - 1);
            let local = flux[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
            (flux[f] - local).max(0.0)
        })
        .collect();
    // the outermost frames carry large transform/boundary artifacts (the
    // abrupt signal edges look like huge flux), so blank them out
    let mut cleaned = cleaned;
    let n = cleaned.len();
    for (f, v) in cleaned.iter_mut().enumerate() {
        if f < 3 || f >= n.saturating_sub(3) {
            *v = 0.0;
        }
    }
    Ok((cleaned, low, frame_rate))
}

/// Autocorrelation of the envelope at a fractional lag (linear interpolation).
fn acf_at(env: &[f64], lag: f64) -> f64 {
    let lo = lag.floor() as usize;
    let frac = lag - lo as f64;
    let a = acf_int(env, lo);
    let b = acf_int(env, lo + 1);
    a * (1.0 - frac) + b * frac
}

fn acf_int(env: &[f64], lag: usize) -> f64 {
    if lag >= env.len() {
        return 0.0;
    }
    let n = env.len() - lag;
    let s: f64 = (0..n).map(|i| env[i] * env[i + lag]).sum();
    s / n as f64
}

/// Autocorrelation score used to shortlist tempo candidates: value at the
/// beat lag plus half the value at the double lag.
fn acf_score(env: &[f64], frame_rate: f64, bpm: f64) -> f64 {
    let lag = frame_rate * 60.0 / bpm;
    acf_at(env, lag) + 0.5 * acf_at(env, 2.0 * lag)
}

/// Comb score for one candidate period: best-phase mean envelope energy on
/// the beat comb, minus half the mean energy midway between comb points.
///
/// The midpoint penalty breaks the lattice ties that plain autocorrelation
/// cannot: half-tempo combs put strong onsets at their midpoints, and
/// 2/3-tempo combs collect weak off-beat energy on the comb itself.
fn comb_score(env3: &[f64], period: f64, phase_step: f64) -> (f64, f64) {
    let mut best = f64::MIN;
    let mut best_phase = 0.0;
    let mut phase = 0.0;
    while phase < period {
        let mut on = 0.0;
        let mut off = 0.0;
        let mut count = 0.0;
        let mut p = phase;
        while (p.round() as usize) < env3.len() {
            on += env3[p.round() as usize];
            let mid = p + period / 2.0;
            if (mid.round() as usize) < env3.len() {
                off += env3[mid.round() as usize];
            }
            count += 1.0;
            p += period;
        }
        let s = (on - 0.5 * off) / count;
        if s > best {
            best = s;
            best_phase = phase;
        }
        phase += phase_step;
    }
    (best, best_phase)
}

/// Estimate tempo, beat grid, and downbeat grid of a clip (>= 5 s).
///
/// Tempo search covers [60, 180] BPM; when the winner sits outside
/// [80, 160] and its in-range octave scores comparably, the octave wins.
pub fn estimate_rhythm(clip: &AudioClip) -> Result<RhythmEstimate> {
    let need = 5 * clip.sample_rate as usize;
    if clip.len() < need {
        return Err(Error::ClipTooShort {
            need,
            got: clip.len(),
        });
    }
    let (flux, low, frame_rate) = onset_envelope(clip)?;
    let peak = flux.iter().fold(0.0f64, |m, &v| m.max(v));
    // a usable envelope has sparse spikes well above its typical level;
    // steady tones leave only dense low-crest spectral ripple
    let mean = flux.iter().sum::<f64>() / flux.len().max(1) as f64;
    if peak < 1e-9 || peak < 5.0 * mean {
        return Err(Error::FlatOnsetEnvelope);
    }
    let acf0 = acf_int(&flux, 0);
    let norm: Vec<f64> = flux.iter().map(|v| v / acf0.sqrt()).collect();
    // 1-frame max pooling so comb evaluation tolerates peak smear
    let env3: Vec<f64> = (0..flux.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(flux.len() - 1);
            flux[lo..=hi].iter().fold(0.0f64, |m, &v| m.max(v))
        })
        .collect();

    // shortlist: local maxima of the autocorrelation score over a coarse grid
    let grid: Vec<f64> = {
        let mut v = Vec::new();
        let mut bpm = 60.0;
        while bpm <= 180.0 {
            v.push(acf_score(&norm, frame_rate, bpm));
            bpm += 1.0;
        }
        v
    };
    let mut candidates: Vec<(f64, f64)> = (1..grid.len() - 1)
        .filter(|&i| grid[i] >= grid[i - 1] && grid[i] >= grid[i + 1])
        .map(|i| (60.0 + i as f64, grid[i]))
        .collect();
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    candidates.truncate(10);
    if candidates.is_empty() {
        candidates.push((120.0, 0.0));
    }

    // resolve with the comb score; a mild weight prefers [80, 160] on ties.
    // Each candidate is first refined in a +/-1 BPM window so the comb does
    // not drift off the onset peaks over a long clip.
    let pref = |bpm: f64| {
        if (80.0..=160.0).contains(&bpm) {
            1.0
        } else {
            0.97
        }
    };
    let mut best_bpm = candidates[0].0;
    let mut best_score = f64::MIN;
    for &(center, _) in &candidates {
        let mut b = (center - 1.0).max(55.0);
        while b <= center + 1.0 {
            let (s, _) = comb_score(&env3, frame_rate * 60.0 / b, 0.5);
            if s * pref(b) > best_score {
                best_score = s * pref(b);
                best_bpm = b;
            }
            b += 0.1;
        }
    }
    // fine pass around the winner
    let mut fine = best_bpm;
    let mut fine_phase = 0.0;
    let mut fine_score = f64::MIN;
    let mut b = (best_bpm - 1.2).max(55.0);
    while b <= best_bpm + 1.2 {
        let (s, phase) = comb_score(&env3, frame_rate * 60.0 / b, 0.25);
        if s > fine_score {
            fine_score = s;
            fine = b;
            fine_phase = phase;
        }
        b += 0.02;
    }
    let tempo_bpm = fine;
    let period = frame_rate * 60.0 / tempo_bpm;
    let best_phase = fine_phase;

    // track beats left to right: predict from the previous snapped beat so
    // small tempo error cannot accumulate into drift
    let mut beat_frames = vec![snap_to_peak(&flux, best_phase)];
    loop {
        let prev = *beat_frames.last().unwrap();
        let predicted = prev + period;
        if predicted.round() as usize >= flux.len() {
            break;
        }
        let snapped = snap_to_peak(&flux, predicted);
        beat_frames.push(if snapped > prev + 0.5 * period {
            snapped
        } else {
            predicted
        });
    }
    // window-centered frame timestamps
    let to_time =
        |f: f64| (f * ONSET_HOP as f64 + ONSET_WIN as f64 / 2.0) / clip.sample_rate as f64;
    let mut beat_times: Vec<f64> = beat_frames.iter().map(|&f| to_time(f)).collect();
    beat_times.dedup_by(|a, b| *a <= *b + 1e-9);

    // downbeat phase: bar starts carry the most low-band energy
    let mut best_off = 0;
    let mut best_low = f64::MIN;
    for off in 0..4.min(beat_frames.len()) {
        let e: f64 = beat_frames[off..]
            .iter()
            .step_by(4)
            .map(|&f| low[(f.round() as usize).min(low.len() - 1)])
            .sum();
        let count = beat_frames[off..].iter().step_by(4).count() as f64;
        let avg = if count > 0.0 { e / count } else { f64::MIN };
        if avg > best_low {
            best_low = avg;
            best_off = off;
        }
    }
    let downbeat_times: Vec<f64> = beat_times[best_off.min(beat_times.len())..]
        .iter()
        .step_by(4)
        .copied()
        .collect();

    Ok(RhythmEstimate {
        tempo_bpm,
        beat_times,
        downbeat_times,
    })
}

/// Move a predicted beat frame to the strongest flux value within +/- 2
/// frames, then refine with a parabolic fit.
fn snap_to_peak(flux: &[f64], predicted: f64) -> f64 {
    let c = predicted.round() as isize;
    let lo = (c - 2).max(0) as usize;
    let hi = ((c + 2) as usize).min(flux.len() - 1);
    let mut p = lo;
    for i in lo..=hi {
        if flux[i] > flux[p] {
            p = i;
        }
    }
    if p == 0 || p + 1 >= flux.len() {
        return p as f64;
    }
    let (a, b, cc) = (flux[p - 1], flux[p], flux[p + 1]);
    let denom = a - 2.0 * b + cc;
    if denom.abs() < 1e-12 {
        p as f64
    } else {
        let off = 0.5 * (a - cc) / denom;
        p as f64 + off.clamp(-0.5, 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{mix, sine, AudioClip, ENGINE_RATE};
    use crate::synth;
    use rand::{Rng, SeedableRng};

    fn triad(tonic_midi: f64, duration_s: f64) -> AudioClip {
        let f = |m: f64| 440.0 * 2f64.powf((m - 69.0) / 12.0);
        let a = sine(f(tonic_midi), duration_s, 0.3, ENGINE_RATE);
        let b = sine(f(tonic_midi + 4.0), duration_s, 0.25, ENGINE_RATE);
        let c = sine(f(tonic_midi + 7.0), duration_s, 0.25, ENGINE_RATE);
        mix(&[&a, &b, &c], &[1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn c_major_triad_is_c_major() {
        let clip = triad(60.0, 3.0); // C4 E4 G4
        let key = estimate_key(&clip).unwrap();
        assert_eq!(key.tonic, 0);
        assert_eq!(key.mode, Mode::Major);
    }

    #[test]
    fn shifted_triad_moves_tonic() {
        for k in [1i32, 3, 5, -2] {
            let clip = triad(60.0 + k as f64, 3.0);
            let key = estimate_key(&clip).unwrap();
            assert_eq!(key.tonic as i32, k.rem_euclid(12), "shift {k}");
        }
    }

    #[test]
    fn noise_has_low_confidence() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..3 * ENGINE_RATE as usize)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        let key = estimate_key(&AudioClip::new(samples, ENGINE_RATE)).unwrap();
        assert!(key.confidence < 0.2, "confidence {}", key.confidence);
    }

    #[test]
    fn silence_is_rejected() {
        let clip = AudioClip::silence(3.0, ENGINE_RATE);
        assert!(matches!(estimate_key(&clip), Err(Error::NoTonalEnergy)));
        let short = sine(440.0, 1.0, 0.5, ENGINE_RATE);
        assert!(matches!(
            estimate_key(&short),
            Err(Error::ClipTooShort { .. })
        ));
    }

    #[test]
    fn click_track_tempo_and_beats() {
        let clip = synth::click_track(120.0, 10.0, ENGINE_RATE);
        let r = estimate_rhythm(&clip).unwrap();
        assert!((r.tempo_bpm - 120.0).abs() <= 1.0, "tempo {}", r.tempo_bpm);
        // every beat within 20 ms of a true click time
        let period = 60.0 / 120.0;
        for &t in &r.beat_times {
            let nearest = (t / period).round() * period;
            assert!((t - nearest).abs() <= 0.020, "beat {t} vs {nearest}");
        }
        assert!(r.beat_times.windows(2).all(|w| w[1] > w[0]));
        let median_ibi = {
            let mut ibis: Vec<f64> = r.beat_times.windows(2).map(|w| w[1] - w[0]).collect();
            ibis.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ibis[ibis.len() / 2]
        };
        assert!((median_ibi - period).abs() / period < 0.05);
    }

    #[test]
    fn kick_every_fourth_click_marks_downbeats() {
        let clip = synth::click_track_with_kicks(100.0, 12.0, ENGINE_RATE);
        let r = estimate_rhythm(&clip).unwrap();
        assert!((r.tempo_bpm - 100.0).abs() <= 1.0);
        let bar = 4.0 * 60.0 / 100.0;
        for &t in &r.downbeat_times {
            let nearest = (t / bar).round() * bar;
            assert!((t - nearest).abs() <= 0.05, "downbeat {t} vs {nearest}");
        }
        for t in &r.downbeat_times {
            assert!(r.beat_times.iter().any(|b| (b - t).abs() < 1e-9));
        }
    }

    #[test]
    fn stretched_clicks_scale_tempo() {
        let clip = synth::click_track(120.0, 10.0, ENGINE_RATE);
        let stretched = crate::transform::time_stretch(&clip, 1.2).unwrap();
        let r = estimate_rhythm(&stretched).unwrap();
        assert!((r.tempo_bpm - 144.0).abs() <= 2.0, "tempo {}", r.tempo_bpm);
    }

    #[test]
    fn flat_envelope_is_rejected() {
        let clip = sine(440.0, 6.0, 0.5, ENGINE_RATE);
        assert!(matches!(
            estimate_rhythm(&clip),
            Err(Error::FlatOnsetEnvelope)
        ));
        let short = synth::click_track(120.0, 3.0, ENGINE_RATE);
        assert!(matches!(
            estimate_rhythm(&short),
            Err(Error::ClipTooShort { .. })
        ));
    }

    #[test]
    fn key_distance_values() {
        let k = |t| KeyEstimate::new(t, Mode::Major, 1.0);
        assert_eq!(key_distance(&k(0), &k(0)), 0);
        assert_eq!(key_distance(&k(0), &k(7)), 5);
        assert_eq!(key_distance(&k(11), &k(0)), 1);
    }

    #[test]
    fn key_distance_is_a_metric() {
        for a in 0u8..12 {
            for b in 0u8..12 {
                let d = pitch_class_distance(a, b);
                assert_eq!(d, pitch_class_distance(b, a));
                assert_eq!(d == 0, a == b);
                assert!(d <= 6);
                for c in 0u8..12 {
                    assert!(
                        pitch_class_distance(a, c) as i32
                            <= d as i32 + pitch_class_distance(b, c) as i32
                    );
                }
            }
        }
    }
}
