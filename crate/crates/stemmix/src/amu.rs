//! Rule-based baseline mashability in the style of AutoMashUpper: a
//! weighted sum of harmonic compatibility, rhythmic compatibility, and
//! spectral balance over beat-synchronous features.

use crate::analysis::RhythmEstimate;
use crate::signal::{stft_magnitudes, AudioClip, STFT_HOP, STFT_WIN};
use crate::{Error, Result};

/// Sub-beat bins of the per-beat onset pattern.
pub const SUB_BEAT_BINS: usize = 4;

/// Log-spaced energy bands of the per-beat spectral profile.
pub const N_BANDS: usize = 8;

/// Equal weights for the three compatibility terms.
pub const DEFAULT_WEIGHTS: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

/// Beat-synchronous representation of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatSyncFeatures {
    /// Per-beat chroma, rows normalized to unit max (silent beats all-zero).
    pub chroma: Vec<[f64; 12]>,
    /// Per-beat onset energy in `SUB_BEAT_BINS` sub-beat bins.
    pub onsets: Vec<[f64; SUB_BEAT_BINS]>,
    /// Per-beat energy in `N_BANDS` log-spaced bands.
    pub bands: Vec<[f64; N_BANDS]>,
}

impl BeatSyncFeatures {
    pub fn n_beats(&self) -> usize {
        self.chroma.len()
    }
}

/// Aggregate chroma, onset pattern, and band energies per beat interval.
pub fn beat_sync_features(clip: &AudioClip, rhythm: &RhythmEstimate) -> Result<BeatSyncFeatures> {
    let beats = &rhythm.beat_times;
    if beats.len() < 4 {
        return Err(Error::TooFewBeats {
            need: 4,
            got: beats.len(),
        });
    }
    let mags = stft_magnitudes(clip, STFT_WIN, STFT_HOP)?;
    let frame_rate = clip.sample_rate as f64 / STFT_HOP as f64;
    let bin_hz = clip.sample_rate as f64 / STFT_WIN as f64;
    let n_bins = mags[0].len();

    // per-bin pitch class (C3..B6 range, as in key analysis) and band index
    let pc_of: Vec<Option<usize>> = (0..n_bins)
        .map(|b| {
            let f = b as f64 * bin_hz;
            if !(130.0..=2100.0).contains(&f) {
                return None;
            }
            let midi = 69.0 + 12.0 * (f / 440.0).log2();
            Some((midi.round() as i64).rem_euclid(12) as usize)
        })
        .collect();
    let band_of: Vec<usize> = (0..n_bins)
        .map(|b| {
            let f = (b.max(1)) as f64 * bin_hz;
            let top = clip.sample_rate as f64 / 2.0;
            let x = (f.ln() - (bin_hz).ln()) / (top.ln() - bin_hz.ln());
            ((x * N_BANDS as f64) as usize).min(N_BANDS - 1)
        })
        .collect();

    // spectral flux from a short 512/256 STFT: the wide analysis window
    // would smear a click across neighboring sub-beat bins
    let (onset_win, onset_hop) = (512, 256);
    let onset_mags = stft_magnitudes(clip, onset_win, onset_hop)?;
    let onset_rate = clip.sample_rate as f64 / onset_hop as f64;
    let mut flux = vec![0.0; onset_mags.len()];
    for t in 1..onset_mags.len() {
        flux[t] = onset_mags[t]
            .iter()
            .zip(&onset_mags[t - 1])
            .map(|(a, b)| (a - b).max(0.0))
            .sum();
    }

    let frame_center = |t: usize| (t as f64 + 0.5 * STFT_WIN as f64 / STFT_HOP as f64) / frame_rate;
    let onset_center =
        |t: usize| (t as f64 + 0.5 * onset_win as f64 / onset_hop as f64) / onset_rate;
    let n_beats = beats.len() - 1;
    let mut chroma = vec![[0.0; 12]; n_beats];
    let mut onsets = vec![[0.0; SUB_BEAT_BINS]; n_beats];
    let mut bands = vec![[0.0; N_BANDS]; n_beats];
    for (t, frame) in mags.iter().enumerate() {
        let time = frame_center(t);
        // beat interval containing this frame
        let Some(beat) = beats[..n_beats]
            .iter()
            .zip(&beats[1..])
            .position(|(&a, &b)| time >= a && time < b)
        else {
            continue;
        };
        for (bin, &m) in frame.iter().enumerate() {
            if let Some(pc) = pc_of[bin] {
                chroma[beat][pc] += m;
            }
            bands[beat][band_of[bin]] += m * m;
        }
    }
    for (t, &fl) in flux.iter().enumerate() {
        let time = onset_center(t);
        let Some(beat) = beats[..n_beats]
            .iter()
            .zip(&beats[1..])
            .position(|(&a, &b)| time >= a && time < b)
        else {
            continue;
        };
        let frac = (time - beats[beat]) / (beats[beat + 1] - beats[beat]);
        let sub = ((frac * SUB_BEAT_BINS as f64) as usize).min(SUB_BEAT_BINS - 1);
        onsets[beat][sub] += fl;
    }
    // normalize chroma rows to unit max; silent beats stay all-zero
    for row in &mut chroma {
        let mx = row.iter().cloned().fold(0.0f64, f64::max);
        if mx > 1e-12 {
            row.iter_mut().for_each(|v| *v /= mx);
        } else {
            *row = [0.0; 12];
        }
    }
    Ok(BeatSyncFeatures {
        chroma,
        onsets,
        bands,
    })
}

/// Normalized cross-correlation of two flattened feature matrices.
fn normalized_correlation(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

fn flatten_chroma(f: &BeatSyncFeatures, rotation: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * 12);
    for row in &f.chroma[..n] {
        for pc in 0..12 {
            out.push(row[(pc + rotation) % 12]);
        }
    }
    out
}

/// Pairwise mashability: harmonic (rotation-max chroma correlation),
/// rhythmic (onset-pattern correlation), and spectral balance
/// (band-profile anti-correlation), weighted.
pub fn amu_pair(a: &BeatSyncFeatures, b: &BeatSyncFeatures, weights: &[f64; 3]) -> Result<f64> {
    let n = a.n_beats().min(b.n_beats());
    if n == 0 {
        return Err(Error::TooFewBeats { need: 1, got: 0 });
    }
    // evaluated in both rotation directions so the result is exactly
    // symmetric in (a, b) despite floating-point summation order
    let base_a = flatten_chroma(a, 0, n);
    let base_b = flatten_chroma(b, 0, n);
    let harmonic = (0..12)
        .map(|rot| {
            normalized_correlation(&base_a, &flatten_chroma(b, rot, n))
                .max(normalized_correlation(&base_b, &flatten_chroma(a, rot, n)))
        })
        .fold(0.0f64, f64::max);

    let onsets_a: Vec<f64> = a.onsets[..n].iter().flatten().copied().collect();
    let onsets_b: Vec<f64> = b.onsets[..n].iter().flatten().copied().collect();
    let rhythmic = normalized_correlation(&onsets_a, &onsets_b);

    let bands_a: Vec<f64> = a.bands[..n].iter().flatten().copied().collect();
    let bands_b: Vec<f64> = b.bands[..n].iter().flatten().copied().collect();
    let spectral = 1.0 - normalized_correlation(&bands_a, &bands_b);

    let total: f64 = weights.iter().sum();
    Ok((weights[0] * harmonic + weights[1] * rhythmic + weights[2] * spectral) / total)
}

/// Group mashability: mean of the three pairwise scores.
pub fn amu_group(
    vocal: &BeatSyncFeatures,
    harmonic: &BeatSyncFeatures,
    percussion: &BeatSyncFeatures,
    weights: &[f64; 3],
) -> Result<f64> {
    Ok((amu_pair(vocal, harmonic, weights)?
        + amu_pair(vocal, percussion, weights)?
        + amu_pair(harmonic, percussion, weights)?)
        / 3.0)
}

/// Score a generated candidate with the rule-based baseline.
///
/// All three stems are rendered on a common grid anchored at the seed
/// vocal's first downbeat, so the vocal's beat grid (shifted to the cut
/// point) serves as the shared beat reference for every stem.
pub fn amu_candidate(
    db: &crate::mashupdb::MashupDB,
    candidate: &crate::generation::MashupCandidate,
    cfg: &crate::generation::GenConfig,
) -> Result<f64> {
    let stems = crate::generation::render_stems_cfg(db, candidate, cfg)?;
    amu_from_stems(db, candidate, &stems)
}

/// Same as [`amu_candidate`] on pre-rendered stems, avoiding a re-render
/// when the caller already has them.
pub fn amu_from_stems(
    db: &crate::mashupdb::MashupDB,
    candidate: &crate::generation::MashupCandidate,
    stems: &[crate::signal::AudioClip; 3],
) -> Result<f64> {
    let vocal = db
        .get(&candidate.vocal_id)
        .ok_or_else(|| Error::DbIndex(format!("unknown stem id {}", candidate.vocal_id)))?;
    let first_down = vocal.downbeat_times.first().copied().unwrap_or(0.0);
    let dur = stems[0].duration_s();
    let shift_into = |times: &[f64]| -> Vec<f64> {
        times
            .iter()
            .map(|t| t - first_down)
            .filter(|t| *t >= -1e-9 && *t <= dur + 1e-9)
            .collect()
    };
    let rhythm = RhythmEstimate {
        tempo_bpm: vocal.tempo_bpm,
        beat_times: shift_into(&vocal.beat_times),
        downbeat_times: shift_into(&vocal.downbeat_times),
    };
    let feats = [
        beat_sync_features(&stems[0], &rhythm)?,
        beat_sync_features(&stems[1], &rhythm)?,
        beat_sync_features(&stems[2], &rhythm)?,
    ];
    amu_group(&feats[0], &feats[1], &feats[2], &DEFAULT_WEIGHTS)
}
