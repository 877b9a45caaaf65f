//! Tempo and key adjustment of stems via a phase vocoder.
//!
//! Time-stretching uses STFT analysis at a ratio-scaled hop, per-bin phase
//! propagation with identity phase locking around spectral peaks, and
//! windowed overlap-add synthesis. Pitch-shifting is a stretch followed by
//! band-limited resampling.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::{hann_window, resample_kernel, AudioClip};

const PV_WIN: usize = 2048;
const PV_HOP: usize = 512;

/// Hard limits of the transform engine.
pub const MIN_STRETCH: f64 = 0.5;
pub const MAX_STRETCH: f64 = 2.0;
pub const MAX_SEMITONES: f64 = 12.0;

/// A stem's scheduled adjustment: tempo ratio, key shift, and start offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformSpec {
    /// output_tempo / input_tempo; duration scales by its inverse.
    pub stretch_ratio: f64,
    pub pitch_semitones: f64,
    /// Positive delays the stem with leading silence; negative trims the head.
    pub downbeat_offset_s: f64,
}

impl TransformSpec {
    pub fn identity() -> Self {
        TransformSpec {
            stretch_ratio: 1.0,
            pitch_semitones: 0.0,
            downbeat_offset_s: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.stretch_ratio == 1.0 && self.pitch_semitones == 0.0 && self.downbeat_offset_s == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_STRETCH..=MAX_STRETCH).contains(&self.stretch_ratio) {
            return Err(Error::OutOfRange(format!(
                "stretch_ratio {} outside [{MIN_STRETCH}, {MAX_STRETCH}]",
                self.stretch_ratio
            )));
        }
        if self.pitch_semitones.abs() > MAX_SEMITONES {
            return Err(Error::OutOfRange(format!(
                "pitch shift {} beyond +/-{MAX_SEMITONES} semitones",
                self.pitch_semitones
            )));
        }
        Ok(())
    }
}

/// Change tempo by `ratio` (output duration = input / ratio) without
/// changing pitch.
pub fn time_stretch(clip: &AudioClip, ratio: f64) -> Result<AudioClip> {
    if !(MIN_STRETCH..=MAX_STRETCH).contains(&ratio) {
        return Err(Error::OutOfRange(format!(
            "stretch ratio {ratio} outside [{MIN_STRETCH}, {MAX_STRETCH}]"
        )));
    }
    if ratio == 1.0 {
        return Ok(clip.clone());
    }
    if clip.len() < PV_WIN {
        return Err(Error::ClipTooShort {
            need: PV_WIN,
            got: clip.len(),
        });
    }
    Ok(AudioClip::new(
        vocode(&clip.samples, ratio),
        clip.sample_rate,
    ))
}

/// Shift pitch by a (possibly fractional) number of semitones, preserving
/// duration within one hop. Implemented as stretch by `2^(-s/12)` followed
/// by resampling back to the original length.
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> Result<AudioClip> {
    if semitones.abs() > MAX_SEMITONES {
        return Err(Error::OutOfRange(format!(
            "pitch shift {semitones} beyond +/-{MAX_SEMITONES} semitones"
        )));
    }
    if semitones == 0.0 {
        return Ok(clip.clone());
    }
    let factor = 2f64.powf(semitones / 12.0);
    let stretched = time_stretch(clip, 1.0 / factor)?;
    // read the stretched signal back at `factor` speed
    let out_len = (stretched.len() as f64 / factor).round() as usize;
    Ok(AudioClip::new(
        resample_kernel(&stretched.samples, 1.0 / factor, out_len),
        clip.sample_rate,
    ))
}

/// Apply a full spec: pitch shift, then stretch, then start-time offset.
pub fn apply_spec(clip: &AudioClip, spec: &TransformSpec) -> Result<AudioClip> {
    spec.validate()?;
    let shifted = pitch_shift(clip, spec.pitch_semitones)?;
    let stretched = time_stretch(&shifted, spec.stretch_ratio)?;
    offset_start(&stretched, spec.downbeat_offset_s)
}

/// Shift a clip's start: positive seconds prepend silence, negative trim.
pub fn offset_start(clip: &AudioClip, offset_s: f64) -> Result<AudioClip> {
    let n = (offset_s.abs() * clip.sample_rate as f64).round() as usize;
    if offset_s >= 0.0 {
        let mut samples = vec![0.0; n];
        samples.extend_from_slice(&clip.samples);
        Ok(AudioClip::new(samples, clip.sample_rate))
    } else if n >= clip.len() {
        Err(Error::OutOfRange(format!(
            "offset {offset_s}s trims the entire {}s clip",
            clip.duration_s()
        )))
    } else {
        Ok(AudioClip::new(clip.samples[n..].to_vec(), clip.sample_rate))
    }
}

/// Phase-vocoder core. Synthesis hop is fixed at `PV_HOP`; analysis frames
/// are read at `PV_HOP * ratio` so output duration is input / ratio.
fn vocode(input: &[f64], ratio: f64) -> Vec<f64> {
    let window = hann_window(PV_WIN);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(PV_WIN);
    let ifft = planner.plan_fft_inverse(PV_WIN);
    let n_bins = PV_WIN / 2 + 1;
    let analysis_step = PV_HOP as f64 * ratio;
    let n_out_frames = (((input.len() - PV_WIN) as f64 / analysis_step).floor() as usize) + 1;
    let out_len = (input.len() as f64 / ratio).round() as usize;
    let mut out = vec![0.0; n_out_frames.saturating_sub(1) * PV_HOP + PV_WIN];
    let mut norm = vec![0.0; out.len()];

    let omega: Vec<f64> = (0..n_bins)
        .map(|b| 2.0 * std::f64::consts::PI * b as f64 / PV_WIN as f64)
        .collect();
    let mut prev_phase = vec![0.0; n_bins];
    let mut out_phase = vec![0.0; n_bins];
    let mut prev_pos = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); PV_WIN];

    for k in 0..n_out_frames {
        let pos = ((k as f64 * analysis_step).round() as usize).min(input.len() - PV_WIN);
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(input[pos + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        let mags: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm()).collect();
        let phases: Vec<f64> = buf[..n_bins].iter().map(|c| c.arg()).collect();

        if k == 0 {
            out_phase.copy_from_slice(&phases);
        } else {
            let delta = (pos - prev_pos) as f64;
            let peaks = find_peaks(&mags);
            let mut propagated = vec![false; n_bins];
            for &p in &peaks {
                let expected = omega[p] * delta;
                let dev = princarg(phases[p] - prev_phase[p] - expected);
                let inst = omega[p] + dev / delta;
                out_phase[p] += inst * PV_HOP as f64;
                propagated[p] = true;
            }
            // identity phase locking: non-peak bins keep their analysis-frame
            // phase relation to the nearest peak
            let mut peak_idx = 0;
            for b in 0..n_bins {
                if propagated[b] {
                    continue;
                }
                while peak_idx + 1 < peaks.len()
                    && peaks[peak_idx + 1].abs_diff(b) < peaks[peak_idx].abs_diff(b)
                {
                    peak_idx += 1;
                }
                if let Some(&p) = peaks.get(peak_idx) {
                    out_phase[b] = out_phase[p] + (phases[b] - phases[p]);
                } else {
                    let expected = omega[b] * delta;
                    let dev = princarg(phases[b] - prev_phase[b] - expected);
                    out_phase[b] += (omega[b] + dev / delta) * PV_HOP as f64;
                }
            }
        }
        prev_phase.copy_from_slice(&phases);
        prev_pos = pos;

        for b in 0..n_bins {
            buf[b] = Complex::from_polar(mags[b], out_phase[b]);
        }
        for b in n_bins..PV_WIN {
            buf[b] = buf[PV_WIN - b].conj();
        }
        ifft.process(&mut buf);
        let start = k * PV_HOP;
        for i in 0..PV_WIN {
            let w = window[i];
            out[start + i] += buf[i].re / PV_WIN as f64 * w;
            norm[start + i] += w * w;
        }
    }
    for (o, &n) in out.iter_mut().zip(&norm) {
        if n > 1e-9 {
            *o /= n;
        }
    }
    out.truncate(out_len);
    if out.len() < out_len {
        out.resize(out_len, 0.0);
    }
    out
}

fn princarg(phase: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    phase - two_pi * (phase / two_pi).round()
}

/// Indices of local magnitude maxima that dominate their 2-bin neighborhood.
fn find_peaks(mags: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    for b in 2..mags.len().saturating_sub(2) {
        if mags[b] > mags[b - 1]
            && mags[b] > mags[b - 2]
            && mags[b] >= mags[b + 1]
            && mags[b] >= mags[b + 2]
            && mags[b] > 1e-9
        {
            peaks.push(b);
        }
    }
    peaks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{dominant_frequency, sine, ENGINE_RATE};

    #[test]
    fn identity_ratio_is_exact() {
        let clip = sine(440.0, 1.0, 0.5, ENGINE_RATE);
        let out = time_stretch(&clip, 1.0).unwrap();
        assert_eq!(out, clip);
    }

    #[test]
    fn stretch_shortens_and_keeps_pitch() {
        let clip = sine(440.0, 2.0, 0.5, ENGINE_RATE);
        let out = time_stretch(&clip, 1.25).unwrap();
        let expected = clip.len() as f64 / 1.25;
        assert!((out.len() as f64 - expected).abs() <= 512.0);
        let f = dominant_frequency(&out);
        assert!((f - 440.0).abs() / 440.0 < 0.01, "dominant {f}");
    }

    #[test]
    fn stretch_duration_contract() {
        let clip = sine(330.0, 2.0, 0.5, ENGINE_RATE);
        for r in [0.5, 0.8, 0.9, 1.1, 1.2, 2.0] {
            let out = time_stretch(&clip, r).unwrap();
            assert!(
                (out.len() as f64 - clip.len() as f64 / r).abs() <= 512.0,
                "ratio {r}: {} vs {}",
                out.len(),
                clip.len() as f64 / r
            );
        }
    }

    #[test]
    fn stretch_rejects_out_of_range() {
        let clip = sine(330.0, 1.0, 0.5, ENGINE_RATE);
        assert!(time_stretch(&clip, 0.4).is_err());
        assert!(time_stretch(&clip, 2.1).is_err());
        assert!(pitch_shift(&clip, 12.5).is_err());
    }

    #[test]
    fn pitch_shift_identity() {
        let clip = sine(440.0, 1.0, 0.5, ENGINE_RATE);
        let out = pitch_shift(&clip, 0.0).unwrap();
        assert_eq!(out, clip);
    }

    #[test]
    fn octave_up_doubles_frequency() {
        let clip = sine(440.0, 2.0, 0.5, ENGINE_RATE);
        let out = pitch_shift(&clip, 12.0).unwrap();
        assert!((out.len() as f64 - clip.len() as f64).abs() <= 512.0);
        let f = dominant_frequency(&out);
        assert!((f - 880.0).abs() / 880.0 < 0.01, "dominant {f}");
    }

    #[test]
    fn shift_then_unshift_restores_frequency() {
        let clip = sine(440.0, 2.0, 0.5, ENGINE_RATE);
        for s in [3.0, -2.0] {
            let there = pitch_shift(&clip, s).unwrap();
            let back = pitch_shift(&there, -s).unwrap();
            let f = dominant_frequency(&back);
            assert!((f - 440.0).abs() / 440.0 < 0.01, "shift {s}: {f}");
        }
    }

    #[test]
    fn spectral_centroid_stable_under_stretch() {
        let clip = sine(523.25, 2.0, 0.5, ENGINE_RATE);
        let centroid = |c: &crate::signal::AudioClip| {
            let mags = crate::signal::stft_magnitudes(c, 2048, 512).unwrap();
            let bin_hz = c.sample_rate as f64 / 2048.0;
            let mut num = 0.0;
            let mut den = 0.0;
            for frame in &mags {
                for (b, &m) in frame.iter().enumerate() {
                    num += b as f64 * bin_hz * m;
                    den += m;
                }
            }
            num / den
        };
        let base = centroid(&clip);
        for r in [0.8, 1.2] {
            let out = time_stretch(&clip, r).unwrap();
            let c = centroid(&out);
            assert!((c - base).abs() / base < 0.05, "ratio {r}: {c} vs {base}");
        }
    }

    #[test]
    fn triad_shift_moves_estimated_key() {
        let clip = {
            let f = |m: f64| 440.0 * 2f64.powf((m - 69.0) / 12.0);
            let a = sine(f(60.0), 3.0, 0.3, ENGINE_RATE);
            let b = sine(f(64.0), 3.0, 0.25, ENGINE_RATE);
            let c = sine(f(67.0), 3.0, 0.25, ENGINE_RATE);
            crate::signal::mix(&[&a, &b, &c], &[1.0, 1.0, 1.0]).unwrap()
        };
        let shifted = pitch_shift(&clip, 3.0).unwrap();
        let key = crate::analysis::estimate_key(&shifted).unwrap();
        assert_eq!(key.tonic, 3);
    }

    #[test]
    fn apply_spec_identity_and_offset() {
        let clip = sine(440.0, 1.0, 0.5, ENGINE_RATE);
        let out = apply_spec(&clip, &TransformSpec::identity()).unwrap();
        assert_eq!(out, clip);

        let spec = TransformSpec {
            stretch_ratio: 1.0,
            pitch_semitones: 0.0,
            downbeat_offset_s: 0.5,
        };
        let out = apply_spec(&clip, &spec).unwrap();
        assert_eq!(out.len(), clip.len() + 11025);
        assert!(out.samples[..11025].iter().all(|&s| s == 0.0));

        let neg = TransformSpec {
            downbeat_offset_s: -0.25,
            ..TransformSpec::identity()
        };
        let out = apply_spec(&clip, &neg).unwrap();
        assert_eq!(out.len(), clip.len() - 5513);

        let kill = TransformSpec {
            downbeat_offset_s: -2.0,
            ..TransformSpec::identity()
        };
        assert!(apply_spec(&clip, &kill).is_err());
    }

    #[test]
    fn composed_spec_hits_both_oracles() {
        let clip = crate::synth::clicks_with_triad(100.0, 12.0, 60.0, ENGINE_RATE);
        let spec = TransformSpec {
            stretch_ratio: 1.2,
            pitch_semitones: 2.0,
            downbeat_offset_s: 0.0,
        };
        let out = apply_spec(&clip, &spec).unwrap();
        let r = crate::analysis::estimate_rhythm(&out).unwrap();
        assert!((r.tempo_bpm - 120.0).abs() <= 2.4, "tempo {}", r.tempo_bpm);
        let key = crate::analysis::estimate_key(&out).unwrap();
        assert_eq!(key.tonic, 2);
    }
}
