//! Audio I/O, mixing, resampling, and the log-mel spectrogram frontend.
//!
//! Everything downstream (key/tempo analysis, the rule-based baseline, the
//! neural models) consumes either [`AudioClip`] or [`MelSpec`] produced here.

use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// Engine-wide internal sample rate. All stems are resampled to this at ingestion.
pub const ENGINE_RATE: u32 = 22050;
/// STFT window length in samples (Hann).
pub const STFT_WIN: usize = 2048;
/// STFT hop in samples.
pub const STFT_HOP: usize = 512;
/// Number of mel bands.
pub const N_MELS: usize = 128;
/// Spectrogram magnitudes below this are clamped before the log.
pub const LOG_EPS: f64 = 1e-5;
/// Value of a log-mel cell for silence: `ln(LOG_EPS)`.
pub fn log_floor() -> f64 {
    LOG_EPS.ln()
}

/// A mono audio buffer with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(sample_rate > 0);
        AudioClip {
            samples,
            sample_rate,
        }
    }

    /// All-zero clip of the given duration.
    pub fn silence(duration_s: f64, sample_rate: u32) -> Self {
        let n = (duration_s * sample_rate as f64).round() as usize;
        AudioClip::new(vec![0.0; n], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Scale all samples by a linear gain.
    pub fn scaled(&self, gain: f64) -> Self {
        AudioClip::new(
            self.samples.iter().map(|s| s * gain).collect(),
            self.sample_rate,
        )
    }
}

/// 128-bin log-mel time-frequency matrix, row-major `[n_frames][n_mels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpec {
    pub values: Vec<Vec<f64>>,
    pub n_mels: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl MelSpec {
    pub fn n_frames(&self) -> usize {
        self.values.len()
    }
}

/// Load a PCM WAV file as a mono clip at the file's native rate.
///
/// Multi-channel input is averaged down to mono. Accepts 16/24-bit integer
/// and 32-bit float encodings.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedEncoding {
            path: path.to_path_buf(),
            detail: "zero channels".into(),
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, 24) => reader
            .samples::<i32>()
            .map(|s| s.map(|v| v as f64 / 8_388_608.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{fmt:?} {bits}-bit"),
            })
        }
    };
    if interleaved.is_empty() {
        return Err(Error::EmptyAudio(path.to_path_buf()));
    }
    let n_frames = interleaved.len() / channels;
    let mut samples = Vec::with_capacity(n_frames);
    for frame in interleaved.chunks_exact(channels) {
        samples.push(frame.iter().sum::<f64>() / channels as f64);
    }
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Write a clip as 16-bit PCM WAV. Samples outside [-1, 1] are hard-clipped;
/// the number of clipped samples is returned.
pub fn write_audio(clip: &AudioClip, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    if clip.is_empty() {
        return Err(Error::EmptyClip(path.to_path_buf()));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    let mut clipped = 0usize;
    for &s in &clip.samples {
        let v = if s > 1.0 {
            clipped += 1;
            1.0
        } else if s < -1.0 {
            clipped += 1;
            -1.0
        } else {
            s
        };
        // symmetric 1/32768 quantization step, clamped into i16 range
        let q = (v * 32768.0).round().clamp(-32768.0, 32767.0);
        writer.write_sample(q as i16)?;
    }
    writer.finalize()?;
    Ok(clipped)
}

/// Band-limited resampling to a new rate via a windowed-sinc kernel.
///
/// Duration in seconds is preserved within one output sample.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::OutOfRange("target_rate must be > 0".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let out_len = (clip.len() as f64 * ratio).round() as usize;
    Ok(AudioClip::new(
        resample_kernel(&clip.samples, ratio, out_len),
        target_rate,
    ))
}

/// Evaluate the input at fractional positions `n / ratio` with a Hann-windowed
/// sinc kernel. When downsampling the kernel cutoff is lowered to `ratio`.
pub(crate) fn resample_kernel(input: &[f64], ratio: f64, out_len: usize) -> Vec<f64> {
    const HALF_TAPS: usize = 24;
    let cutoff = ratio.min(1.0);
    // Kernel half-width in input samples, widened when downsampling.
    let half_width = (HALF_TAPS as f64 / cutoff).ceil() as isize;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 / ratio;
        let center = t.floor() as isize;
        let mut acc = 0.0;
        for k in (center - half_width)..=(center + half_width) {
            if k < 0 || k as usize >= input.len() {
                continue;
            }
            let x = t - k as f64;
            acc += input[k as usize] * cutoff * sinc(cutoff * x) * hann_tap(x, half_width as f64);
        }
        out.push(acc);
    }
    out
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn hann_tap(x: f64, half_width: f64) -> f64 {
    if x.abs() >= half_width {
        0.0
    } else {
        0.5 + 0.5 * (std::f64::consts::PI * x / half_width).cos()
    }
}

/// Sample-wise weighted sum of clips, zero-padded to the longest input.
///
/// If the raw sum peaks above 1.0 the output is normalized to 0.95.
pub fn mix(clips: &[&AudioClip], gains: &[f64]) -> Result<AudioClip> {
    assert!(!clips.is_empty() && clips.len() == gains.len());
    let rate = clips[0].sample_rate;
    for c in clips {
        if c.sample_rate != rate {
            return Err(Error::SampleRateMismatch(rate, c.sample_rate));
        }
    }
    let out_len = clips.iter().map(|c| c.len()).max().unwrap();
    let mut out = vec![0.0; out_len];
    for (clip, &g) in clips.iter().zip(gains) {
        for (o, &s) in out.iter_mut().zip(&clip.samples) {
            *o += g * s;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        let scale = 0.95 / peak;
        for o in &mut out {
            *o *= scale;
        }
    }
    Ok(AudioClip::new(out, rate))
}

/// Periodic Hann window of length `n`.
pub(crate) fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// STFT magnitude spectrogram, `[n_frames][win/2 + 1]`.
///
/// Frame count is `floor((len - win) / hop) + 1`; errors if the clip is
/// shorter than one window.
pub fn stft_magnitudes(clip: &AudioClip, win: usize, hop: usize) -> Result<Vec<Vec<f64>>> {
    if clip.len() < win {
        return Err(Error::ClipTooShort {
            need: win,
            got: clip.len(),
        });
    }
    let window = hann_window(win);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(win);
    let n_frames = (clip.len() - win) / hop + 1;
    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    for f in 0..n_frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(clip.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..win / 2 + 1].iter().map(|c| c.norm()).collect());
    }
    Ok(frames)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the `n_mels` triangular filters for a given rate.
pub fn mel_center_frequencies(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (1..=n_mels)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filterbank, `[n_mels][n_bins]`, over STFT bin frequencies.
pub(crate) fn mel_filterbank(
    n_mels: usize,
    n_bins: usize,
    win: usize,
    sample_rate: u32,
) -> Vec<Vec<f64>> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / win as f64;
    let mut bank = vec![vec![0.0; n_bins]; n_mels];
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for (b, w) in bank[m].iter_mut().enumerate() {
            let f = b as f64 * bin_hz;
            if f > lo && f < hi {
                *w = if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
            }
        }
    }
    bank
}

/// Log-mel spectrogram: STFT magnitudes through 128 triangular mel filters,
/// then `ln(max(x, 1e-5))`.
pub fn mel_spectrogram(clip: &AudioClip) -> Result<MelSpec> {
    mel_spectrogram_n(clip, N_MELS)
}

/// Log-mel spectrogram with a custom filter count (desk-scale models use
/// fewer bands).
pub fn mel_spectrogram_n(clip: &AudioClip, n_mels: usize) -> Result<MelSpec> {
    let mags = stft_magnitudes(clip, STFT_WIN, STFT_HOP)?;
    let n_bins = STFT_WIN / 2 + 1;
    let bank = mel_filterbank(n_mels, n_bins, STFT_WIN, clip.sample_rate);
    let values = mags
        .iter()
        .map(|frame| {
            bank.iter()
                .map(|filt| {
                    let e: f64 = filt.iter().zip(frame).map(|(w, m)| w * m).sum();
                    e.max(LOG_EPS).ln()
                })
                .collect()
        })
        .collect();
    Ok(MelSpec {
        values,
        n_mels,
        hop: STFT_HOP,
        sample_rate: clip.sample_rate,
    })
}

/// A sine tone, handy for synthesis and tests.
pub fn sine(freq_hz: f64, duration_s: f64, amplitude: f64, sample_rate: u32) -> AudioClip {
    let n = (duration_s * sample_rate as f64).round() as usize;
    let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate as f64;
    AudioClip::new(
        (0..n).map(|i| amplitude * (w * i as f64).sin()).collect(),
        sample_rate,
    )
}

/// Frequency (Hz) of the strongest FFT bin of the whole clip.
pub fn dominant_frequency(clip: &AudioClip) -> f64 {
    let n = clip.len().next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = clip
        .samples
        .iter()
        .map(|&s| Complex::new(s, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    fft.process(&mut buf);
    let (best, _) = buf[..n / 2]
        .iter()
        .enumerate()
        .fold((0, 0.0), |(bi, bm), (i, c)| {
            let m = c.norm();
            if m > bm {
                (i, m)
            } else {
                (bi, bm)
            }
        });
    best as f64 * clip.sample_rate as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let clip = AudioClip::silence(1.0, 44100);
        assert_eq!(clip.len(), 44100);
        write_audio(&clip, &p).unwrap();
        let back = load_audio(&p).unwrap();
        assert_eq!(back.len(), 44100);
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn stereo_downmix_cancels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 44100,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for _ in 0..1000 {
            w.write_sample((0.5f64 * 32767.0) as i16).unwrap();
            w.write_sample((-0.5f64 * 32767.0) as i16).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_audio(&p).unwrap();
        assert!(clip.samples.iter().all(|&s| s.abs() < 1e-9));
    }

    #[test]
    fn tone_roundtrip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        let clip = sine(440.0, 0.5, 0.8, 44100);
        write_audio(&clip, &p).unwrap();
        let back = load_audio(&p).unwrap();
        assert_eq!(back.len(), clip.len());
        let lsb = 1.0 / 32768.0;
        let max_err = clip
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= lsb, "max_err {max_err} > 1 LSB");
    }

    #[test]
    fn write_refuses_empty() {
        let dir = tempfile::tempdir().unwrap();
        let r = write_audio(&AudioClip::new(vec![], 22050), dir.path().join("e.wav"));
        assert!(matches!(r, Err(Error::EmptyClip(_))));
    }

    #[test]
    fn write_counts_clipped_samples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let mut clip = sine(100.0, 0.1, 0.99, 22050);
        assert_eq!(write_audio(&clip, &p).unwrap(), 0);
        clip.samples[10] = 1.5;
        assert_eq!(write_audio(&clip, &p).unwrap(), 1);
        let back = load_audio(&p).unwrap();
        assert!((back.samples[10] - 32767.0 / 32768.0).abs() < 2.0 / 32768.0);
    }

    #[test]
    fn resample_identity() {
        let clip = sine(440.0, 0.3, 0.5, 22050);
        let out = resample(&clip, 22050).unwrap();
        assert_eq!(out, clip);
    }

    #[test]
    fn resample_preserves_tone() {
        let clip = sine(440.0, 1.0, 0.5, 44100);
        let out = resample(&clip, 22050).unwrap();
        assert!((out.duration_s() - 1.0).abs() <= 1.0 / 22050.0);
        let f = dominant_frequency(&out);
        // one FFT bin at this length is under 2 Hz
        assert!((f - 440.0).abs() < 2.0, "dominant {f}");
    }

    #[test]
    fn resample_preserves_duration() {
        let clip = sine(440.0, 1.0, 0.5, 22050);
        for target in [16000u32, 44100, 48000, 8000] {
            let out = resample(&clip, target).unwrap();
            assert!(
                (out.duration_s() - 1.0).abs() <= 1.0 / target as f64,
                "rate {target}: {}",
                out.duration_s()
            );
        }
    }

    #[test]
    fn mix_identity_and_cancellation() {
        let x = sine(440.0, 0.2, 0.5, 22050);
        let m = mix(&[&x], &[1.0]).unwrap();
        assert_eq!(m, x);
        let neg = x.scaled(-1.0);
        let z = mix(&[&x, &neg], &[1.0, 1.0]).unwrap();
        assert!(z.peak() < 1e-12);
    }

    #[test]
    fn mix_normalizes_hot_sum() {
        let a = sine(220.0, 0.2, 0.4, 22050);
        let b = sine(220.0, 0.2, 0.4, 22050);
        let c = sine(220.0, 0.2, 0.4, 22050);
        let m = mix(&[&a, &b, &c], &[1.0, 1.0, 1.0]).unwrap();
        // raw sum peaks at 1.2, so output is pulled down to 0.95
        assert!((m.peak() - 0.95).abs() < 1e-9);
    }

    #[test]
    fn mix_rejects_rate_mismatch() {
        let a = sine(220.0, 0.2, 0.4, 22050);
        let b = sine(220.0, 0.2, 0.4, 44100);
        assert!(matches!(
            mix(&[&a, &b], &[1.0, 1.0]),
            Err(Error::SampleRateMismatch(_, _))
        ));
    }

    #[test]
    fn mel_silence_hits_log_floor() {
        let clip = AudioClip::silence(1.0, ENGINE_RATE);
        let spec = mel_spectrogram(&clip).unwrap();
        assert_eq!(spec.n_mels, N_MELS);
        for row in &spec.values {
            for &v in row {
                assert_eq!(v, log_floor());
            }
        }
    }

    #[test]
    fn mel_tone_lands_in_expected_band() {
        let clip = sine(440.0, 1.0, 0.6, ENGINE_RATE);
        let spec = mel_spectrogram(&clip).unwrap();
        let centers = mel_center_frequencies(N_MELS, ENGINE_RATE);
        let expected = centers
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| (*a - 440.0).abs().partial_cmp(&(*b - 440.0).abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        for row in &spec.values {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            assert!(
                (argmax as isize - expected as isize).abs() <= 1,
                "argmax {argmax} expected ~{expected}"
            );
        }
    }

    #[test]
    fn mel_frame_count_doubles_with_concatenation() {
        let clip = sine(330.0, 1.0, 0.5, ENGINE_RATE);
        let mut doubled = clip.samples.clone();
        doubled.extend_from_slice(&clip.samples);
        let double_clip = AudioClip::new(doubled, ENGINE_RATE);
        let a = mel_spectrogram(&clip).unwrap().n_frames();
        let b = mel_spectrogram(&double_clip).unwrap().n_frames();
        let expected = (2 * clip.len() - STFT_WIN) / STFT_HOP + 1;
        assert_eq!(b, expected);
        assert!(b >= 2 * a && b <= 2 * a + STFT_WIN / STFT_HOP + 1);
    }

    #[test]
    fn mel_monotone_in_gain() {
        let clip = sine(523.25, 0.5, 0.3, ENGINE_RATE);
        let a = mel_spectrogram(&clip).unwrap();
        let b = mel_spectrogram(&clip.scaled(2.0)).unwrap();
        for (ra, rb) in a.values.iter().zip(&b.values) {
            for (&va, &vb) in ra.iter().zip(rb) {
                assert!(vb >= va - 1e-12);
            }
        }
    }

    #[test]
    fn mel_rejects_short_clip() {
        let clip = AudioClip::silence(0.01, ENGINE_RATE);
        assert!(matches!(
            mel_spectrogram(&clip),
            Err(Error::ClipTooShort { .. })
        ));
    }

    #[test]
    fn mix_linear_below_guard() {
        let a = sine(300.0, 0.2, 0.3, 22050);
        let b = sine(450.0, 0.2, 0.3, 22050);
        let ab = mix(&[&a, &b], &[1.0, 1.0]).unwrap();
        let a1 = mix(&[&a], &[1.0]).unwrap();
        let b1 = mix(&[&b], &[1.0]).unwrap();
        for i in 0..ab.len() {
            assert!((ab.samples[i] - (a1.samples[i] + b1.samples[i])).abs() < 1e-6);
        }
    }
}
