//! Objective evaluation: waveform L2, STFT amplitude/phase L2, and the
//! multi-resolution spectral loss (spectral convergence + log/linear
//! magnitude terms).
//!
//! Reports are line-oriented text: `clip,wave_l2,amplitude_l2,phase_l2,mrstft`
//! per clip plus an `AGGREGATE` row (append a `pesq` column when an external
//! PESQ command is configured).

use crate::audio::AudioClip;
use crate::dataset::Manifest;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::{PI, TAU};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("bad stft config: {reason}")]
    BadConfig { reason: String },
    #[error("silent reference: zero spectral energy")]
    SilentReference,
    #[error("missing prediction for manifest row {row}: {path}")]
    MissingPrediction { row: usize, path: String },
    #[error("pesq command failed: {detail}")]
    PesqFailed { detail: String },
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Analysis window. Rect exists for oracle tests; production metrics use
/// Hann.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Hann,
    Rect,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
    /// Centers each frame on n = f * hop with reflect padding.
    pub center: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { fft_size: 1024, hop: 256, window: Window::Hann, center: true }
    }
}

impl StftConfig {
    fn validate(&self) -> Result<(), MetricError> {
        if self.fft_size < 2 {
            return Err(MetricError::BadConfig { reason: "fft_size must be >= 2".into() });
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(MetricError::BadConfig {
                reason: format!("hop {} outside 1..={}", self.hop, self.fft_size),
            });
        }
        Ok(())
    }
}

/// Complex STFT frames, full spectrum: `frames[f][k]`, k in 0..fft_size.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex64>>,
    pub fft_size: usize,
}

fn window_values(cfg: &StftConfig) -> Vec<f64> {
    let l = cfg.fft_size;
    match cfg.window {
        // Periodic Hann.
        Window::Hann => (0..l).map(|i| 0.5 * (1.0 - (TAU * i as f64 / l as f64).cos())).collect(),
        Window::Rect => vec![1.0; l],
    }
}

/// Sample with reflect padding (no edge repeat): x[-i] = x[i].
fn reflect_read(x: &[f64], idx: isize) -> f64 {
    let n = x.len() as isize;
    if n == 1 {
        return x[0];
    }
    let period = 2 * (n - 1);
    let mut i = idx.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    x[i as usize] as f64
}

/// Hann-windowed, hop-strided DFT frames. With center padding the frame
/// count is ceil(N / hop); without it, frames cover only full windows.
pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<Spectrogram, MetricError> {
    cfg.validate()?;
    let n = x.len();
    let window = window_values(cfg);
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);

    let frame_starts: Vec<isize> = if cfg.center {
        let count = n.div_ceil(cfg.hop);
        (0..count).map(|f| (f * cfg.hop) as isize - (cfg.fft_size / 2) as isize).collect()
    } else {
        if n < cfg.fft_size {
            Vec::new()
        } else {
            (0..=(n - cfg.fft_size) / cfg.hop).map(|f| (f * cfg.hop) as isize).collect()
        }
    };

    let mut frames = Vec::with_capacity(frame_starts.len());
    for start in frame_starts {
        let mut buf: Vec<Complex64> = (0..cfg.fft_size)
            .map(|i| {
                let idx = start + i as isize;
                let v = if cfg.center {
                    reflect_read(x, idx)
                } else {
                    x[idx as usize]
                };
                Complex64::new(v * window[i], 0.0)
            })
            .collect();
        fft.process(&mut buf);
        frames.push(buf);
    }
    Ok(Spectrogram { frames, fft_size: cfg.fft_size })
}

fn check_same_clip_shape(pred: &AudioClip, reference: &AudioClip) -> Result<(), MetricError> {
    if pred.channel_count() != reference.channel_count() || pred.len() != reference.len() {
        return Err(MetricError::ShapeMismatch {
            context: format!(
                "prediction {}x{}, reference {}x{}",
                pred.channel_count(),
                pred.len(),
                reference.channel_count(),
                reference.len()
            ),
        });
    }
    Ok(())
}

/// Mean squared error over all channels and samples.
pub fn wave_l2(pred: &AudioClip, reference: &AudioClip) -> Result<f64, MetricError> {
    check_same_clip_shape(pred, reference)?;
    let count = pred.channel_count() * pred.len();
    if count == 0 {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .channels()
        .iter()
        .zip(reference.channels())
        .flat_map(|(p, r)| p.iter().zip(r).map(|(a, b)| (a - b) * (a - b)))
        .sum();
    Ok(sum / count as f64)
}

/// Wraps a phase difference into (-pi, pi].
fn wrap_phase(d: f64) -> f64 {
    let w = d.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Magnitudes below this count as silence; phase is undefined there.
pub const PHASE_SILENCE_FLOOR: f64 = 1e-8;

/// Mean squared errors on STFT amplitude and wrapped phase, as a pair.
pub fn amplitude_phase_l2(
    pred: &AudioClip,
    reference: &AudioClip,
    cfg: &StftConfig,
) -> Result<(f64, f64), MetricError> {
    check_same_clip_shape(pred, reference)?;
    let mut amp_sum = 0.0;
    let mut phase_sum = 0.0;
    let mut count = 0usize;
    for c in 0..pred.channel_count() {
        let sp = stft(pred.channel(c), cfg)?;
        let sr = stft(reference.channel(c), cfg)?;
        for (fp, fr) in sp.frames.iter().zip(&sr.frames) {
            for (zp, zr) in fp.iter().zip(fr) {
                let (ap, ar) = (zp.norm(), zr.norm());
                amp_sum += (ap - ar) * (ap - ar);
                if ap >= PHASE_SILENCE_FLOOR || ar >= PHASE_SILENCE_FLOOR {
                    let d = wrap_phase(zp.arg() - zr.arg());
                    phase_sum += d * d;
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((amp_sum / count as f64, phase_sum / count as f64))
}

pub fn amplitude_l2(pred: &AudioClip, reference: &AudioClip, cfg: &StftConfig) -> Result<f64, MetricError> {
    Ok(amplitude_phase_l2(pred, reference, cfg)?.0)
}

pub fn phase_l2(pred: &AudioClip, reference: &AudioClip, cfg: &StftConfig) -> Result<f64, MetricError> {
    Ok(amplitude_phase_l2(pred, reference, cfg)?.1)
}

pub const MRSTFT_LOG_EPS: f64 = 1e-7;

/// Default MRSTFT resolutions as (fft_size, hop) pairs.
pub const DEFAULT_MRSTFT_RESOLUTIONS: [(usize, usize); 3] = [(512, 128), (1024, 256), (2048, 512)];

/// The three MRSTFT terms at one resolution for one channel pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrstftTerms {
    pub spectral_convergence: f64,
    pub log_magnitude: f64,
    pub linear_magnitude: f64,
}

impl MrstftTerms {
    pub fn total(&self) -> f64 {
        self.spectral_convergence + self.log_magnitude + self.linear_magnitude
    }
}

fn mrstft_terms_one(
    pred: &[f64],
    reference: &[f64],
    cfg: &StftConfig,
) -> Result<MrstftTerms, MetricError> {
    let sp = stft(pred, cfg)?;
    let sr = stft(reference, cfg)?;
    let mut diff_sq = 0.0;
    let mut ref_sq = 0.0;
    let mut log_sum = 0.0;
    let mut lin_sum = 0.0;
    let mut count = 0usize;
    for (fp, fr) in sp.frames.iter().zip(&sr.frames) {
        for (zp, zr) in fp.iter().zip(fr) {
            let (ap, ar) = (zp.norm(), zr.norm());
            diff_sq += (ar - ap) * (ar - ap);
            ref_sq += ar * ar;
            log_sum += ((ar + MRSTFT_LOG_EPS).ln() - (ap + MRSTFT_LOG_EPS).ln()).abs();
            lin_sum += (ar - ap).abs();
            count += 1;
        }
    }
    if ref_sq == 0.0 {
        return Err(MetricError::SilentReference);
    }
    let count = count.max(1) as f64;
    Ok(MrstftTerms {
        spectral_convergence: diff_sq.sqrt() / ref_sq.sqrt(),
        log_magnitude: log_sum / count,
        linear_magnitude: lin_sum / count,
    })
}

/// Per-resolution, per-channel term breakdown (oracle tests read this).
pub fn mrstft_breakdown(
    pred: &AudioClip,
    reference: &AudioClip,
    resolutions: &[(usize, usize)],
) -> Result<Vec<MrstftTerms>, MetricError> {
    check_same_clip_shape(pred, reference)?;
    if resolutions.is_empty() {
        return Err(MetricError::BadConfig { reason: "no mrstft resolutions".into() });
    }
    let mut out = Vec::new();
    for &(fft_size, hop) in resolutions {
        let cfg = StftConfig { fft_size, hop, window: Window::Hann, center: true };
        for c in 0..pred.channel_count() {
            out.push(mrstft_terms_one(pred.channel(c), reference.channel(c), &cfg)?);
        }
    }
    Ok(out)
}

/// Sum of the three terms, averaged over resolutions and channels.
pub fn mrstft(
    pred: &AudioClip,
    reference: &AudioClip,
    resolutions: &[(usize, usize)],
) -> Result<f64, MetricError> {
    let terms = mrstft_breakdown(pred, reference, resolutions)?;
    Ok(terms.iter().map(MrstftTerms::total).sum::<f64>() / terms.len() as f64)
}

/// Power spectrum |DFT(x)|^2 over the full bin range.
pub fn periodogram(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let fft = FftPlanner::new().plan_fft_forward(x.len());
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf.iter().map(|z| z.norm_sqr()).collect()
}

/// Geometric over arithmetic mean of a power spectrum; 1 for white spectra.
pub fn spectral_flatness(power: &[f64]) -> f64 {
    if power.is_empty() {
        return 0.0;
    }
    const EPS: f64 = 1e-12;
    let log_mean = power.iter().map(|&p| (p + EPS).ln()).sum::<f64>() / power.len() as f64;
    let mean = power.iter().sum::<f64>() / power.len() as f64;
    log_mean.exp() / (mean + EPS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipMetrics {
    pub clip: String,
    pub wave_l2: f64,
    pub amplitude_l2: f64,
    pub phase_l2: f64,
    pub mrstft: f64,
    pub pesq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub clips: Vec<ClipMetrics>,
    pub aggregate: ClipMetrics,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub stft: StftConfig,
    pub mrstft_resolutions: Vec<(usize, usize)>,
    /// External PESQ hook: run as `<cmd> <reference.wav> <prediction.wav>`,
    /// reading the score from the last stdout line.
    pub pesq_command: Option<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            mrstft_resolutions: DEFAULT_MRSTFT_RESOLUTIONS.to_vec(),
            pesq_command: None,
        }
    }
}

/// Scores one prediction against one reference clip. Mono predictions are
/// duplicated to stereo first (the duplicated-mono evaluation protocol).
pub fn score_clip(
    name: &str,
    pred: &AudioClip,
    reference: &AudioClip,
    cfg: &EvalConfig,
) -> Result<ClipMetrics, MetricError> {
    let pred = if pred.channel_count() == 1 && reference.channel_count() == 2 {
        pred.duplicate_mono()?
    } else {
        pred.clone()
    };
    Ok(ClipMetrics {
        clip: name.to_string(),
        wave_l2: wave_l2(&pred, reference)?,
        amplitude_l2: amplitude_l2(&pred, reference, &cfg.stft)?,
        phase_l2: phase_l2(&pred, reference, &cfg.stft)?,
        mrstft: mrstft(&pred, reference, &cfg.mrstft_resolutions)?,
        pesq: None,
    })
}

fn run_pesq(cmd: &str, reference: &Path, pred: &Path) -> Result<f64, MetricError> {
    let output = std::process::Command::new(cmd)
        .arg(reference)
        .arg(pred)
        .output()
        .map_err(|e| MetricError::PesqFailed { detail: format!("{cmd}: {e}") })?;
    if !output.status.success() {
        return Err(MetricError::PesqFailed { detail: format!("{cmd} exited with {}", output.status) });
    }
    let text = String::from_utf8_lossy(&output.stdout);
    text.lines()
        .last()
        .and_then(|l| l.trim().parse().ok())
        .ok_or_else(|| MetricError::PesqFailed { detail: format!("no score in `{cmd}` output") })
}

/// Evaluates one prediction WAV per manifest row.
///
/// The prediction for a row is `pred_dir/<file name of the row's binaural
/// reference>`. Per-clip metrics are followed by their unweighted mean.
pub fn evaluate_manifest(
    pred_dir: &Path,
    manifest: &Manifest,
    cfg: &EvalConfig,
) -> Result<MetricReport, MetricError> {
    let mut clips = Vec::new();
    for (i, row) in manifest.rows.iter().enumerate() {
        let name = row
            .binaural
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("row{i}"));
        let pred_path = pred_dir.join(&name);
        if !pred_path.exists() {
            return Err(MetricError::MissingPrediction { row: i + 1, path: pred_path.display().to_string() });
        }
        let reference = crate::wav::read_wav(&row.binaural)?;
        let pred = crate::wav::read_wav(&pred_path)?;
        let mut scored = score_clip(&name, &pred, &reference, cfg)?;
        if let Some(cmd) = &cfg.pesq_command {
            scored.pesq = Some(run_pesq(cmd, &row.binaural, &pred_path)?);
        }
        clips.push(scored);
    }

    let n = clips.len().max(1) as f64;
    let mean = |f: fn(&ClipMetrics) -> f64| clips.iter().map(f).sum::<f64>() / n;
    let pesq_mean = if clips.iter().all(|c| c.pesq.is_some()) && !clips.is_empty() {
        Some(clips.iter().map(|c| c.pesq.unwrap()).sum::<f64>() / n)
    } else {
        None
    };
    let aggregate = ClipMetrics {
        clip: "AGGREGATE".into(),
        wave_l2: mean(|c| c.wave_l2),
        amplitude_l2: mean(|c| c.amplitude_l2),
        phase_l2: mean(|c| c.phase_l2),
        mrstft: mean(|c| c.mrstft),
        pesq: pesq_mean,
    };
    Ok(MetricReport { clips, aggregate })
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in self.clips.iter().chain(std::iter::once(&self.aggregate)) {
            match c.pesq {
                Some(p) => out.push_str(&format!(
                    "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                    c.clip, c.wave_l2, c.amplitude_l2, c.phase_l2, c.mrstft, p
                )),
                None => out.push_str(&format!(
                    "{},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                    c.clip, c.wave_l2, c.amplitude_l2, c.phase_l2, c.mrstft
                )),
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), MetricError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_clip(seed: u64, channels: usize, n: usize) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..channels).map(|_| (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect()).collect();
        AudioClip::new(8000, rows).unwrap()
    }

    #[test]
    fn wave_l2_cases() {
        let r = noise_clip(1, 2, 64);
        assert_eq!(wave_l2(&r, &r).unwrap(), 0.0);
        let shifted = AudioClip::new(
            8000,
            r.channels().iter().map(|c| c.iter().map(|v| v + 0.1).collect()).collect(),
        )
        .unwrap();
        assert_abs_diff_eq!(wave_l2(&shifted, &r).unwrap(), 0.01, epsilon = 1e-12);

        let pred = AudioClip::stereo(8000, vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        let zero = AudioClip::stereo(8000, vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(wave_l2(&pred, &zero).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn wave_l2_matches_brute_force() {
        let a = noise_clip(2, 2, 1024);
        let b = noise_clip(3, 2, 1024);
        let mut sum = 0.0;
        let mut count = 0;
        for c in 0..2 {
            for i in 0..1024 {
                let d = a.channel(c)[i] - b.channel(c)[i];
                sum += d * d;
                count += 1;
            }
        }
        assert_abs_diff_eq!(wave_l2(&a, &b).unwrap(), sum / count as f64, epsilon = 1e-12);
    }

    #[test]
    fn stft_zero_input_gives_zero_frames() {
        let cfg = StftConfig::default();
        let s = stft(&vec![0.0; 2048], &cfg).unwrap();
        assert_eq!(s.frames.len(), 2048usize.div_ceil(cfg.hop));
        assert!(s.frames.iter().flatten().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn stft_frame_count_is_ceil() {
        let cfg = StftConfig { fft_size: 8, hop: 3, ..Default::default() };
        assert_eq!(stft(&vec![0.1; 10], &cfg).unwrap().frames.len(), 4);
    }

    #[test]
    fn rectangular_cosine_concentrates_in_bin() {
        // cos(2 pi k n / N) with a rectangular full-length window puts all
        // energy in bins k and N-k.
        let n = 64;
        let k = 5;
        let x: Vec<f64> = (0..n).map(|i| (TAU * k as f64 * i as f64 / n as f64).cos()).collect();
        let cfg = StftConfig { fft_size: n, hop: n, window: Window::Rect, center: false };
        let s = stft(&x, &cfg).unwrap();
        assert_eq!(s.frames.len(), 1);
        for (bin, z) in s.frames[0].iter().enumerate() {
            if bin == k || bin == n - k {
                assert_abs_diff_eq!(z.norm(), n as f64 / 2.0, epsilon = 1e-9);
            } else {
                assert_abs_diff_eq!(z.norm(), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn parseval_holds_per_frame() {
        let x = noise_clip(7, 1, 300);
        let cfg = StftConfig { fft_size: 128, hop: 64, ..Default::default() };
        let s = stft(x.channel(0), &cfg).unwrap();
        let window = window_values(&cfg);
        for (f, frame) in s.frames.iter().enumerate() {
            let start = (f * cfg.hop) as isize - (cfg.fft_size / 2) as isize;
            let time_energy: f64 = (0..cfg.fft_size)
                .map(|i| {
                    let v = reflect_read(x.channel(0), start + i as isize) * window[i];
                    v * v
                })
                .sum();
            let freq_energy: f64 = frame.iter().map(|z| z.norm_sqr()).sum();
            assert_abs_diff_eq!(freq_energy, cfg.fft_size as f64 * time_energy, epsilon = 1e-9 * (1.0 + freq_energy));
        }
    }

    #[test]
    fn metrics_vanish_on_identical_clips() {
        let r = noise_clip(4, 2, 2000);
        let cfg = StftConfig::default();
        assert_eq!(wave_l2(&r, &r).unwrap(), 0.0);
        let (a, p) = amplitude_phase_l2(&r, &r, &cfg).unwrap();
        assert_eq!((a, p), (0.0, 0.0));
        assert_eq!(mrstft(&r, &r, &DEFAULT_MRSTFT_RESOLUTIONS).unwrap(), 0.0);
    }

    #[test]
    fn sign_flip_gives_zero_amplitude_and_pi_squared_phase() {
        let r = noise_clip(5, 1, 1500);
        let flipped = AudioClip::mono(8000, r.channel(0).iter().map(|v| -v).collect());
        let cfg = StftConfig::default();
        let (amp, phase) = amplitude_phase_l2(&flipped, &r, &cfg).unwrap();
        assert_abs_diff_eq!(amp, 0.0, epsilon = 1e-18);

        // Expected: pi^2 on bins where the reference is active, 0 elsewhere.
        let s = stft(r.channel(0), &cfg).unwrap();
        let (mut active, mut total) = (0usize, 0usize);
        for frame in &s.frames {
            for z in frame {
                if z.norm() >= PHASE_SILENCE_FLOOR {
                    active += 1;
                }
                total += 1;
            }
        }
        let expected = PI * PI * active as f64 / total as f64;
        assert_abs_diff_eq!(phase, expected, epsilon = 1e-9);
    }

    #[test]
    fn doubling_gives_zero_phase_and_ref_power_amplitude() {
        let r = noise_clip(6, 1, 1200);
        let doubled = AudioClip::mono(8000, r.channel(0).iter().map(|v| 2.0 * v).collect());
        let cfg = StftConfig::default();
        let (amp, phase) = amplitude_phase_l2(&doubled, &r, &cfg).unwrap();
        assert_abs_diff_eq!(phase, 0.0, epsilon = 1e-18);
        // |2R| - |R| = |R|, so amplitude_l2 = mean(|R|^2).
        let s = stft(r.channel(0), &cfg).unwrap();
        let mut sum = 0.0;
        let mut count = 0usize;
        for frame in &s.frames {
            for z in frame {
                sum += z.norm_sqr();
                count += 1;
            }
        }
        assert_abs_diff_eq!(amp, sum / count as f64, epsilon = 1e-9 * (1.0 + sum));
    }

    #[test]
    fn phase_wrap_invariance() {
        for d in [-7.5f64, -3.2, 0.0, 3.0, 9.9] {
            let w1 = wrap_phase(d);
            let w2 = wrap_phase(d + TAU);
            assert_abs_diff_eq!(w1, w2, epsilon = 1e-12);
            assert!(w1 > -PI - 1e-12 && w1 <= PI + 1e-12);
        }
        assert_abs_diff_eq!(wrap_phase(PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_phase(-PI), PI, epsilon = 1e-15);
    }

    #[test]
    fn mrstft_zero_prediction_has_unit_spectral_convergence() {
        let r = noise_clip(8, 1, 2048);
        let zero = AudioClip::mono(8000, vec![0.0; 2048]);
        let terms = mrstft_breakdown(&zero, &r, &DEFAULT_MRSTFT_RESOLUTIONS).unwrap();
        for t in &terms {
            assert_abs_diff_eq!(t.spectral_convergence, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mrstft_is_scale_sensitive() {
        let r = noise_clip(9, 1, 2048);
        let doubled = AudioClip::mono(8000, r.channel(0).iter().map(|v| 2.0 * v).collect());
        let terms = mrstft_breakdown(&doubled, &r, &DEFAULT_MRSTFT_RESOLUTIONS).unwrap();
        for t in &terms {
            assert_abs_diff_eq!(t.spectral_convergence, 1.0, epsilon = 1e-12);
        }
        assert!(mrstft(&doubled, &r, &DEFAULT_MRSTFT_RESOLUTIONS).unwrap() > 0.0);
    }

    #[test]
    fn silent_reference_rejected() {
        let zero = AudioClip::mono(8000, vec![0.0; 1024]);
        let pred = noise_clip(10, 1, 1024);
        assert!(matches!(
            mrstft(&pred, &zero, &DEFAULT_MRSTFT_RESOLUTIONS),
            Err(MetricError::SilentReference)
        ));
    }

    #[test]
    fn mrstft_decreases_toward_reference() {
        // Interpolating from noise toward the reference should not increase
        // the loss (allowing one inversion).
        let r = noise_clip(11, 1, 2048);
        let start = noise_clip(12, 1, 2048);
        let mut values = Vec::new();
        for k in 0..5 {
            let t = k as f64 / 4.0;
            let mixed = AudioClip::mono(
                8000,
                start.channel(0).iter().zip(r.channel(0)).map(|(a, b)| (1.0 - t) * a + t * b).collect(),
            );
            values.push(mrstft(&mixed, &r, &DEFAULT_MRSTFT_RESOLUTIONS).unwrap());
        }
        let inversions = values.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
        assert!(inversions <= 1, "values not mostly decreasing: {values:?}");
    }

    #[test]
    fn spectral_flatness_orders_noise_above_tone() {
        let n = 1024;
        let tone: Vec<f64> = (0..n).map(|i| (TAU * 13.0 * i as f64 / n as f64).sin()).collect();
        let noise = noise_clip(13, 1, n);
        let f_tone = spectral_flatness(&periodogram(&tone));
        let f_noise = spectral_flatness(&periodogram(noise.channel(0)));
        assert!(f_noise > f_tone * 10.0);
    }
}
