//! Synthetic paired datasets: mono source, pose track, and DSP-rendered
//! binaural ground truth, listed in a line-oriented manifest.
//!
//! Manifest rows are `mono_path,pose_path,binaural_path`, relative to the
//! manifest's directory. Generation is bit-reproducible from the seed.

use crate::audio::AudioClip;
use crate::dsp::{dsp_render_binaural, DspError, HrtfBank, ShoeboxRoom};
use crate::geometry::{Quat, Vec3};
use crate::pose::{PoseSample, PoseTrack};
use crate::wav::{write_wav, WavEncoding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest row {row} is malformed: `{line}`")]
    BadManifestRow { row: usize, line: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample rate {0} exceeds the 48 kHz ceiling")]
    RateTooHigh(u32),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub seed: u64,
    pub n_clips: usize,
    pub clip_samples: usize,
    pub sample_rate: u32,
    pub speed_of_sound: f64,
    /// Lateral ear offset in meters.
    pub ear_offset: f64,
    pub room: Option<ShoeboxRoom>,
}

/// One dataset triple, with paths resolved against the manifest directory.
#[derive(Debug, Clone)]
pub struct ManifestRow {
    pub mono: PathBuf,
    pub pose: PathBuf,
    pub binaural: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(DatasetError::BadManifestRow { row: i + 1, line: line.to_string() });
            }
            rows.push(ManifestRow {
                mono: base.join(parts[0].trim()),
                pose: base.join(parts[1].trim()),
                binaural: base.join(parts[2].trim()),
            });
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Generates `n_clips` triples under `out_dir` and returns the manifest path.
pub fn make_synthetic_dataset(
    spec: &DatasetSpec,
    hrtf_bank: &HrtfBank,
    out_dir: &Path,
) -> Result<PathBuf, DatasetError> {
    if spec.sample_rate > 48_000 {
        return Err(DatasetError::RateTooHigh(spec.sample_rate));
    }
    fs::create_dir_all(out_dir)?;
    let mut manifest = String::new();
    for i in 0..spec.n_clips {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1)));
        let mono = synth_mono(&mut rng, i, spec.clip_samples, spec.sample_rate);
        let mut track = synth_track(&mut rng, spec.clip_samples, spec.sample_rate);
        track.ear_offsets = crate::stages::ear_offsets(spec.ear_offset);
        let binaural = dsp_render_binaural(&mono, &track, hrtf_bank, spec.room.as_ref(), spec.speed_of_sound)?;

        let mono_name = format!("clip_{i:03}_mono.wav");
        let pose_name = format!("clip_{i:03}_pose.csv");
        let binaural_name = format!("clip_{i:03}_binaural.wav");
        write_wav(&mono, &out_dir.join(&mono_name), WavEncoding::Float32)?;
        crate::pose::write_pose_csv(&track, &out_dir.join(&pose_name))?;
        write_wav(&binaural, &out_dir.join(&binaural_name), WavEncoding::Float32)?;
        manifest.push_str(&format!("{mono_name},{pose_name},{binaural_name}\n"));
    }
    let manifest_path = out_dir.join(MANIFEST_NAME);
    fs::write(&manifest_path, manifest)?;
    Ok(manifest_path)
}

/// Deterministic mono sources: tone complexes on even clips, filtered noise
/// bursts on odd ones. Peak-normalized to 0.5.
fn synth_mono(rng: &mut ChaCha8Rng, index: usize, n: usize, sample_rate: u32) -> AudioClip {
    let fs = sample_rate as f64;
    let mut samples = vec![0.0f64; n];
    if index % 2 == 0 {
        let f0 = rng.gen_range(90.0..280.0);
        let harmonics = 4;
        let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        for (t, s) in samples.iter_mut().enumerate() {
            let time = t as f64 / fs;
            for (k, phase) in phases.iter().enumerate() {
                let f = f0 * (k + 1) as f64;
                *s += (std::f64::consts::TAU * f * time + phase).sin() / (k + 1) as f64;
            }
            // Soft attack/decay envelope over the whole clip.
            let u = t as f64 / n.max(1) as f64;
            *s *= (std::f64::consts::PI * u).sin().powf(0.5);
        }
    } else {
        let bursts = 3;
        let mut lp = 0.0;
        let pole = rng.gen_range(0.6..0.9);
        let burst_len = n / (bursts * 2).max(1);
        for _ in 0..bursts {
            let start = rng.gen_range(0..n.saturating_sub(burst_len).max(1));
            for t in start..(start + burst_len).min(n) {
                let white: f64 = rng.gen_range(-1.0..1.0);
                lp = pole * lp + (1.0 - pole) * white;
                let u = (t - start) as f64 / burst_len.max(1) as f64;
                samples[t] += lp * (std::f64::consts::PI * u).sin();
            }
        }
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let k = 0.5 / peak;
        for s in &mut samples {
            *s *= k;
        }
    }
    AudioClip::mono(sample_rate, samples)
}

/// Deterministic circular-arc motion with a slow head yaw, tracked at 120 Hz.
fn synth_track(rng: &mut ChaCha8Rng, clip_samples: usize, sample_rate: u32) -> PoseTrack {
    let duration = clip_samples as f64 / sample_rate as f64;
    let pose_rate = 120.0;
    let n_rows = (duration * pose_rate).ceil() as usize + 2;

    let radius = rng.gen_range(0.9..1.8);
    let theta0 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let omega = rng.gen_range(-0.6..0.6);
    let height = rng.gen_range(-0.3..0.3);
    let yaw_rate = rng.gen_range(-0.3..0.3);

    let samples = (0..n_rows)
        .map(|i| {
            let t = i as f64 / pose_rate;
            let theta = theta0 + omega * t;
            PoseSample {
                position: Vec3::new(radius * theta.cos(), radius * theta.sin(), height),
                orientation: Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), yaw_rate * t),
            }
        })
        .collect();
    PoseTrack::new(pose_rate, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::synthetic_hrtf_bank;

    fn spec(n_clips: usize) -> DatasetSpec {
        DatasetSpec {
            seed: 42,
            n_clips,
            clip_samples: 2000,
            sample_rate: 8000,
            speed_of_sound: 343.0,
            ear_offset: 0.09,
            room: Some(ShoeboxRoom { dimensions: Vec3::new(6.0, 5.0, 3.0), absorption: 0.6, max_order: 1 }),
        }
    }

    #[test]
    fn four_clips_make_twelve_files_plus_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let (bank, _) = synthetic_hrtf_bank(8000, 8);
        let manifest = make_synthetic_dataset(&spec(4), &bank, dir.path()).unwrap();
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 13);
        let m = Manifest::read(&manifest).unwrap();
        assert_eq!(m.len(), 4);
        for row in &m.rows {
            assert!(row.mono.exists() && row.pose.exists() && row.binaural.exists());
        }
    }

    #[test]
    fn zero_clips_make_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let (bank, _) = synthetic_hrtf_bank(8000, 8);
        let manifest = make_synthetic_dataset(&spec(0), &bank, dir.path()).unwrap();
        assert!(Manifest::read(&manifest).unwrap().is_empty());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let (bank, _) = synthetic_hrtf_bank(8000, 8);
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let mut all_bytes: Vec<Vec<u8>> = Vec::new();
        for dir in &dirs {
            make_synthetic_dataset(&spec(2), &bank, dir.path()).unwrap();
            let mut names: Vec<_> = std::fs::read_dir(dir.path())
                .unwrap()
                .map(|e| e.unwrap().file_name().into_string().unwrap())
                .collect();
            names.sort();
            let blob = names
                .iter()
                .flat_map(|n| std::fs::read(dir.path().join(n)).unwrap())
                .collect();
            all_bytes.push(blob);
        }
        assert_eq!(all_bytes[0], all_bytes[1]);
    }

    #[test]
    fn rate_ceiling_enforced() {
        let (bank, _) = synthetic_hrtf_bank(8000, 8);
        let mut s = spec(1);
        s.sample_rate = 96_000;
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            make_synthetic_dataset(&s, &bank, dir.path()),
            Err(DatasetError::RateTooHigh(96_000))
        ));
    }

    #[test]
    fn malformed_manifest_row_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_NAME);
        std::fs::write(&p, "a.wav,b.csv\n").unwrap();
        assert!(matches!(Manifest::read(&p), Err(DatasetError::BadManifestRow { row: 1, .. })));
    }
}
