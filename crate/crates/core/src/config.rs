//! Run configuration: a TOML file of sections with typed scalars.
//!
//! A config may name a `profile` ("paper" or "toy") that seeds every value;
//! explicit keys then override it. Unknown keys anywhere are hard errors.
//! The paper profile documents the full-scale setup (48 kHz, 3x10x128 net)
//! and is not meant to be trained on a desktop; the toy profile is what the
//! test suites run.

use crate::dataset::DatasetSpec;
use crate::diffusion::{DiffusionError, NoiseSchedule, ScheduleKind};
use crate::dsp::{synthetic_hrtf_bank, DspError, HrtfBank, ShoeboxRoom};
use crate::geometry::Vec3;
use crate::metrics::{EvalConfig, StftConfig, Window, DEFAULT_MRSTFT_RESOLUTIONS};
use crate::net::AdamConfig;
use crate::stages::{NetTopology, TrainOptions};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown profile `{0}` (expected `paper` or `toy`)")]
    UnknownProfile(String),
    #[error("bad config value for {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    Schedule(#[from] DiffusionError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSection {
    pub sample_rate: u32,
    pub speed_of_sound: f64,
    /// Lateral ear offset in meters; right ear sits at +offset on the right
    /// axis.
    pub ear_offset: f64,
}

impl AudioSection {
    pub fn ear_offsets(&self) -> [Vec3; 2] {
        [Vec3::new(0.0, -self.ear_offset, 0.0), Vec3::new(0.0, self.ear_offset, 0.0)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSection {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub inference_betas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSection {
    pub fft_size: usize,
    pub hop: usize,
    pub mrstft_resolutions: Vec<(usize, usize)>,
    pub pesq_command: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSection {
    pub n_clips: usize,
    pub clip_seconds: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomSection {
    pub enabled: bool,
    pub dimensions: [f64; 3],
    pub absorption: f64,
    pub max_order: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathsSection {
    /// Directory of az/el WAV pairs; empty means the built-in generic bank.
    pub hrtf_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub audio: AudioSection,
    pub schedule: ScheduleSection,
    pub net: NetTopology,
    pub train: TrainSection,
    pub metrics: MetricsSection,
    pub dataset: DatasetSection,
    pub room: RoomSection,
    pub paths: PathsSection,
}

pub const DEFAULT_INFERENCE_BETAS: [f64; 6] = [1e-4, 1e-3, 1e-2, 5e-2, 2e-1, 5e-1];

impl RunConfig {
    /// Built-in profile defaults.
    pub fn profile(name: &str) -> Result<Self, ConfigError> {
        let common_schedule = ScheduleSection {
            train_steps: 200,
            beta_start: 1e-4,
            beta_end: 0.05,
            inference_betas: DEFAULT_INFERENCE_BETAS.to_vec(),
        };
        match name {
            "paper" => Ok(Self {
                audio: AudioSection { sample_rate: 48_000, speed_of_sound: 343.0, ear_offset: 0.09 },
                schedule: common_schedule,
                net: NetTopology {
                    residual_blocks: 3,
                    layers_per_block: 10,
                    hidden: 128,
                    step_embed_dim: 128,
                    dilation_cycle: 10,
                },
                train: TrainSection { lr: 2e-4, steps: 1_000_000, seed: 0 },
                metrics: MetricsSection {
                    fft_size: 1024,
                    hop: 256,
                    mrstft_resolutions: DEFAULT_MRSTFT_RESOLUTIONS.to_vec(),
                    pesq_command: None,
                },
                dataset: DatasetSection { n_clips: 8, clip_seconds: 2.0, seed: 7 },
                room: RoomSection { enabled: true, dimensions: [6.0, 5.0, 3.0], absorption: 0.6, max_order: 1 },
                paths: PathsSection::default(),
            }),
            "toy" => Ok(Self {
                audio: AudioSection { sample_rate: 8000, speed_of_sound: 343.0, ear_offset: 0.09 },
                schedule: common_schedule,
                net: NetTopology {
                    residual_blocks: 1,
                    layers_per_block: 3,
                    hidden: 16,
                    step_embed_dim: 16,
                    dilation_cycle: 10,
                },
                train: TrainSection { lr: 2e-4, steps: 3000, seed: 17 },
                metrics: MetricsSection {
                    fft_size: 1024,
                    hop: 256,
                    mrstft_resolutions: DEFAULT_MRSTFT_RESOLUTIONS.to_vec(),
                    pesq_command: None,
                },
                dataset: DatasetSection { n_clips: 4, clip_seconds: 1.0, seed: 7 },
                room: RoomSection { enabled: true, dimensions: [6.0, 5.0, 3.0], absorption: 0.6, max_order: 1 },
                paths: PathsSection::default(),
            }),
            other => Err(ConfigError::UnknownProfile(other.to_string())),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut cfg = Self::profile(raw.profile.as_deref().unwrap_or("toy"))?;
        raw.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.audio.sample_rate == 0 {
            return Err(ConfigError::Invalid { field: "audio.sample_rate", reason: "must be positive".into() });
        }
        if self.audio.speed_of_sound <= 0.0 {
            return Err(ConfigError::Invalid { field: "audio.speed_of_sound", reason: "must be positive".into() });
        }
        if self.dataset.clip_seconds <= 0.0 {
            return Err(ConfigError::Invalid { field: "dataset.clip_seconds", reason: "must be positive".into() });
        }
        // Schedule ranges are validated by construction below.
        self.train_schedule()?;
        self.inference_schedule()?;
        Ok(())
    }

    pub fn train_schedule(&self) -> Result<NoiseSchedule, DiffusionError> {
        NoiseSchedule::make(
            ScheduleKind::Linear,
            self.schedule.train_steps,
            self.schedule.beta_start,
            self.schedule.beta_end,
        )
    }

    pub fn inference_schedule(&self) -> Result<NoiseSchedule, DiffusionError> {
        NoiseSchedule::from_betas(self.schedule.inference_betas.clone())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            steps: self.train.steps,
            seed: self.train.seed,
            adam: AdamConfig { lr: self.train.lr, ..AdamConfig::default() },
            speed_of_sound: self.audio.speed_of_sound,
            ear_offset: self.audio.ear_offset,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            stft: StftConfig {
                fft_size: self.metrics.fft_size,
                hop: self.metrics.hop,
                window: Window::Hann,
                center: true,
            },
            mrstft_resolutions: self.metrics.mrstft_resolutions.clone(),
            pesq_command: self.metrics.pesq_command.clone(),
        }
    }

    pub fn shoebox_room(&self) -> Option<ShoeboxRoom> {
        if !self.room.enabled {
            return None;
        }
        Some(ShoeboxRoom {
            dimensions: Vec3::new(self.room.dimensions[0], self.room.dimensions[1], self.room.dimensions[2]),
            absorption: self.room.absorption,
            max_order: self.room.max_order,
        })
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.dataset.seed,
            n_clips: self.dataset.n_clips,
            clip_samples: (self.dataset.clip_seconds * self.audio.sample_rate as f64).round() as usize,
            sample_rate: self.audio.sample_rate,
            speed_of_sound: self.audio.speed_of_sound,
            ear_offset: self.audio.ear_offset,
            room: self.shoebox_room(),
        }
    }

    /// Loads the configured HRTF bank, or synthesizes the built-in one.
    pub fn hrtf_bank(&self) -> Result<HrtfBank, ConfigError> {
        match &self.paths.hrtf_dir {
            Some(dir) if !dir.as_os_str().is_empty() => Ok(HrtfBank::load_dir(dir)?),
            _ => Ok(synthetic_hrtf_bank(self.audio.sample_rate, 16).0),
        }
    }
}

// Raw mirror structs: every field optional, unknown keys rejected.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    profile: Option<String>,
    audio: Option<RawAudio>,
    schedule: Option<RawSchedule>,
    net: Option<RawNet>,
    train: Option<RawTrain>,
    metrics: Option<RawMetrics>,
    dataset: Option<RawDataset>,
    room: Option<RawRoom>,
    paths: Option<RawPaths>,
}

macro_rules! apply_fields {
    ($raw:expr, $dst:expr, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $raw.$field.clone() { $dst.$field = v; })+
    };
}

impl RawConfig {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(a) = &self.audio {
            apply_fields!(a, cfg.audio, sample_rate, speed_of_sound, ear_offset);
        }
        if let Some(s) = &self.schedule {
            apply_fields!(s, cfg.schedule, train_steps, beta_start, beta_end, inference_betas);
        }
        if let Some(n) = &self.net {
            apply_fields!(n, cfg.net, residual_blocks, layers_per_block, hidden, step_embed_dim, dilation_cycle);
        }
        if let Some(t) = &self.train {
            apply_fields!(t, cfg.train, lr, steps, seed);
        }
        if let Some(m) = &self.metrics {
            apply_fields!(m, cfg.metrics, fft_size, hop);
            if let Some(v) = &m.mrstft_resolutions {
                cfg.metrics.mrstft_resolutions = v.iter().map(|r| (r[0], r[1])).collect();
            }
            if let Some(v) = &m.pesq_command {
                cfg.metrics.pesq_command = Some(v.clone());
            }
        }
        if let Some(d) = &self.dataset {
            apply_fields!(d, cfg.dataset, n_clips, clip_seconds, seed);
        }
        if let Some(r) = &self.room {
            apply_fields!(r, cfg.room, enabled, dimensions, absorption, max_order);
        }
        if let Some(p) = &self.paths {
            if let Some(v) = &p.hrtf_dir {
                cfg.paths.hrtf_dir = if v.as_os_str().is_empty() { None } else { Some(v.clone()) };
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAudio {
    sample_rate: Option<u32>,
    speed_of_sound: Option<f64>,
    ear_offset: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    train_steps: Option<usize>,
    beta_start: Option<f64>,
    beta_end: Option<f64>,
    inference_betas: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNet {
    residual_blocks: Option<usize>,
    layers_per_block: Option<usize>,
    hidden: Option<usize>,
    step_embed_dim: Option<usize>,
    dilation_cycle: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    lr: Option<f64>,
    steps: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetrics {
    fft_size: Option<usize>,
    hop: Option<usize>,
    mrstft_resolutions: Option<Vec<[usize; 2]>>,
    pesq_command: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    n_clips: Option<usize>,
    clip_seconds: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRoom {
    enabled: Option<bool>,
    dimensions: Option<[f64; 3]>,
    absorption: Option<f64>,
    max_order: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPaths {
    hrtf_dir: Option<PathBuf>,
}
