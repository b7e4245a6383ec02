//! Two-stage training and inference orchestration.
//!
//! The common stage trains a single-channel denoiser whose clean data is
//! the channel average of the binaural recording; the specific stage trains
//! a two-channel denoiser on the binaural channels. At inference the first
//! stage's output replaces the golden average in the second stage's
//! condition, an asymmetry that is deliberate and logged.

use crate::audio::{AudioClip, AudioError};
use crate::dataset::{DatasetError, Manifest};
use crate::diffusion::{
    draw_noise, forward_sample, sample, training_loss_and_grad, DiffusionError, NoiseSchedule,
};
use crate::net::{
    adam_step, backward, forward, save_checkpoint, AdamConfig, AdamState, DenoiserParams,
    FeatureMap, NetConfig, NetError, PaddingMode,
};
use crate::pose::PoseTrack;
use crate::warp::{warp_binaural, WarpError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StageError {
    #[error("stage 2 needs a fourth conditioning channel (golden average or stage-1 output)")]
    MissingStage2Conditioner,
    #[error("length mismatch: {context}")]
    LengthMismatch { context: String },
    #[error("stage config mismatch for {which}: field `{field}`")]
    StageConfigMismatch { which: &'static str, field: &'static str },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("clips disagree on sample rate: {a} vs {b}")]
    MixedSampleRates { a: u32, b: u32 },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which half of the framework a model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Generates the channel-shared mono part.
    Common,
    /// Generates the left/right channels.
    Specific,
}

impl Stage {
    /// Channels of the clean data this stage models.
    pub fn target_channels(self) -> usize {
        match self {
            Stage::Common => 1,
            Stage::Specific => 2,
        }
    }

    pub fn cond_audio_channels(self) -> usize {
        match self {
            Stage::Common => 2,
            Stage::Specific => 4,
        }
    }

    pub fn net_config(self, topo: &NetTopology) -> NetConfig {
        NetConfig {
            residual_blocks: topo.residual_blocks,
            layers_per_block: topo.layers_per_block,
            hidden: topo.hidden,
            in_channels: self.target_channels(),
            out_channels: self.target_channels(),
            cond_audio_channels: self.cond_audio_channels(),
            cond_pos_channels: POS_CHANNELS,
            step_embed_dim: topo.step_embed_dim,
            dilation_cycle: topo.dilation_cycle,
            padding: PaddingMode::Zero,
            linear_conditioner: false,
        }
    }

    /// The stage a checkpoint's config belongs to, if consistent.
    pub fn of_config(cfg: &NetConfig) -> Option<Stage> {
        for stage in [Stage::Common, Stage::Specific] {
            if cfg.in_channels == stage.target_channels()
                && cfg.out_channels == stage.target_channels()
                && cfg.cond_audio_channels == stage.cond_audio_channels()
            {
                return Some(stage);
            }
        }
        None
    }
}

/// Architecture sizes shared by both stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetTopology {
    pub residual_blocks: usize,
    pub layers_per_block: usize,
    pub hidden: usize,
    pub step_embed_dim: usize,
    pub dilation_cycle: usize,
}

/// Position channels fed to the conditioner: p_s (3) + p_alpha (4).
pub const POS_CHANNELS: usize = 7;

/// Per-sample conditioning arrays at audio rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSet {
    pub pos: FeatureMap,
    pub cond_audio: FeatureMap,
}

/// Raw per-sample position channels: px, py, pz, qx, qy, qz, qw.
fn pos_channels(track: &PoseTrack) -> FeatureMap {
    let n = track.len();
    let mut pos = FeatureMap::zeros(POS_CHANNELS, n);
    for (i, s) in track.samples.iter().enumerate() {
        pos.row_mut(0)[i] = s.position.x;
        pos.row_mut(1)[i] = s.position.y;
        pos.row_mut(2)[i] = s.position.z;
        pos.row_mut(3)[i] = s.orientation.x;
        pos.row_mut(4)[i] = s.orientation.y;
        pos.row_mut(5)[i] = s.orientation.z;
        pos.row_mut(6)[i] = s.orientation.w;
    }
    pos
}

/// Assembles the conditioning arrays for a stage.
///
/// Stage 1: audio channels [mean(x_warp_l, x_warp_r), x]. Stage 2: channels
/// [x_warp_l, x_warp_r, x, extra] where `extra` is the golden average while
/// training and the stage-1 output at inference.
pub fn build_condition(
    stage: Stage,
    x: &AudioClip,
    track: &PoseTrack,
    extra: Option<&AudioClip>,
    speed_of_sound: f64,
) -> Result<ConditionSet, StageError> {
    let n = x.len();
    let at_rate = track.resample(x.sample_rate() as f64, n)?;
    let warped = warp_binaural(x, &at_rate, x.sample_rate(), speed_of_sound)?;

    let cond_audio = match stage {
        Stage::Common => {
            let mean = warped.channel_average()?;
            FeatureMap::from_rows(&[mean.channel(0).to_vec(), x.channel(0).to_vec()])
        }
        Stage::Specific => {
            let extra = extra.ok_or(StageError::MissingStage2Conditioner)?;
            if extra.channel_count() != 1 || extra.len() != n {
                return Err(StageError::LengthMismatch {
                    context: format!(
                        "stage-2 conditioner: {} channel(s) x {}, expected 1 x {n}",
                        extra.channel_count(),
                        extra.len()
                    ),
                });
            }
            FeatureMap::from_rows(&[
                warped.channel(0).to_vec(),
                warped.channel(1).to_vec(),
                x.channel(0).to_vec(),
                extra.channel(0).to_vec(),
            ])
        }
    };
    Ok(ConditionSet { pos: pos_channels(&at_rate), cond_audio })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEntry {
    pub step: usize,
    pub loss: f64,
}

/// Writes a loss log as `step,loss` lines.
pub fn write_loss_log(log: &[LossEntry], path: &Path) -> Result<(), StageError> {
    let mut text = String::new();
    for e in log {
        text.push_str(&format!("{},{:.12e}\n", e.step, e.loss));
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub steps: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub speed_of_sound: f64,
    /// Lateral ear offset applied to loaded pose tracks, meters.
    pub ear_offset: f64,
}

struct PreparedClip {
    target: Vec<Vec<f64>>,
    condition: ConditionSet,
    n: usize,
}

/// Ear offsets for a lateral offset in meters (right ear at +offset).
pub fn ear_offsets(offset: f64) -> [crate::geometry::Vec3; 2] {
    [
        crate::geometry::Vec3::new(0.0, -offset, 0.0),
        crate::geometry::Vec3::new(0.0, offset, 0.0),
    ]
}

fn prepare_clips(
    stage: Stage,
    manifest: &Manifest,
    speed_of_sound: f64,
    ear_offset: f64,
) -> Result<(Vec<PreparedClip>, u32), StageError> {
    if manifest.is_empty() {
        return Err(StageError::EmptyDataset);
    }
    let mut clips = Vec::with_capacity(manifest.len());
    let mut rate: Option<u32> = None;
    for row in &manifest.rows {
        let x = crate::wav::read_wav(&row.mono)?;
        let mut track = crate::pose::read_pose_csv(&row.pose)?;
        track.ear_offsets = ear_offsets(ear_offset);
        let y = crate::wav::read_wav(&row.binaural)?;
        if y.channel_count() != 2 || y.len() != x.len() {
            return Err(StageError::LengthMismatch {
                context: format!(
                    "binaural {:?}: {} channel(s) x {}, mono is {}",
                    row.binaural,
                    y.channel_count(),
                    y.len(),
                    x.len()
                ),
            });
        }
        match rate {
            None => rate = Some(x.sample_rate()),
            Some(r) if r != x.sample_rate() => {
                return Err(StageError::MixedSampleRates { a: r, b: x.sample_rate() })
            }
            _ => {}
        }
        let ybar = y.channel_average()?;
        let (target, condition) = match stage {
            Stage::Common => (
                vec![ybar.channel(0).to_vec()],
                build_condition(stage, &x, &track, None, speed_of_sound)?,
            ),
            Stage::Specific => (
                y.channels().to_vec(),
                build_condition(stage, &x, &track, Some(&ybar), speed_of_sound)?,
            ),
        };
        clips.push(PreparedClip { n: x.len(), target, condition });
    }
    Ok((clips, rate.expect("manifest nonempty")))
}

/// Trains one stage: each step corrupts a whole clip's target at a uniform
/// random step and regresses the injected noise. Deterministic given the
/// seed; returns the per-step loss log and writes the checkpoint.
pub fn train_stage(
    stage: Stage,
    manifest: &Manifest,
    topology: &NetTopology,
    schedule: &NoiseSchedule,
    options: &TrainOptions,
    out_checkpoint: &Path,
) -> Result<Vec<LossEntry>, StageError> {
    let (clips, _) = prepare_clips(stage, manifest, options.speed_of_sound, options.ear_offset)?;
    let net_cfg = stage.net_config(topology);
    let mut params = DenoiserParams::init(&net_cfg, options.seed)?;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let channels = stage.target_channels();

    let mut log = Vec::with_capacity(options.steps);
    for step in 0..options.steps {
        let clip = &clips[rng.gen_range(0..clips.len())];
        let t = rng.gen_range(1..=schedule.steps());
        let eps = draw_noise(&mut rng, channels, clip.n);
        let z_t = forward_sample(&clip.target, t, &eps, schedule)?;
        let z_t_map = FeatureMap::from_rows(&z_t);
        let (pred, ctx) = forward(&params, &z_t_map, t, &clip.condition.pos, &clip.condition.cond_audio)?;
        let (loss, d_pred) = training_loss_and_grad(&eps, &pred.to_rows())?;
        let grads = backward(&params, ctx, &FeatureMap::from_rows(&d_pred))?;
        adam_step(&mut params, &grads, &mut adam, &options.adam)?;
        log.push(LossEntry { step, loss });
    }

    save_checkpoint(&params, out_checkpoint)?;
    Ok(log)
}

fn expect_stage(params: &DenoiserParams, stage: Stage, which: &'static str) -> Result<(), StageError> {
    let cfg = params.config();
    if cfg.in_channels != stage.target_channels() || cfg.out_channels != stage.target_channels() {
        return Err(StageError::StageConfigMismatch { which, field: "in_channels/out_channels" });
    }
    if cfg.cond_audio_channels != stage.cond_audio_channels() {
        return Err(StageError::StageConfigMismatch { which, field: "cond_audio_channels" });
    }
    Ok(())
}

/// Runs the reverse process for one stage. `train_schedule` provides the
/// step embeddings; each inference step is mapped to the training step with
/// the closest alpha_bar.
fn run_stage<R: Rng>(
    params: &DenoiserParams,
    condition: &ConditionSet,
    train_schedule: &NoiseSchedule,
    infer_schedule: &NoiseSchedule,
    channels: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, StageError> {
    let t_map: Vec<usize> = (1..=infer_schedule.steps())
        .map(|s| train_schedule.nearest_step_by_alpha_bar(infer_schedule.alpha_bar(s)))
        .collect();
    let out = sample(
        |state| {
            let z = FeatureMap::from_rows(&state.z);
            let t_embed = t_map[state.t - 1];
            let (pred, _ctx) = forward(params, &z, t_embed, &condition.pos, &condition.cond_audio)?;
            Ok::<_, StageError>(pred.to_rows())
        },
        infer_schedule,
        channels,
        n,
        rng,
    )?;
    Ok(out)
}

/// Stage 1 alone: generates the mono common part from the mono input.
pub fn synthesize_common<R: Rng>(
    x: &AudioClip,
    track: &PoseTrack,
    params: &DenoiserParams,
    train_schedule: &NoiseSchedule,
    infer_schedule: &NoiseSchedule,
    speed_of_sound: f64,
    rng: &mut R,
) -> Result<AudioClip, StageError> {
    expect_stage(params, Stage::Common, "stage-1 checkpoint")?;
    let cond = build_condition(Stage::Common, x, track, None, speed_of_sound)?;
    let out = run_stage(params, &cond, train_schedule, infer_schedule, 1, x.len(), rng)?;
    Ok(AudioClip::mono(x.sample_rate(), out.into_iter().next().expect("one channel")))
}

/// Stage 2 alone, conditioned on an explicit mono stand-in for the common
/// part (the stage-1 output in production; the golden average in probes).
pub fn synthesize_specific<R: Rng>(
    x: &AudioClip,
    track: &PoseTrack,
    common: &AudioClip,
    params: &DenoiserParams,
    train_schedule: &NoiseSchedule,
    infer_schedule: &NoiseSchedule,
    speed_of_sound: f64,
    rng: &mut R,
) -> Result<AudioClip, StageError> {
    expect_stage(params, Stage::Specific, "stage-2 checkpoint")?;
    let cond = build_condition(Stage::Specific, x, track, Some(common), speed_of_sound)?;
    let out = run_stage(params, &cond, train_schedule, infer_schedule, 2, x.len(), rng)?;
    let mut rows = out.into_iter();
    Ok(AudioClip::stereo(x.sample_rate(), rows.next().unwrap(), rows.next().unwrap())?)
}

/// Full inference: the common stage generates y_c, then the specific stage
/// generates the binaural output conditioned on it. Reads nothing but the
/// supplied inputs, so golden data cannot leak in.
pub fn synthesize(
    x: &AudioClip,
    track: &PoseTrack,
    params_common: &DenoiserParams,
    params_specific: &DenoiserParams,
    train_schedule: &NoiseSchedule,
    infer_schedule: &NoiseSchedule,
    speed_of_sound: f64,
    seed: u64,
) -> Result<AudioClip, StageError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y_c = synthesize_common(x, track, params_common, train_schedule, infer_schedule, speed_of_sound, &mut rng)?;
    synthesize_specific(x, track, &y_c, params_specific, train_schedule, infer_schedule, speed_of_sound, &mut rng)
}
