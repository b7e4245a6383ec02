//! Classical DSP binaural rendering: fractional delay plus FIR filtering
//! with room and head impulse responses.
//!
//! Also the ground-truth generator for synthetic datasets: the rendered
//! output is taken as the "recorded" binaural signal.

use crate::audio::AudioClip;
use crate::geometry::Vec3;
use crate::pose::{Ear, PoseTrack};
use crate::warp::{apply_warp, compute_warpfield, WarpError};
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("sample rate mismatch: signal {signal} Hz, impulse response {ir} Hz")]
    RateMismatch { signal: u32, ir: u32 },
    #[error("{which} point lies outside the room")]
    PointOutsideRoom { which: &'static str },
    #[error("bad room: {reason}")]
    BadRoom { reason: String },
    #[error("hrtf bank is empty")]
    EmptyHrtfBank,
    #[error("bad hrtf bank file name `{name}`: expected az<deg>_el<deg>_{{l,r}}.wav")]
    BadHrtfName { name: String },
    #[error("hrtf bank file `{name}` has no matching pair")]
    UnpairedHrtf { name: String },
    #[error("impulse response has no taps")]
    EmptyImpulseResponse,
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// FIR filter taps with the rate they were sampled at.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    pub label: String,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<f64>, sample_rate: u32, label: impl Into<String>) -> Self {
        Self { taps, sample_rate, label: label.into() }
    }

    /// Unit impulse: the identity filter.
    pub fn delta(sample_rate: u32, label: impl Into<String>) -> Self {
        Self::new(vec![1.0], sample_rate, label)
    }
}

/// Rectangular room with uniform surface absorption.
#[derive(Debug, Clone, PartialEq)]
pub struct ShoeboxRoom {
    pub dimensions: Vec3,
    /// Fraction of energy absorbed per reflection, in (0, 1].
    pub absorption: f64,
    pub max_order: u32,
}

impl ShoeboxRoom {
    fn validate(&self) -> Result<(), DspError> {
        if self.dimensions.x <= 0.0 || self.dimensions.y <= 0.0 || self.dimensions.z <= 0.0 {
            return Err(DspError::BadRoom { reason: format!("non-positive dimensions {:?}", self.dimensions) });
        }
        if !(self.absorption > 0.0 && self.absorption <= 1.0) {
            return Err(DspError::BadRoom { reason: format!("absorption {} outside (0, 1]", self.absorption) });
        }
        Ok(())
    }

    fn contains(&self, p: Vec3) -> bool {
        p.x > 0.0 && p.x < self.dimensions.x
            && p.y > 0.0 && p.y < self.dimensions.y
            && p.z > 0.0 && p.z < self.dimensions.z
    }
}

/// Full linear convolution truncated to the input length (tap 0 is
/// zero-latency).
pub fn fir_convolve(x: &AudioClip, ir: &ImpulseResponse) -> Result<AudioClip, DspError> {
    if ir.taps.is_empty() {
        return Err(DspError::EmptyImpulseResponse);
    }
    if x.sample_rate() != ir.sample_rate {
        return Err(DspError::RateMismatch { signal: x.sample_rate(), ir: ir.sample_rate });
    }
    let out = convolve_truncated(x.channel(0), &ir.taps);
    Ok(AudioClip::mono(x.sample_rate(), out))
}

fn convolve_truncated(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for (k, &h) in taps.iter().enumerate() {
        if h == 0.0 || k >= n {
            continue;
        }
        for (y, &v) in out[k..].iter_mut().zip(x.iter()) {
            *y += h * v;
        }
    }
    out
}

/// Image-source room impulse response for a shoebox room.
///
/// Each image of reflection count R contributes (1-absorption)^R / d at
/// the fractional tap C*d, split over the two adjacent integer taps by
/// linear interpolation.
pub fn image_source_rir(
    room: &ShoeboxRoom,
    src: Vec3,
    lstn: Vec3,
    sample_rate: u32,
    speed_of_sound: f64,
) -> Result<ImpulseResponse, DspError> {
    room.validate()?;
    if !room.contains(src) {
        return Err(DspError::PointOutsideRoom { which: "source" });
    }
    if !room.contains(lstn) {
        return Err(DspError::PointOutsideRoom { which: "listener" });
    }

    let c = sample_rate as f64 / speed_of_sound;
    let order = room.max_order as i64;
    let reflect = 1.0 - room.absorption;
    let span = order + 1;

    let mut arrivals: Vec<(f64, f64)> = Vec::new(); // (fractional tap, amplitude)
    let dims = [room.dimensions.x, room.dimensions.y, room.dimensions.z];
    let s = [src.x, src.y, src.z];
    for qx in 0..2i64 {
        for nx in -span..=span {
            let rx = (nx - qx).abs() + nx.abs();
            if rx > order {
                continue;
            }
            for qy in 0..2i64 {
                for ny in -span..=span {
                    let ry = (ny - qy).abs() + ny.abs();
                    if rx + ry > order {
                        continue;
                    }
                    for qz in 0..2i64 {
                        for nz in -span..=span {
                            let rz = (nz - qz).abs() + nz.abs();
                            let r_total = rx + ry + rz;
                            if r_total > order {
                                continue;
                            }
                            let img = Vec3::new(
                                (1 - 2 * qx) as f64 * s[0] + 2.0 * nx as f64 * dims[0],
                                (1 - 2 * qy) as f64 * s[1] + 2.0 * ny as f64 * dims[1],
                                (1 - 2 * qz) as f64 * s[2] + 2.0 * nz as f64 * dims[2],
                            );
                            let d = img.distance(lstn);
                            let amp = reflect.powi(r_total as i32) / d;
                            if amp != 0.0 {
                                arrivals.push((c * d, amp));
                            }
                        }
                    }
                }
            }
        }
    }

    let max_tap = arrivals.iter().map(|(t, _)| *t).fold(0.0f64, f64::max);
    let mut taps = vec![0.0; max_tap.ceil() as usize + 2];
    for (tap, amp) in arrivals {
        let lo = tap.floor();
        let frac = tap - lo;
        let idx = lo as usize;
        taps[idx] += amp * (1.0 - frac);
        taps[idx + 1] += amp * frac;
    }
    Ok(ImpulseResponse::new(taps, sample_rate, format!("ism_order{}", room.max_order)))
}

/// A set of HRTF impulse-response pairs indexed by direction.
#[derive(Debug, Clone)]
pub struct HrtfBank {
    entries: Vec<HrtfEntry>,
}

#[derive(Debug, Clone)]
pub struct HrtfEntry {
    /// Unit vector in head coordinates (front/right/up).
    pub direction: Vec3,
    pub left: ImpulseResponse,
    pub right: ImpulseResponse,
}

/// Direction label used in bank file names, degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionDeg {
    pub azimuth: i32,
    pub elevation: i32,
}

impl DirectionDeg {
    pub fn unit(self) -> Vec3 {
        let az = self.azimuth as f64 * PI / 180.0;
        let el = self.elevation as f64 * PI / 180.0;
        Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

impl fmt::Display for DirectionDeg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "az{}_el{}", self.azimuth, self.elevation)
    }
}

impl HrtfBank {
    pub fn new(entries: Vec<HrtfEntry>) -> Result<Self, DspError> {
        if entries.is_empty() {
            return Err(DspError::EmptyHrtfBank);
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[HrtfEntry] {
        &self.entries
    }

    /// Entry whose direction is closest (by angle) to `direction`.
    pub fn nearest(&self, direction: Vec3) -> &HrtfEntry {
        let u = direction.normalized();
        self.entries
            .iter()
            .max_by(|a, b| a.direction.dot(u).total_cmp(&b.direction.dot(u)))
            .expect("bank is nonempty")
    }

    /// Loads a bank from a directory of `az<deg>_el<deg>_{l,r}.wav` pairs.
    pub fn load_dir(dir: &Path) -> Result<Self, DspError> {
        let mut names: Vec<String> = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.ends_with(".wav") {
                names.push(name);
            }
        }
        names.sort();
        let mut entries = Vec::new();
        for name in &names {
            let Some((dir_deg, ear)) = parse_hrtf_name(name) else {
                return Err(DspError::BadHrtfName { name: name.clone() });
            };
            if ear != Ear::Left {
                continue;
            }
            let pair = format!("{dir_deg}_r.wav");
            if !names.contains(&pair) {
                return Err(DspError::UnpairedHrtf { name: name.clone() });
            }
            let left_clip = crate::wav::read_wav(&dir.join(name))?;
            let right_clip = crate::wav::read_wav(&dir.join(&pair))?;
            entries.push(HrtfEntry {
                direction: dir_deg.unit(),
                left: ImpulseResponse::new(
                    left_clip.channel(0).to_vec(),
                    left_clip.sample_rate(),
                    format!("hrtf_left@{dir_deg}"),
                ),
                right: ImpulseResponse::new(
                    right_clip.channel(0).to_vec(),
                    right_clip.sample_rate(),
                    format!("hrtf_right@{dir_deg}"),
                ),
            });
        }
        Self::new(entries)
    }

    /// Writes the bank as WAV pairs in the external directory format.
    pub fn save_dir(&self, dir: &Path, labels: &[DirectionDeg]) -> Result<(), DspError> {
        std::fs::create_dir_all(dir)?;
        for (entry, label) in self.entries.iter().zip(labels) {
            for (ir, suffix) in [(&entry.left, "l"), (&entry.right, "r")] {
                let clip = AudioClip::mono(ir.sample_rate, ir.taps.clone());
                crate::wav::write_wav(&clip, &dir.join(format!("{label}_{suffix}.wav")), crate::wav::WavEncoding::Float32)?;
            }
        }
        Ok(())
    }
}

fn parse_hrtf_name(name: &str) -> Option<(DirectionDeg, Ear)> {
    let stem = name.strip_suffix(".wav")?;
    let (rest, ear_tag) = stem.rsplit_once('_')?;
    let ear = match ear_tag {
        "l" => Ear::Left,
        "r" => Ear::Right,
        _ => return None,
    };
    let rest = rest.strip_prefix("az")?;
    let (az_str, el_str) = rest.split_once("_el")?;
    Some((DirectionDeg { azimuth: az_str.parse().ok()?, elevation: el_str.parse().ok()? }, ear))
}

/// Generic head-shadow bank: per-direction gain and one-pole smoothing,
/// stronger on the far side of the head. A stand-in for measured data.
pub fn synthetic_hrtf_bank(sample_rate: u32, taps: usize) -> (HrtfBank, Vec<DirectionDeg>) {
    let mut labels = Vec::new();
    for el in [-40, 0, 40] {
        let az_step = if el == 0 { 30 } else { 90 };
        let mut az = -180 + az_step;
        while az <= 180 {
            labels.push(DirectionDeg { azimuth: az, elevation: el });
            az += az_step;
        }
    }
    let entries = labels
        .iter()
        .map(|label| {
            let u = label.unit();
            HrtfEntry {
                direction: u,
                left: synthetic_ear_ir(u, Ear::Left, sample_rate, taps, format!("hrtf_left@{label}")),
                right: synthetic_ear_ir(u, Ear::Right, sample_rate, taps, format!("hrtf_right@{label}")),
            }
        })
        .collect();
    (HrtfBank::new(entries).expect("labels nonempty"), labels)
}

fn synthetic_ear_ir(direction: Vec3, ear: Ear, sample_rate: u32, taps: usize, label: String) -> ImpulseResponse {
    // side > 0 means the source is on this ear's side of the head.
    let side = match ear {
        Ear::Left => -direction.y,
        Ear::Right => direction.y,
    };
    let gain = 0.7 + 0.25 * side;
    let pole = 0.15 + 0.3 * (1.0 - side).clamp(0.0, 2.0) / 2.0;
    let mut h = Vec::with_capacity(taps);
    let mut amp = gain * (1.0 - pole);
    for _ in 0..taps {
        h.push(amp);
        amp *= pole;
    }
    ImpulseResponse::new(h, sample_rate, label)
}

/// Renders a mono clip to binaural with the classical chain: per-ear
/// geometric warp, then room reverberation, then the nearest-direction
/// head filter. The head sits at the room center; pose coordinates are
/// relative to it. `room = None` skips reverberation.
pub fn dsp_render_binaural(
    x: &AudioClip,
    track: &PoseTrack,
    hrtf_bank: &HrtfBank,
    room: Option<&ShoeboxRoom>,
    speed_of_sound: f64,
) -> Result<AudioClip, DspError> {
    let sample_rate = x.sample_rate();
    let at_audio_rate = track.resample(sample_rate as f64, x.len())?;

    // Mean source direction in head coordinates picks the HRTF pair.
    let mut mean_dir = Vec3::ZERO;
    for pose in &at_audio_rate.samples {
        // Inverse rotation: conjugate of the head orientation.
        let q = pose.orientation;
        let conj = crate::geometry::Quat::new(-q.x, -q.y, -q.z, q.w);
        mean_dir = mean_dir + conj.rotate(pose.position).normalized();
    }
    let entry = hrtf_bank.nearest(mean_dir.normalized());

    let mut channels = Vec::with_capacity(2);
    for (ear, hrtf) in [(Ear::Left, &entry.left), (Ear::Right, &entry.right)] {
        let wf = compute_warpfield(&at_audio_rate, ear, sample_rate, speed_of_sound)?;
        let mut y = apply_warp(x, &wf)?;
        if let Some(room) = room {
            let center = room.dimensions.scale(0.5);
            let mean_src = mean_position(&at_audio_rate);
            let mean_ear = mean_ear_position(&at_audio_rate, ear);
            let rir = image_source_rir(room, center + mean_src, center + mean_ear, sample_rate, speed_of_sound)?;
            y = fir_convolve(&y, &rir)?;
        }
        y = fir_convolve(&y, hrtf)?;
        channels.push(y.into_channels().remove(0));
    }
    Ok(AudioClip::new(sample_rate, channels)?)
}

fn mean_position(track: &PoseTrack) -> Vec3 {
    if track.is_empty() {
        return Vec3::ZERO;
    }
    let sum = track.samples.iter().fold(Vec3::ZERO, |acc, s| acc + s.position);
    sum.scale(1.0 / track.len() as f64)
}

fn mean_ear_position(track: &PoseTrack, ear: Ear) -> Vec3 {
    if track.is_empty() {
        return Vec3::ZERO;
    }
    let sum = (0..track.len()).fold(Vec3::ZERO, |acc, i| acc + track.ear_position(i, ear));
    sum.scale(1.0 / track.len() as f64)
}
