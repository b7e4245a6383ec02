//! Pose tracks: timed source position and head orientation samples.
//!
//! Canonical on-disk format is a CSV with header `t,px,py,pz,qx,qy,qz,qw`
//! and rows at a fixed rate. Orientations are normalized on load; positions
//! are meters in the front/right/up frame with the listener at the origin.

use crate::audio::AudioError;
use crate::geometry::{Quat, Vec3};
use std::fs;
use std::path::Path;

/// Default ear offsets from the head origin: right ear at +9 cm on the
/// right axis. Conventional value; the capture rig's geometry is unknown.
pub const DEFAULT_EAR_OFFSET: f64 = 0.09;

/// One tracked pose: source position plus head orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub position: Vec3,
    pub orientation: Quat,
}

/// Which ear a per-ear quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ear {
    Left,
    Right,
}

/// A fixed-rate sequence of poses with the listener's ear offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack {
    pub rate: f64,
    pub samples: Vec<PoseSample>,
    /// Left/right ear positions relative to the head origin, before rotation.
    pub ear_offsets: [Vec3; 2],
}

impl PoseTrack {
    pub fn new(rate: f64, samples: Vec<PoseSample>) -> Self {
        Self {
            rate,
            samples,
            ear_offsets: [
                Vec3::new(0.0, -DEFAULT_EAR_OFFSET, 0.0),
                Vec3::new(0.0, DEFAULT_EAR_OFFSET, 0.0),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ear_offset(&self, ear: Ear) -> Vec3 {
        match ear {
            Ear::Left => self.ear_offsets[0],
            Ear::Right => self.ear_offsets[1],
        }
    }

    /// World-space position of an ear for the pose at `index`.
    pub fn ear_position(&self, index: usize, ear: Ear) -> Vec3 {
        let pose = &self.samples[index];
        pose.orientation.rotate(self.ear_offset(ear))
    }

    /// Resamples to `n_samples` poses at `target_rate`.
    ///
    /// Positions interpolate linearly; orientations slerp along the shorter
    /// arc. Query times beyond the last input pose hold the last pose.
    pub fn resample(&self, target_rate: f64, n_samples: usize) -> Result<PoseTrack, AudioError> {
        if self.samples.is_empty() {
            return Err(AudioError::EmptyTrack);
        }
        let mut samples = Vec::with_capacity(n_samples);
        for k in 0..n_samples {
            let t = k as f64 / target_rate;
            samples.push(self.pose_at(t));
        }
        Ok(PoseTrack { rate: target_rate, samples, ear_offsets: self.ear_offsets })
    }

    /// Pose at time `t` seconds from the first sample.
    pub fn pose_at(&self, t: f64) -> PoseSample {
        let last = self.samples.len() - 1;
        let u = t * self.rate;
        if u <= 0.0 {
            return self.samples[0];
        }
        let i = u.floor() as usize;
        if i >= last {
            return self.samples[last];
        }
        let frac = u - i as f64;
        if frac == 0.0 {
            return self.samples[i];
        }
        let a = &self.samples[i];
        let b = &self.samples[i + 1];
        PoseSample {
            position: a.position.lerp(b.position, frac),
            orientation: a.orientation.slerp(b.orientation, frac),
        }
    }
}

/// Reads the canonical pose CSV. The rate is inferred from the first two
/// timestamps and every later row must land on the same grid.
pub fn read_pose_csv(path: &Path) -> Result<PoseTrack, AudioError> {
    let text = fs::read_to_string(path)?;
    parse_pose_csv(&text)
}

pub(crate) fn parse_pose_csv(text: &str) -> Result<PoseTrack, AudioError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(AudioError::BadRow {
        line: 1,
        reason: "missing header".into(),
    })?;
    if header.trim() != "t,px,py,pz,qx,qy,qz,qw" {
        return Err(AudioError::BadRow { line: 1, reason: format!("bad header `{header}`") });
    }

    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(AudioError::BadRow {
                line: line_no,
                reason: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let mut vals = [0.0f64; 8];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.trim().parse().map_err(|_| AudioError::BadRow {
                line: line_no,
                reason: format!("not a number: `{f}`"),
            })?;
        }
        let q = Quat::new(vals[4], vals[5], vals[6], vals[7])
            .normalized()
            .ok_or(AudioError::ZeroNormQuaternion { line: line_no })?;
        times.push((line_no, vals[0]));
        samples.push(PoseSample { position: Vec3::new(vals[1], vals[2], vals[3]), orientation: q });
    }

    if samples.len() < 2 {
        return Err(AudioError::BadRow {
            line: times.last().map_or(1, |(l, _)| *l),
            reason: "need at least two rows to infer the rate".into(),
        });
    }

    let dt = times[1].1 - times[0].1;
    if dt <= 0.0 {
        return Err(AudioError::NonUniformRate { line: times[1].0 });
    }
    for w in times.windows(2) {
        let step = w[1].1 - w[0].1;
        if (step - dt).abs() > 1e-6 * dt.abs() {
            return Err(AudioError::NonUniformRate { line: w[1].0 });
        }
    }
    Ok(PoseTrack::new(1.0 / dt, samples))
}

/// Writes a track in the canonical CSV format with timestamps from 0.
pub fn write_pose_csv(track: &PoseTrack, path: &Path) -> Result<(), AudioError> {
    let mut out = String::from("t,px,py,pz,qx,qy,qz,qw\n");
    for (i, s) in track.samples.iter().enumerate() {
        let t = i as f64 / track.rate;
        out.push_str(&format!(
            "{t:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
            s.position.x,
            s.position.y,
            s.position.z,
            s.orientation.x,
            s.orientation.y,
            s.orientation.z,
            s.orientation.w,
        ));
    }
    fs::write(path, out)?;
    Ok(())
}
