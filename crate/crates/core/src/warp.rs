//! Fractional-delay geometric warping.
//!
//! A warpfield gives, for every output sample n, the fractional read index
//! rho(n) = n - C * d(n) where C = sample_rate / speed_of_sound and d(n) is
//! the source-to-ear distance. Applying the warp linearly interpolates the
//! source signal at those indices.

use crate::audio::AudioClip;
use crate::pose::{Ear, PoseTrack};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("length mismatch: signal has {signal} samples, warpfield {warp}")]
    LengthMismatch { signal: usize, warp: usize },
    #[error("pose track rate {track_rate} Hz does not match audio rate {audio_rate} Hz")]
    RateMismatch { track_rate: f64, audio_rate: f64 },
    #[error("speed of sound must be positive, got {0}")]
    BadSpeedOfSound(f64),
}

/// Per-sample fractional read indices for one ear.
#[derive(Debug, Clone, PartialEq)]
pub struct Warpfield {
    pub rho: Vec<f64>,
    pub sample_rate: u32,
}

/// Builds the warpfield for one ear from a pose track already resampled to
/// the audio rate. The ear position is the head origin plus the ear offset
/// rotated by the head orientation of each pose.
pub fn compute_warpfield(
    track: &PoseTrack,
    ear: Ear,
    sample_rate: u32,
    speed_of_sound: f64,
) -> Result<Warpfield, WarpError> {
    if speed_of_sound <= 0.0 {
        return Err(WarpError::BadSpeedOfSound(speed_of_sound));
    }
    if (track.rate - sample_rate as f64).abs() > 1e-6 * sample_rate as f64 {
        return Err(WarpError::RateMismatch { track_rate: track.rate, audio_rate: sample_rate as f64 });
    }
    let c = sample_rate as f64 / speed_of_sound;
    let rho = track
        .samples
        .iter()
        .enumerate()
        .map(|(n, pose)| {
            let ear_pos = pose.orientation.rotate(track.ear_offset(ear));
            n as f64 - c * pose.position.distance(ear_pos)
        })
        .collect();
    Ok(Warpfield { rho, sample_rate })
}

/// Applies a warpfield to a mono clip by linear interpolation.
///
/// Read indices below 0 produce silence (the sound has not been emitted
/// yet); indices above N-1 clamp to the final sample.
pub fn apply_warp(x: &AudioClip, warp: &Warpfield) -> Result<AudioClip, WarpError> {
    if x.len() != warp.rho.len() {
        return Err(WarpError::LengthMismatch { signal: x.len(), warp: warp.rho.len() });
    }
    let samples = x.channel(0);
    let out = warp.rho.iter().map(|&rho| interpolate(samples, rho)).collect();
    Ok(AudioClip::mono(x.sample_rate(), out))
}

fn interpolate(x: &[f64], rho: f64) -> f64 {
    let lo = rho.floor();
    let frac = rho - lo;
    let read = |i: f64| -> f64 {
        if i < 0.0 {
            0.0
        } else {
            let idx = i as usize;
            if idx >= x.len() {
                *x.last().unwrap_or(&0.0)
            } else {
                x[idx]
            }
        }
    };
    if frac == 0.0 {
        read(lo)
    } else {
        (1.0 - frac) * read(lo) + frac * read(lo + 1.0)
    }
}

/// Warps a mono clip into a stereo clip using left/right ear warpfields.
pub fn warp_binaural(
    x: &AudioClip,
    track: &PoseTrack,
    sample_rate: u32,
    speed_of_sound: f64,
) -> Result<AudioClip, WarpError> {
    let left = apply_warp(x, &compute_warpfield(track, Ear::Left, sample_rate, speed_of_sound)?)?;
    let right = apply_warp(x, &compute_warpfield(track, Ear::Right, sample_rate, speed_of_sound)?)?;
    Ok(AudioClip::stereo(sample_rate, left.into_channels().remove(0), right.into_channels().remove(0))
        .expect("channels produced from one clip"))
}

/// Mean of the two warped channels: the stage-1 conditioning signal.
pub fn warped_mean(
    x: &AudioClip,
    track: &PoseTrack,
    sample_rate: u32,
    speed_of_sound: f64,
) -> Result<AudioClip, WarpError> {
    let stereo = warp_binaural(x, track, sample_rate, speed_of_sound)?;
    Ok(stereo.channel_average().expect("warp_binaural returns stereo"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Quat, Vec3};
    use crate::pose::PoseSample;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn field(rho: Vec<f64>) -> Warpfield {
        Warpfield { rho, sample_rate: 8000 }
    }

    fn static_track(pos: Vec3, n: usize, rate: f64) -> PoseTrack {
        PoseTrack::new(rate, vec![PoseSample { position: pos, orientation: Quat::IDENTITY }; n])
    }

    #[test]
    fn zero_distance_gives_identity_field() {
        let mut track = static_track(Vec3::ZERO, 16, 8000.0);
        track.ear_offsets = [Vec3::ZERO, Vec3::ZERO];
        let w = compute_warpfield(&track, Ear::Left, 8000, 343.0).unwrap();
        for (n, r) in w.rho.iter().enumerate() {
            assert_abs_diff_eq!(*r, n as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn one_second_delay_by_construction() {
        // d = 343 m at 48 kHz and c = 343 m/s is exactly 48000 samples.
        let mut track = static_track(Vec3::new(343.0, 0.0, 0.0), 8, 48000.0);
        track.ear_offsets = [Vec3::ZERO, Vec3::ZERO];
        let w = compute_warpfield(&track, Ear::Left, 48000, 343.0).unwrap();
        for (n, r) in w.rho.iter().enumerate() {
            assert_abs_diff_eq!(*r, n as f64 - 48000.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn one_meter_delay_value() {
        let mut track = static_track(Vec3::new(1.0, 0.0, 0.0), 4, 48000.0);
        track.ear_offsets = [Vec3::ZERO, Vec3::ZERO];
        let w = compute_warpfield(&track, Ear::Left, 48000, 343.0).unwrap();
        assert_abs_diff_eq!(w.rho[0], -(48000.0 / 343.0), epsilon = 1e-9);
        assert_abs_diff_eq!(48000.0 / 343.0, 139.9416909620991, epsilon = 1e-9);
    }

    #[test]
    fn identity_warp_is_identity() {
        let x = AudioClip::mono(8000, vec![0.3, -0.1, 0.9, 0.0, -0.5]);
        let w = field((0..5).map(|n| n as f64).collect());
        assert_eq!(apply_warp(&x, &w).unwrap(), x);
    }

    #[test]
    fn integer_shift_warp() {
        let x = AudioClip::mono(8000, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let w = field((0..5).map(|n| n as f64 - 2.0).collect());
        assert_eq!(apply_warp(&x, &w).unwrap().channel(0), &[0.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn half_sample_shift_on_ramp() {
        let n = 16;
        let x = AudioClip::mono(8000, (0..n).map(|v| v as f64).collect());
        let w = field((0..n).map(|v| v as f64 - 0.5).collect());
        let y = apply_warp(&x, &w).unwrap();
        for (i, v) in y.channel(0).iter().enumerate().skip(1) {
            assert_abs_diff_eq!(*v, i as f64 - 0.5, epsilon = 1e-12);
        }
        // First sample interpolates between silence and x[0] = 0.
        assert_abs_diff_eq!(y.channel(0)[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reads_above_end_clamp() {
        let x = AudioClip::mono(8000, vec![1.0, 2.0, 4.0]);
        let w = field(vec![0.0, 2.5, 9.0]);
        assert_eq!(apply_warp(&x, &w).unwrap().channel(0), &[1.0, 4.0, 4.0]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let x = AudioClip::mono(8000, vec![0.0; 4]);
        let w = field(vec![0.0; 5]);
        assert!(matches!(apply_warp(&x, &w), Err(WarpError::LengthMismatch { signal: 4, warp: 5 })));
    }

    #[test]
    fn equidistant_source_gives_identical_channels() {
        // Source straight ahead is equidistant from both ears.
        let track = static_track(Vec3::new(2.0, 0.0, 0.0), 64, 8000.0);
        let x = AudioClip::mono(8000, (0..64).map(|i| ((i * 37) % 19) as f64 / 19.0).collect());
        let y = warp_binaural(&x, &track, 8000, 343.0).unwrap();
        assert_eq!(y.channel(0), y.channel(1));
    }

    #[test]
    fn empty_input_gives_empty_stereo() {
        let track = PoseTrack::new(8000.0, vec![]);
        let x = AudioClip::mono(8000, vec![]);
        let y = warp_binaural(&x, &track, 8000, 343.0).unwrap();
        assert_eq!(y.channel_count(), 2);
        assert_eq!(y.len(), 0);
    }

    #[test]
    fn nearer_ear_leads() {
        // Source hard to the left: left channel must peak no later than right.
        let n = 512;
        let track = static_track(Vec3::new(0.0, -1.5, 0.0), n, 8000.0);
        let mut click = vec![0.0; n];
        click[256] = 1.0;
        let x = AudioClip::mono(8000, click);
        let y = warp_binaural(&x, &track, 8000, 343.0).unwrap();
        let peak = |ch: &[f64]| ch.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
        assert!(peak(y.channel(0)) <= peak(y.channel(1)));
    }

    proptest! {
        #[test]
        fn warp_is_amplitude_bounded(
            samples in proptest::collection::vec(-1.0f64..1.0, 1..64),
            offsets in proptest::collection::vec(-8.0f64..8.0, 1..64),
        ) {
            let n = samples.len().min(offsets.len());
            let x = AudioClip::mono(8000, samples[..n].to_vec());
            let w = field((0..n).map(|i| i as f64 - offsets[i].abs()).collect());
            let y = apply_warp(&x, &w).unwrap();
            let max_in = x.channel(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let max_out = y.channel(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(max_out <= max_in + 1e-12);
        }

        #[test]
        fn warp_is_linear_in_signal(
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
            x1 in proptest::collection::vec(-1.0f64..1.0, 32),
            x2 in proptest::collection::vec(-1.0f64..1.0, 32),
            delays in proptest::collection::vec(0.0f64..6.0, 32),
        ) {
            let w = field((0..32).map(|i| i as f64 - delays[i]).collect());
            let mix: Vec<f64> = x1.iter().zip(&x2).map(|(p, q)| a * p + b * q).collect();
            let warp_of = |v: Vec<f64>| apply_warp(&AudioClip::mono(8000, v), &w).unwrap();
            let lhs = warp_of(mix);
            let (y1, y2) = (warp_of(x1), warp_of(x2));
            for i in 0..32 {
                let rhs = a * y1.channel(0)[i] + b * y2.channel(0)[i];
                prop_assert!((lhs.channel(0)[i] - rhs).abs() < 1e-10);
            }
        }
    }
}
