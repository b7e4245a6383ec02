//! Multi-channel audio clips and channel arithmetic.
//!
//! Samples are stored as `f64` throughout; files are the only quantization
//! point. Amplitudes are nominally in [-1, 1] but never clamped in memory.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed wav header: {field}")]
    MalformedHeader { field: &'static str },
    #[error("unsupported wav encoding: {detail}")]
    UnsupportedEncoding { detail: String },
    #[error("truncated wav data: {context}")]
    TruncatedData { context: &'static str },
    #[error("pose rows not at a uniform rate (line {line})")]
    NonUniformRate { line: usize },
    #[error("bad pose row at line {line}: {reason}")]
    BadRow { line: usize, reason: String },
    #[error("zero-norm quaternion at line {line}")]
    ZeroNormQuaternion { line: usize },
    #[error("pose track is empty")]
    EmptyTrack,
    #[error("expected {expected} channel(s), got {got}")]
    WrongChannelCount { expected: usize, got: usize },
    #[error("channel lengths differ")]
    ChannelLengthMismatch,
    #[error("sample rate must be positive")]
    BadSampleRate,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A sampled waveform with one or two channels.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl AudioClip {
    /// Builds a clip, checking that all channels share one length.
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::BadSampleRate);
        }
        if channels.is_empty() || channels.len() > 2 {
            return Err(AudioError::WrongChannelCount { expected: 2, got: channels.len() });
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(AudioError::ChannelLengthMismatch);
        }
        Ok(Self { sample_rate, channels })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Self {
        Self { sample_rate, channels: vec![samples] }
    }

    pub fn stereo(sample_rate: u32, left: Vec<f64>, right: Vec<f64>) -> Result<Self, AudioError> {
        Self::new(sample_rate, vec![left, right])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Per-sample mean of the two channels: the mono summary of a binaural clip.
    pub fn channel_average(&self) -> Result<AudioClip, AudioError> {
        if self.channel_count() != 2 {
            return Err(AudioError::WrongChannelCount { expected: 2, got: self.channel_count() });
        }
        let avg = self.channels[0]
            .iter()
            .zip(&self.channels[1])
            .map(|(l, r)| 0.5 * (l + r))
            .collect();
        Ok(AudioClip::mono(self.sample_rate, avg))
    }

    /// Copies a mono clip into both channels of a stereo clip.
    pub fn duplicate_mono(&self) -> Result<AudioClip, AudioError> {
        if self.channel_count() != 1 {
            return Err(AudioError::WrongChannelCount { expected: 1, got: self.channel_count() });
        }
        Ok(AudioClip {
            sample_rate: self.sample_rate,
            channels: vec![self.channels[0].clone(), self.channels[0].clone()],
        })
    }
}
