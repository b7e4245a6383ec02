//! RIFF/WAVE reading and writing.
//!
//! Reads PCM 16/24-bit and 32-bit IEEE float, 1 or 2 channels; writes PCM16
//! or float32. All multi-byte values are little-endian. Integer PCM maps to
//! [-1, 1) by dividing by 2^(bits-1); PCM16 writing rounds half away from
//! zero and clamps to [-1, 1 - 2^-15].

use crate::audio::{AudioClip, AudioError};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// On-disk sample encodings supported by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;

pub fn read_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    parse_wav(&bytes)
}

pub fn write_wav(clip: &AudioClip, path: &Path, encoding: WavEncoding) -> Result<(), AudioError> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(&encode_wav(clip, encoding))?;
    writer.flush()?;
    Ok(())
}

fn parse_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::TruncatedData { context: "riff header" });
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(AudioError::MalformedHeader { field: "RIFF tag" });
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(AudioError::MalformedHeader { field: "WAVE tag" });
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return Err(AudioError::TruncatedData { context: "chunk body" });
        }
        match id {
            b"fmt " => fmt = Some(parse_fmt(&bytes[body_start..body_end])?),
            b"data" => data = Some(&bytes[body_start..body_end]),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
    }

    let fmt = fmt.ok_or(AudioError::MalformedHeader { field: "fmt chunk" })?;
    let data = data.ok_or(AudioError::MalformedHeader { field: "data chunk" })?;
    decode_samples(&fmt, data)
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk, AudioError> {
    if body.len() < 16 {
        return Err(AudioError::TruncatedData { context: "fmt chunk" });
    }
    let format = u16::from_le_bytes([body[0], body[1]]);
    let channels = u16::from_le_bytes([body[2], body[3]]);
    let sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
    let bits_per_sample = u16::from_le_bytes([body[14], body[15]]);
    if sample_rate == 0 {
        return Err(AudioError::MalformedHeader { field: "sample rate" });
    }
    Ok(FmtChunk { format, channels, sample_rate, bits_per_sample })
}

fn decode_samples(fmt: &FmtChunk, data: &[u8]) -> Result<AudioClip, AudioError> {
    let channels = fmt.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(AudioError::UnsupportedEncoding {
            detail: format!("channel count {} (only 1 or 2 supported)", fmt.channels),
        });
    }
    let bytes_per_sample = match (fmt.format, fmt.bits_per_sample) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_PCM, 24) => 3,
        (FORMAT_IEEE_FLOAT, 32) => 4,
        (f, b) => {
            return Err(AudioError::UnsupportedEncoding {
                detail: format!("format {f} with {b} bits per sample"),
            })
        }
    };
    let frame = bytes_per_sample * channels;
    if data.len() % frame != 0 {
        return Err(AudioError::TruncatedData { context: "data chunk not a whole frame count" });
    }
    let n = data.len() / frame;
    let mut out = vec![Vec::with_capacity(n); channels];
    for i in 0..n {
        for (c, channel) in out.iter_mut().enumerate() {
            let at = i * frame + c * bytes_per_sample;
            let v = match (fmt.format, fmt.bits_per_sample) {
                (FORMAT_PCM, 16) => {
                    i16::from_le_bytes([data[at], data[at + 1]]) as f64 / 32768.0
                }
                (FORMAT_PCM, 24) => {
                    let raw = (data[at] as i32)
                        | ((data[at + 1] as i32) << 8)
                        | (((data[at + 2] as i8) as i32) << 16);
                    raw as f64 / 8_388_608.0
                }
                (FORMAT_IEEE_FLOAT, 32) => {
                    f32::from_le_bytes(data[at..at + 4].try_into().unwrap()) as f64
                }
                _ => unreachable!(),
            };
            channel.push(v);
        }
    }
    AudioClip::new(fmt.sample_rate, out)
}

fn encode_wav(clip: &AudioClip, encoding: WavEncoding) -> Vec<u8> {
    let channels = clip.channel_count() as u16;
    let n = clip.len();
    let (format, bits) = match encoding {
        WavEncoding::Pcm16 => (FORMAT_PCM, 16u16),
        WavEncoding::Float32 => (FORMAT_IEEE_FLOAT, 32u16),
    };
    let bytes_per_sample = (bits / 8) as u32;
    let block_align = channels as u32 * bytes_per_sample;
    let data_size = n as u32 * block_align;

    let mut out = Vec::with_capacity(44 + data_size as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * block_align).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for i in 0..n {
        for c in 0..channels as usize {
            let v = clip.channel(c)[i];
            match encoding {
                WavEncoding::Pcm16 => out.extend_from_slice(&pcm16_of(v).to_le_bytes()),
                WavEncoding::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    out
}

/// Quantize to i16: scale by 2^15, round half away from zero, clamp.
fn pcm16_of(v: f64) -> i16 {
    let scaled = (v * 32768.0).round();
    scaled.clamp(-32768.0, 32767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn roundtrip(clip: &AudioClip, enc: WavEncoding) -> AudioClip {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_wav(clip, &p, enc).unwrap();
        read_wav(&p).unwrap()
    }

    #[test]
    fn pcm16_value_scaling() {
        // 16384 -> 0.5 and -32768 -> -1.0.
        let clip = AudioClip::mono(8000, vec![0.5, -1.0]);
        let bytes = encode_wav(&clip, WavEncoding::Pcm16);
        let body = &bytes[44..];
        assert_eq!(i16::from_le_bytes([body[0], body[1]]), 16384);
        assert_eq!(i16::from_le_bytes([body[2], body[3]]), -32768);
        let back = parse_wav(&bytes).unwrap();
        assert_eq!(back.channel(0), &[0.5, -1.0]);
    }

    #[test]
    fn pcm16_clamps_out_of_range() {
        let clip = AudioClip::mono(8000, vec![1.5, 1.0, -2.0]);
        let bytes = encode_wav(&clip, WavEncoding::Pcm16);
        let body = &bytes[44..];
        assert_eq!(i16::from_le_bytes([body[0], body[1]]), 32767);
        assert_eq!(i16::from_le_bytes([body[2], body[3]]), 32767);
        assert_eq!(i16::from_le_bytes([body[4], body[5]]), -32768);
    }

    #[test]
    fn three_channel_file_rejected() {
        let mut bytes = encode_wav(&AudioClip::mono(8000, vec![0.0; 4]), WavEncoding::Pcm16);
        bytes[22] = 3; // channel count field
        match parse_wav(&bytes) {
            Err(AudioError::UnsupportedEncoding { detail }) => assert!(detail.contains('3')),
            other => panic!("expected UnsupportedEncoding, got {other:?}"),
        }
    }

    #[test]
    fn bad_riff_tag_names_field() {
        let mut bytes = encode_wav(&AudioClip::mono(8000, vec![0.0]), WavEncoding::Pcm16);
        bytes[0] = b'X';
        assert!(matches!(parse_wav(&bytes), Err(AudioError::MalformedHeader { field: "RIFF tag" })));
    }

    #[test]
    fn truncated_data_detected() {
        let bytes = encode_wav(&AudioClip::mono(8000, vec![0.1; 8]), WavEncoding::Float32);
        assert!(matches!(
            parse_wav(&bytes[..bytes.len() - 3]),
            Err(AudioError::TruncatedData { .. })
        ));
    }

    #[test]
    fn pcm24_read() {
        // Hand-built 24-bit mono file with samples 2^22 (0.5) and -2^23 (-1.0).
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 6).to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes()); // pcm
        bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&(8000u32 * 3).to_le_bytes());
        bytes.extend_from_slice(&3u16.to_le_bytes());
        bytes.extend_from_slice(&24u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&6u32.to_le_bytes());
        bytes.extend_from_slice(&[0x00, 0x00, 0x40]); // +2^22
        bytes.extend_from_slice(&[0x00, 0x00, 0x80]); // -2^23
        let clip = parse_wav(&bytes).unwrap();
        assert_eq!(clip.channel(0), &[0.5, -1.0]);
    }

    proptest! {
        #[test]
        fn float32_roundtrip_is_bit_identical(
            raw in proptest::collection::vec(-1.0f32..1.0, 0..128),
            stereo in proptest::bool::ANY,
        ) {
            let samples: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
            let clip = if stereo {
                let mid = samples.len() / 2;
                AudioClip::stereo(48_000, samples[..mid].to_vec(), samples[mid..mid * 2].to_vec()).unwrap()
            } else {
                AudioClip::mono(48_000, samples)
            };
            let back = roundtrip(&clip, WavEncoding::Float32);
            prop_assert_eq!(back, clip);
        }

        #[test]
        fn pcm16_roundtrip_within_half_lsb(raw in proptest::collection::vec(-1.0f64..0.99996, 1..128)) {
            let clip = AudioClip::mono(16_000, raw.clone());
            let back = roundtrip(&clip, WavEncoding::Pcm16);
            for (a, b) in raw.iter().zip(back.channel(0)) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
