use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono 16 kHz signal with samples normalized to [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct PcmSignal {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl PcmSignal {
    pub fn new(samples: Vec<f32>) -> Self {
        PcmSignal {
            sample_rate: SAMPLE_RATE,
            samples,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a RIFF/WAVE PCM16 mono 16 kHz file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<PcmSignal> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

pub fn parse_wav(bytes: &[u8]) -> Result<PcmSignal> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::format("riff", "missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(Error::format("chunk", "chunk extends past end of file"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::format("fmt", "fmt chunk too short"));
                }
                fmt = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
            }
            b"data" => {
                let (format, channels, rate, bits) =
                    fmt.ok_or_else(|| Error::format("fmt", "data chunk before fmt chunk"))?;
                if format != 1 {
                    return Err(Error::format("audio_format", format!("expected PCM (1), got {format}")));
                }
                if channels != 1 {
                    return Err(Error::format("channels", format!("expected mono, got {channels}")));
                }
                if rate != SAMPLE_RATE {
                    return Err(Error::format(
                        "sample_rate",
                        format!("expected {SAMPLE_RATE}, got {rate}"),
                    ));
                }
                if bits != 16 {
                    return Err(Error::format("bits_per_sample", format!("expected 16, got {bits}")));
                }
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| f32::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
                    .collect();
                return Ok(PcmSignal::new(samples));
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(Error::format("data", "no data chunk"))
}

/// Quantizes to PCM16 and writes a canonical 44-byte-header WAV file.
pub fn write_wav(path: impl AsRef<Path>, signal: &PcmSignal) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(signal)).map_err(|e| Error::io(path, e))
}

pub fn encode_wav(signal: &PcmSignal) -> Vec<u8> {
    let data_len = (signal.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&signal.sample_rate.to_le_bytes());
    out.extend_from_slice(&(signal.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &signal.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_round_trips_to_zeros() {
        let sig = PcmSignal::new(vec![0.0; 16_000]);
        let back = parse_wav(&encode_wav(&sig)).unwrap();
        assert_eq!(back.samples.len(), 16_000);
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn wrong_rate_names_the_field() {
        let mut sig = PcmSignal::new(vec![0.0; 100]);
        sig.sample_rate = 44_100;
        let err = parse_wav(&encode_wav(&sig)).unwrap_err();
        assert!(err.to_string().contains("sample_rate"), "{err}");
    }

    #[test]
    fn stereo_is_rejected() {
        let mut bytes = encode_wav(&PcmSignal::new(vec![0.0; 10]));
        bytes[22] = 2;
        let err = parse_wav(&bytes).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
    }
}
