//! Mono 16-bit PCM WAV reading/writing and waveform datasets.

use std::io::{Read, Write};
use std::path::Path;

use super::time_coords;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One waveform as a coordinate/value dataset.
#[derive(Debug, Clone)]
pub struct AudioDataset {
    /// `t x 1` time coordinates in `[-1, 1]`.
    pub coords: Tensor<f64>,
    /// `t x 1` amplitudes in `[-1, 1]`.
    pub values: Tensor<f64>,
    pub sample_rate: u32,
}

impl AudioDataset {
    pub fn from_samples(samples: Vec<f64>, sample_rate: u32) -> Self {
        let n = samples.len();
        Self {
            coords: time_coords(n),
            values: Tensor::new(vec![n, 1], samples).unwrap(),
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Read a mono PCM-16 WAV file; amplitudes scale by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioDataset> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut hdr = [0u8; 12];
    f.read_exact(&mut hdr)?;
    if &hdr[0..4] != b"RIFF" || &hdr[8..12] != b"WAVE" {
        return Err(Error::Audio("not a RIFF/WAVE file".into()));
    }
    let mut sample_rate = 0u32;
    let mut got_fmt = false;
    let mut data: Option<Vec<i16>> = None;
    loop {
        let mut chunk = [0u8; 8];
        match f.read_exact(&mut chunk) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let id = &chunk[0..4];
        let size = u32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]) as usize;
        let mut body = vec![0u8; size + (size & 1)];
        f.read_exact(&mut body)?;
        body.truncate(size);
        if id == b"fmt " {
            if size < 16 {
                return Err(Error::Audio("truncated fmt chunk".into()));
            }
            let format = u16::from_le_bytes([body[0], body[1]]);
            let channels = u16::from_le_bytes([body[2], body[3]]);
            sample_rate = u32::from_le_bytes([body[4], body[5], body[6], body[7]]);
            let bits = u16::from_le_bytes([body[14], body[15]]);
            if format != 1 {
                return Err(Error::Audio(format!("unsupported encoding (format tag {})", format)));
            }
            if channels != 1 {
                return Err(Error::Audio(format!("expected mono, got {} channels", channels)));
            }
            if bits != 16 {
                return Err(Error::Audio(format!("expected 16-bit samples, got {}", bits)));
            }
            got_fmt = true;
        } else if id == b"data" {
            let samples = body
                .chunks_exact(2)
                .map(|b| i16::from_le_bytes([b[0], b[1]]))
                .collect();
            data = Some(samples);
        }
    }
    if !got_fmt {
        return Err(Error::Audio("missing fmt chunk".into()));
    }
    let samples = data.ok_or_else(|| Error::Audio("missing data chunk".into()))?;
    let values: Vec<f64> = samples.iter().map(|&s| s as f64 / 32768.0).collect();
    Ok(AudioDataset::from_samples(values, sample_rate))
}

/// Write amplitudes in `[-1, 1]` as a mono PCM-16 WAV file.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let data_len = (samples.len() * 2) as u32;
    f.write_all(b"RIFF")?;
    f.write_all(&(36 + data_len).to_le_bytes())?;
    f.write_all(b"WAVE")?;
    f.write_all(b"fmt ")?;
    f.write_all(&16u32.to_le_bytes())?;
    f.write_all(&1u16.to_le_bytes())?; // PCM
    f.write_all(&1u16.to_le_bytes())?; // mono
    f.write_all(&sample_rate.to_le_bytes())?;
    f.write_all(&(sample_rate * 2).to_le_bytes())?; // byte rate
    f.write_all(&2u16.to_le_bytes())?; // block align
    f.write_all(&16u16.to_le_bytes())?;
    f.write_all(b"data")?;
    f.write_all(&data_len.to_le_bytes())?;
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        f.write_all(&q.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Deterministic test clip: a chord with a slow envelope, a silent gap, then
/// a chirp with vibrato. The two halves make a natural two-segment signal.
pub fn synthetic_audio(n_samples: usize, sample_rate: u32) -> AudioDataset {
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = i as f64 / sample_rate as f64;
        let u = i as f64 / n_samples as f64;
        let v = if u < 0.47 {
            let env = 0.6 + 0.4 * (2.0 * std::f64::consts::PI * 1.5 * t).sin();
            env * (0.5 * (2.0 * std::f64::consts::PI * 220.0 * t).sin()
                + 0.3 * (2.0 * std::f64::consts::PI * 330.0 * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * 445.0 * t).sin())
        } else if u < 0.53 {
            0.0
        } else {
            let f = 200.0 + 600.0 * (u - 0.53) / 0.47;
            let vib = 1.0 + 0.01 * (2.0 * std::f64::consts::PI * 5.0 * t).sin();
            0.8 * (2.0 * std::f64::consts::PI * f * vib * t).sin()
        };
        samples.push(v);
    }
    let peak = samples.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-12);
    for v in &mut samples {
        *v *= 0.95 / peak;
    }
    AudioDataset::from_samples(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silent_clip_is_all_zero() {
        let ds = AudioDataset::from_samples(vec![0.0; 100], 8000);
        assert!(ds.values.data().iter().all(|&v| v == 0.0));
        assert_eq!(ds.coords.shape(), &[100, 1]);
    }

    #[test]
    fn wav_roundtrip_within_quantization() {
        let ds = synthetic_audio(2000, 8000);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        write_wav(&path, ds.values.data(), 8000).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 2000);
        assert_eq!(back.sample_rate, 8000);
        for (a, b) in ds.values.data().iter().zip(back.values.data()) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{} vs {}", a, b);
        }
    }

    #[test]
    fn stereo_wav_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        // Hand-built 2-channel header with an empty data chunk.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&36u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes()); // stereo
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Audio(_))));
    }

    #[test]
    fn float_wav_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&36u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&3u16.to_le_bytes()); // IEEE float
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&4u16.to_le_bytes());
        bytes.extend_from_slice(&32u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Audio(_))));
    }
}
