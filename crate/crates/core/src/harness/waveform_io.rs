//! Waveform persistence.
//!
//! Little-endian binary format:
//! magic `CVQW`, format version (u32), sample_rate (f64, Hz), sample count
//! (u64), layout tag (u8: 0 = real, 1 = complex interleaved), then the body
//! as f64s, interleaved re/im when complex. Round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

use crate::model::ComplexWaveform;

pub const MAGIC: [u8; 4] = *b"CVQW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WaveformIoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("unknown layout tag {0}")]
    UnknownLayout(u8),
    #[error("truncated body: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid waveform: {0}")]
    Invalid(String),
}

/// Writes a complex waveform (layout tag 1).
pub fn persist_waveform(wave: &ComplexWaveform, path: &Path) -> Result<(), WaveformIoError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&MAGIC)?;
    f.write_all(&FORMAT_VERSION.to_le_bytes())?;
    f.write_all(&wave.sample_rate.to_le_bytes())?;
    f.write_all(&(wave.samples.len() as u64).to_le_bytes())?;
    f.write_all(&[1u8])?;
    for s in &wave.samples {
        f.write_all(&s.re.to_le_bytes())?;
        f.write_all(&s.im.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Writes a real trace (layout tag 0).
pub fn persist_real_trace(
    trace: &[f64],
    sample_rate: f64,
    path: &Path,
) -> Result<(), WaveformIoError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&MAGIC)?;
    f.write_all(&FORMAT_VERSION.to_le_bytes())?;
    f.write_all(&sample_rate.to_le_bytes())?;
    f.write_all(&(trace.len() as u64).to_le_bytes())?;
    f.write_all(&[0u8])?;
    for v in trace {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Loads either layout; a real trace comes back with zero imaginary parts.
pub fn load_waveform(path: &Path) -> Result<ComplexWaveform, WaveformIoError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(WaveformIoError::BadMagic { expected: MAGIC, found: magic });
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != FORMAT_VERSION {
        return Err(WaveformIoError::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let mut f64buf = [0u8; 8];
    f.read_exact(&mut f64buf)?;
    let sample_rate = f64::from_le_bytes(f64buf);
    let mut u64buf = [0u8; 8];
    f.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut layout = [0u8; 1];
    f.read_exact(&mut layout)?;
    let per_sample = match layout[0] {
        0 => 8,
        1 => 16,
        other => return Err(WaveformIoError::UnknownLayout(other)),
    };
    let expected = count * per_sample;
    let mut body = Vec::new();
    f.read_to_end(&mut body)?;
    if body.len() != expected {
        return Err(WaveformIoError::Truncated { expected, found: body.len() });
    }
    let mut samples = Vec::with_capacity(count);
    match layout[0] {
        0 => {
            for chunk in body.chunks_exact(8) {
                samples.push(Complex64::new(
                    f64::from_le_bytes(chunk.try_into().unwrap()),
                    0.0,
                ));
            }
        }
        1 => {
            for chunk in body.chunks_exact(16) {
                let re = f64::from_le_bytes(chunk[..8].try_into().unwrap());
                let im = f64::from_le_bytes(chunk[8..].try_into().unwrap());
                samples.push(Complex64::new(re, im));
            }
        }
        _ => unreachable!(),
    }
    ComplexWaveform::new(samples, sample_rate).map_err(|e| WaveformIoError::Invalid(e.to_string()))
}
