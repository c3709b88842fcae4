//! Binary container for cubes, acquisitions and mappings; graymap masks.
//!
//! Container layout (little-endian): magic `CSSI`, `u32` version, `u32` H, W, N_λ and
//! channel count, `f64` pitch (µm), `f64` origin row and column (detector pixels), N_λ `f64`
//! wavelengths (nm), then `f32` samples ordered by row, column, band, channel.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CSSI";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("bad container: {0}")]
    Format(String),
}

/// Dense `H × W × N_λ × C` array with its sampling metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pitch_um: f64,
    /// Detector pixel of sample `(0, 0)`, `(row, column)`.
    pub origin: (f64, f64),
    pub wavelengths: Vec<f64>,
    pub data: Vec<f32>,
}

impl Container {
    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.bands() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), IoError> {
        if self.data.len() != self.len() {
            return Err(IoError::Format(format!("{} samples for shape {}", self.data.len(), self.len())));
        }
        w.write_all(MAGIC)?;
        for v in [VERSION, self.height as u32, self.width as u32, self.bands() as u32, self.channels as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [self.pitch_um, self.origin.0, self.origin.1] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.wavelengths {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, IoError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(IoError::Format("missing CSSI magic".into()));
        }
        let mut u = [0u32; 5];
        for v in u.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        if u[0] != VERSION {
            return Err(IoError::Format(format!("unsupported version {}", u[0])));
        }
        let f = |r: &mut R| -> Result<f64, IoError> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let pitch_um = f(&mut r)?;
        let origin = (f(&mut r)?, f(&mut r)?);
        let (height, width, bands, channels) = (u[1] as usize, u[2] as usize, u[3] as usize, u[4] as usize);
        let mut wavelengths = Vec::with_capacity(bands);
        for _ in 0..bands {
            wavelengths.push(f(&mut r)?);
        }
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(bands))
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| IoError::Format("shape overflows".into()))?;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != n * 4 {
            return Err(IoError::Format(format!("expected {} data bytes, found {}", n * 4, raw.len())));
        }
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Container { height, width, channels, pitch_um, origin, wavelengths, data })
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Writes an 8-bit binary graymap (`P5`).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), IoError> {
    if pixels.len() != width * height {
        return Err(IoError::Format("pixel count does not match size".into()));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads an 8-bit binary graymap; returns `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), IoError> {
    parse_pgm(&std::fs::read(path)?)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), IoError> {
    let bad = |m: &str| IoError::Format(format!("graymap: {m}"));
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("header is not text"))?.to_string());
    }
    if fields[0] != "P5" {
        return Err(bad("only binary P5 is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("invalid header number"));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max == 0 || max > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    let data = &bytes[(i + 1).min(bytes.len())..];
    if data.len() != w * h {
        return Err(bad("pixel data length does not match size"));
    }
    Ok((w, h, data.to_vec()))
}
