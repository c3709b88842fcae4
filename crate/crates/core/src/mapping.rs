//! Spatio-spectral mapping, spot diagrams and distortion maps.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::designer::{distortion_tensor, DesignError, DistortionTensor};
use crate::io::{Container, IoError};
use crate::sampling::{hexapolar, hexapolar_rings_for};
use crate::system::{OpticalSystem, CENTRAL_WAVELENGTH};

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("{0}")]
    Domain(String),
    #[error("no ray reaches the detector from field ({x_mm} mm, {y_mm} mm) at {wavelength} nm")]
    AllRaysDead { x_mm: f64, y_mm: f64, wavelength: f64 },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Detector position `(column, row)` in fractional sensor pixels of every scene pixel and band.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingTable {
    pub system: String,
    pub height: usize,
    pub width: usize,
    pub wavelengths: Vec<f64>,
    pub pitch_um: f64,
    /// Row-major over `(row, column, band)`; `None` where the chief ray is lost.
    pub entries: Vec<Option<(f64, f64)>>,
}

impl MappingTable {
    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> Option<(f64, f64)> {
        self.entries[(row * self.width + col) * self.bands() + band]
    }

    pub fn missing(&self) -> usize {
        self.entries.iter().filter(|e| e.is_none()).count()
    }

    /// Index of the central scene pixel.
    pub fn centre(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// Band closest to 520 nm.
    pub fn central_band(&self) -> usize {
        (0..self.bands())
            .min_by(|&a, &b| {
                (self.wavelengths[a] - CENTRAL_WAVELENGTH).abs().total_cmp(&(self.wavelengths[b] - CENTRAL_WAVELENGTH).abs())
            })
            .unwrap_or(0)
    }

    /// Smallest and largest `(column, row)` over all surviving entries.
    pub fn bounds(&self) -> Option<((f64, f64), (f64, f64))> {
        let mut it = self.entries.iter().flatten();
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), &(c, r)| ((lo.0.min(c), lo.1.min(r)), (hi.0.max(c), hi.1.max(r)))))
    }

    /// Same table shifted by `(dc, dr)` pixels.
    pub fn translated(&self, dc: f64, dr: f64) -> Self {
        MappingTable {
            entries: self.entries.iter().map(|e| e.map(|(c, r)| (c + dc, r + dr))).collect(),
            ..self.clone()
        }
    }

    /// This table translated so that its central pixel at the central band lands where
    /// `other` places it.
    pub fn aligned_to(&self, other: &MappingTable) -> Result<Self, MappingError> {
        let (r, c) = self.centre();
        let a = self.get(r, c, self.central_band()).ok_or_else(|| MappingError::Domain("centre entry missing".into()))?;
        let (r2, c2) = other.centre();
        let b = other
            .get(r2, c2, other.central_band())
            .ok_or_else(|| MappingError::Domain("reference centre entry missing".into()))?;
        Ok(self.translated(b.0 - a.0, b.1 - a.1))
    }

    /// Rectangular-window rule: unit magnification about the centre, shifted along x by the
    /// integer spread of the central pixel at each band; rows follow the central band.
    pub fn x_shift_only(&self) -> Result<Self, MappingError> {
        let (rc, cc) = self.centre();
        let kc = self.central_band();
        let base = self.get(rc, cc, kc).ok_or_else(|| MappingError::Domain("centre entry missing".into()))?;
        let mut shifts = Vec::with_capacity(self.bands());
        for k in 0..self.bands() {
            let e = self.get(rc, cc, k).ok_or_else(|| MappingError::Domain(format!("centre entry missing at band {k}")))?;
            shifts.push((e.0 - base.0).round());
        }
        let (c0, r0) = (base.0.round(), base.1.round());
        let mut entries = Vec::with_capacity(self.entries.len());
        for i in 0..self.height {
            for j in 0..self.width {
                for s in &shifts {
                    entries.push(Some((c0 + (j as f64 - cc as f64) + s, r0 + (i as f64 - rc as f64))));
                }
            }
        }
        Ok(MappingTable { system: format!("{} (x-shift)", self.system), entries, ..self.clone() })
    }

    /// Two-channel container `(column, row)`; missing entries are NaN.
    pub fn to_container(&self) -> Container {
        let mut data = Vec::with_capacity(self.entries.len() * 2);
        for e in &self.entries {
            let (c, r) = e.unwrap_or((f64::NAN, f64::NAN));
            data.push(c as f32);
            data.push(r as f32);
        }
        Container {
            height: self.height,
            width: self.width,
            channels: 2,
            pitch_um: self.pitch_um,
            origin: (0.0, 0.0),
            wavelengths: self.wavelengths.clone(),
            data,
        }
    }

    pub fn from_container(c: &Container, system: &str) -> Result<Self, MappingError> {
        if c.channels != 2 {
            return Err(MappingError::Domain(format!("mapping container needs 2 channels, found {}", c.channels)));
        }
        let entries = c
            .data
            .chunks_exact(2)
            .map(|p| (p[0].is_finite() && p[1].is_finite()).then(|| (p[0] as f64, p[1] as f64)))
            .collect();
        Ok(MappingTable {
            system: system.to_string(),
            height: c.height,
            width: c.width,
            wavelengths: c.wavelengths.clone(),
            pitch_um: c.pitch_um,
            entries,
        })
    }
}

/// Chief-ray mapping of an `height × width` scene centred on the axis at sensor pitch.
pub fn build_mapping(system: &OpticalSystem, height: usize, width: usize, wavelengths: &[f64]) -> MappingTable {
    let entries: Vec<Option<(f64, f64)>> = (0..height)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..width).flat_map(move |j| {
                let (x, y) = system.scene_pixel_mm(i as f64, j as f64, height, width);
                wavelengths.iter().map(move |&l| system.trace_to_pixels(system.chief_ray(x, y, l)))
            })
        })
        .collect();
    MappingTable {
        system: system.config.name.label().to_string(),
        height,
        width,
        wavelengths: wavelengths.to_vec(),
        pitch_um: system.config.sensor.pitch_um,
        entries,
    }
}

/// Detector hits of one field point at one wavelength.
#[derive(Clone, Debug, PartialEq)]
pub struct SpotDiagram {
    /// Sensor-plane coordinates, µm.
    pub points: Vec<(f64, f64)>,
    pub centroid: (f64, f64),
    pub rms_radius: f64,
    pub wavelength: f64,
    pub field_point: (f64, f64),
    pub lost: usize,
}

impl SpotDiagram {
    pub fn from_points(points: Vec<(f64, f64)>, wavelength: f64, field_point: (f64, f64), lost: usize) -> Self {
        let n = points.len() as f64;
        let cx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let cy = points.iter().map(|p| p.1).sum::<f64>() / n;
        let ms = points.iter().map(|p| (p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sum::<f64>() / n;
        SpotDiagram { points, centroid: (cx, cy), rms_radius: ms.sqrt(), wavelength, field_point, lost }
    }

    /// Centroid in fractional sensor pixels `(column, row)`.
    pub fn centroid_pixels(&self, system: &OpticalSystem) -> (f64, f64) {
        system.mm_to_pixels(self.centroid.0 * 1e-3, self.centroid.1 * 1e-3)
    }
}

/// Hexapolar fill of the NA cone from `field_mm`, with at least `ray_count` rays.
pub fn psf(system: &OpticalSystem, field_mm: (f64, f64), wavelength: f64, ray_count: usize) -> Result<SpotDiagram, MappingError> {
    if ray_count < 7 {
        return Err(MappingError::Domain(format!("ray count must be at least 7, got {ray_count}")));
    }
    let pupil = hexapolar(hexapolar_rings_for(ray_count));
    let mut pts = Vec::with_capacity(pupil.len());
    let mut lost = 0;
    for (u, v) in pupil {
        match system.trace_to_sensor_mm(system.pupil_ray(field_mm.0, field_mm.1, u, v, wavelength)) {
            Some((x, y)) => pts.push((x * 1e3, y * 1e3)),
            None => lost += 1,
        }
    }
    if pts.is_empty() {
        return Err(MappingError::AllRaysDead { x_mm: field_mm.0, y_mm: field_mm.1, wavelength });
    }
    Ok(SpotDiagram::from_points(pts, wavelength, field_mm, lost))
}

/// Displacement field of a chief-ray grid against the ideal grid.
#[derive(Clone, Debug)]
pub struct DistortionMap {
    pub tensor: DistortionTensor,
}

impl DistortionMap {
    pub fn max_um(&self) -> f64 {
        self.tensor.max().unwrap_or(f64::NAN)
    }

    pub fn mean_um(&self) -> f64 {
        self.tensor.mean().unwrap_or(f64::NAN)
    }

    /// `(x_s, y_s, λ, dx, dy)` rows, µm and nm.
    pub fn vectors(&self) -> Vec<(f64, f64, f64, f64, f64)> {
        let t = &self.tensor;
        let mut out = Vec::new();
        for (k, &l) in t.wavelengths.iter().enumerate() {
            for (i, f) in t.field_um.iter().enumerate() {
                if let (Some(d), Some(id)) = (t.distorted[k][i], t.ideal[k][i]) {
                    out.push((f.0, f.1, l, d.0 - id.0, d.1 - id.1));
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), MappingError> {
        let f = std::fs::File::create(path).map_err(IoError::from)?;
        let mut w = std::io::BufWriter::new(f);
        let mut body = String::from("x_s_um,y_s_um,wavelength_nm,dx_um,dy_um\n");
        for (x, y, l, dx, dy) in self.vectors() {
            body.push_str(&format!("{x:.3},{y:.3},{l:.3},{dx:.6},{dy:.6}\n"));
        }
        w.write_all(body.as_bytes()).map_err(IoError::from)?;
        Ok(())
    }
}

pub fn distortion_map(system: &OpticalSystem, grid_n: usize, wavelengths: &[f64]) -> Result<DistortionMap, MappingError> {
    Ok(DistortionMap { tensor: distortion_tensor(system, grid_n, wavelengths)? })
}
