//! Fidelity oracles: the single-slit spectrometer (rendered slit spectra against a
//! dispersed and blurred ground truth built from chief rays alone), minimum deviation,
//! impulse probes, flux conservation and the adjoint identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{propagate, Medium, Pose, Ray, Vec3};
use crate::glass::GlassCatalog;
use crate::mapping::MappingTable;
use crate::recon::ForwardOperator;
use crate::renderer::{airy_kernel, code_scene, render, Mask, RenderConfig, RenderError, SpectralCube};
use crate::system::{min_deviation_incidence, prism_faces, prism_surfaces, OpticalSystem, PrismGeometry, SystemError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlitConfig {
    pub height: usize,
    pub width: usize,
    pub slit_column: usize,
    /// Rows excluded at each end of every region.
    pub region_margin: usize,
    /// Ground-truth wavelength samples per native band.
    pub truth_subsamples: usize,
    pub render: RenderConfig,
}

impl Default for SlitConfig {
    fn default() -> Self {
        SlitConfig {
            height: 64,
            width: 64,
            slit_column: 32,
            region_margin: 4,
            truth_subsamples: 10,
            render: RenderConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlitRegion {
    /// Scene rows `[start, end)` averaged.
    pub rows: (usize, usize),
    /// First detector column of `measured` and `truth`.
    pub col0: i64,
    pub measured: Vec<f64>,
    pub truth: Vec<f64>,
    /// `‖measured − truth‖ / ‖truth‖`.
    pub relative_rmse: f64,
}

/// Three test spectra: a blue ramp, a green bump and a red-leaning two-peak profile.
pub fn default_region_spectra(wavelengths: &[f64]) -> Vec<Vec<f64>> {
    let (lo, hi) = (wavelengths[0], *wavelengths.last().unwrap());
    let t = |l: f64| (l - lo) / (hi - lo);
    let g = |l: f64, c: f64, w: f64| (-((l - c) / w).powi(2) / 2.0).exp();
    vec![
        wavelengths.iter().map(|&l| 1.0 - 0.8 * t(l)).collect(),
        wavelengths.iter().map(|&l| 0.1 + 0.9 * g(l, 530.0, 25.0)).collect(),
        wavelengths.iter().map(|&l| 0.2 + 0.5 * g(l, 480.0, 15.0) + 0.8 * g(l, 620.0, 20.0)).collect(),
    ]
}

/// Renders a slit lit by `spectra` (one per horizontal region of equal height) and compares
/// the row-averaged interior of every region with its ground truth.
///
/// Ground truth: each native band is split into `truth_subsamples` equal-share samples over
/// its interval; a sample at chief-ray column `x` spreads over detector columns by the
/// overlap of a unit pixel with the pixel grid, then by the column marginal of the Airy
/// kernel at its wavelength.
pub fn slit_spectrometer(
    system: &OpticalSystem,
    wavelengths: &[f64],
    spectra: &[Vec<f64>],
    config: &SlitConfig,
) -> Result<Vec<SlitRegion>, RenderError> {
    let (h, w) = (config.height, config.width);
    let nb = wavelengths.len();
    if spectra.is_empty() || spectra.iter().any(|s| s.len() != nb) || config.slit_column >= w {
        return Err(RenderError::Shape("one spectrum of N_λ values per region and a slit inside the scene".into()));
    }
    let nr = spectra.len();
    let region_of = |row: usize| (row * nr / h).min(nr - 1);
    let mut scene = SpectralCube::zeros(h, w, wavelengths.to_vec(), system.config.sensor.pitch_um);
    for i in 0..h {
        for j in 0..w {
            for k in 0..nb {
                scene.set(i, j, k, spectra[region_of(i)][k]);
            }
        }
    }
    let coded = code_scene(&scene, &Mask::slit(h, w, config.slit_column))?;
    let acq = render(&coded, system, &config.render, None)?;
    let win = acq.window;

    let fine = crate::renderer::sub_band_wavelengths(wavelengths, config.truth_subsamples);
    let ns = config.truth_subsamples.max(1);
    let marginals: Vec<(usize, Vec<f64>)> = fine
        .iter()
        .map(|&l| {
            let k = airy_kernel(l, system.config.sensor.pitch_um, config.render.airy_diameter_at_520);
            let r = k.radius as i64;
            let m = (-r..=r).map(|dx| (-r..=r).map(|dy| k.at(dy, dx)).sum()).collect();
            (k.radius, m)
        })
        .collect();

    let mut out = Vec::with_capacity(nr);
    for (ri, spectrum) in spectra.iter().enumerate() {
        let start = (ri * h).div_ceil(nr) + config.region_margin;
        let end = ((ri + 1) * h).div_ceil(nr).saturating_sub(config.region_margin);
        if start >= end {
            return Err(RenderError::Shape(format!("region {ri} has no interior rows")));
        }
        let mut truth = vec![0.0; win.cols];
        let mut det_rows = (i64::MAX, i64::MIN);
        for i in start..end {
            let (x, y) = system.scene_pixel_mm(i as f64, config.slit_column as f64, h, w);
            for (f, &l) in fine.iter().enumerate() {
                let Some((col, row)) = system.trace_to_pixels(system.chief_ray(x, y, l)) else {
                    continue;
                };
                if f == fine.len() / 2 {
                    det_rows = (det_rows.0.min(row.round() as i64), det_rows.1.max(row.round() as i64));
                }
                let v = spectrum[f / ns] / ns as f64;
                let c0 = col.floor();
                let frac = col - c0;
                let (radius, m) = &marginals[f];
                for (dc, wgt) in [(0i64, 1.0 - frac), (1, frac)] {
                    let base = c0 as i64 + dc - win.col0;
                    for (t, mv) in m.iter().enumerate() {
                        let c = base + t as i64 - *radius as i64;
                        if c >= 0 && (c as usize) < win.cols {
                            truth[c as usize] += v * wgt * mv;
                        }
                    }
                }
            }
        }
        let rows = (end - start) as f64;
        truth.iter_mut().for_each(|v| *v /= rows);
        let mut measured = vec![0.0; win.cols];
        let (r0, r1) = det_rows;
        for r in r0..=r1 {
            let rr = r - win.row0;
            if rr < 0 || rr as usize >= win.rows {
                continue;
            }
            for (c, m) in measured.iter_mut().enumerate() {
                *m += acq.data[rr as usize * win.cols + c];
            }
        }
        let n_rows = (r1 - r0 + 1).max(1) as f64;
        measured.iter_mut().for_each(|v| *v /= n_rows);
        let num: f64 = measured.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = truth.iter().map(|b| b * b).sum();
        out.push(SlitRegion {
            rows: (start, end),
            col0: win.col0,
            measured,
            truth,
            relative_rmse: (num / den).sqrt(),
        });
    }
    Ok(out)
}

/// Deviation (rad) of an axial ray through a single prism of `glass` set at the analytic
/// minimum-deviation incidence for `wavelength`, with the closed form `2θ − A`.
pub fn min_deviation_check(glass: &str, apex_deg: f64, wavelength: f64) -> Result<(f64, f64), SystemError> {
    let cat = GlassCatalog::embedded();
    let g = cat.get(glass)?;
    let n = g.sellmeier.index(wavelength);
    let apex = apex_deg.to_radians();
    let theta = min_deviation_incidence(n, apex);
    let faces = prism_faces(-theta, &[apex]);
    let geom = PrismGeometry { half_height: 20.0, half_width: 20.0, edge: 1.0 };
    let s = prism_surfaces(&faces, &[Medium::from_glass(&g.model())], &geom, &Pose::identity());
    let out = propagate(Ray::new(Vec3::cst(0.0, 0.0, -50.0), Vec3::cst(0.0, 0.0, 1.0), wavelength), &s);
    if !out.alive {
        return Err(SystemError::DeadChiefRay { wavelength, x_mm: 0.0, y_mm: 0.0 });
    }
    Ok((out.direction.x.atan2(out.direction.z).abs(), 2.0 * theta - apex))
}

/// One impulse render compared with the mapping entry of its voxel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImpulseProbe {
    pub row: usize,
    pub col: usize,
    pub band: usize,
    pub mapped: (f64, f64),
    pub centroid: (f64, f64),
    pub error_px: f64,
}

/// Renders `count` single-voxel scenes at seeded random `(row, column, band)` of an
/// `h × w` cube and measures the blob centroid against the chief-ray mapping.
pub fn impulse_probes(
    system: &OpticalSystem,
    h: usize,
    w: usize,
    count: usize,
    seed: u64,
    config: &RenderConfig,
) -> Result<Vec<ImpulseProbe>, RenderError> {
    let wl = system.config.spectral.wavelengths();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (row, col, band) = (rng.gen_range(0..h), rng.gen_range(0..w), rng.gen_range(0..wl.len()));
        let (x, y) = system.scene_pixel_mm(row as f64, col as f64, h, w);
        let Some(mapped) = system.trace_to_pixels(system.chief_ray(x, y, wl[band])) else {
            return Err(RenderError::Domain(format!("chief ray of ({row}, {col}) at {} nm is lost", wl[band])));
        };
        let mut cube = SpectralCube::zeros(h, w, wl.clone(), system.config.sensor.pitch_um);
        cube.set(row, col, band, 1.0);
        let acq = render(&cube, system, config, None)?;
        let win = acq.window;
        let (mut sc, mut sr, mut s) = (0.0, 0.0, 0.0);
        for r in 0..win.rows {
            for c in 0..win.cols {
                let v = acq.data[r * win.cols + c];
                sc += v * (c as i64 + win.col0) as f64;
                sr += v * (r as i64 + win.row0) as f64;
                s += v;
            }
        }
        if s <= 0.0 {
            return Err(RenderError::Domain(format!("impulse at ({row}, {col}, {band}) deposited no flux")));
        }
        let centroid = (sc / s, sr / s);
        let error_px = (centroid.0 - mapped.0).hypot(centroid.1 - mapped.1);
        out.push(ImpulseProbe { row, col, band, mapped, centroid, error_px });
    }
    Ok(out)
}

/// Rendered total against the cube total, with the Monte-Carlo standard error of the
/// deposited fraction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FluxCheck {
    pub cube_total: f64,
    pub acquisition_total: f64,
    pub standard_error: f64,
}

impl FluxCheck {
    /// Within `k` standard errors, with a floating-point floor.
    pub fn within(&self, k: f64) -> bool {
        let d = (self.acquisition_total - self.cube_total).abs();
        d <= k * self.standard_error + 1e-9 * self.cube_total.abs()
    }
}

pub fn flux_check(system: &OpticalSystem, cube: &SpectralCube, config: &RenderConfig) -> Result<FluxCheck, RenderError> {
    let acq = render(cube, system, config, None)?;
    Ok(FluxCheck {
        cube_total: cube.total(),
        acquisition_total: acq.total(),
        standard_error: acq.stats.flux_variance.sqrt(),
    })
}

/// Largest relative gap `|⟨Φx, y⟩ − ⟨x, Φᵀy⟩| / |⟨Φx, y⟩|` over `pairs` random pairs.
pub fn adjoint_check(op: &ForwardOperator, pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x: Vec<f64> = (0..op.cube_len()).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..op.window.len()).map(|_| rng.gen()).collect();
        let lhs: f64 = op.forward(&x).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(op.adjoint(&y)).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(f64::MIN_POSITIVE));
    }
    worst
}

/// Largest `|y_d(λ_max) − y_d(λ_min)|` (pixels) over the mapping grid.
pub fn max_y_spread(mapping: &MappingTable) -> f64 {
    let nb = mapping.bands();
    let mut worst: f64 = 0.0;
    for i in 0..mapping.height {
        for j in 0..mapping.width {
            if let (Some(a), Some(b)) = (mapping.get(i, j, 0), mapping.get(i, j, nb - 1)) {
                worst = worst.max((b.1 - a.1).abs());
            }
        }
    }
    worst
}

/// Whether `x_d` strictly increases with wavelength at every grid point.
pub fn x_monotone(mapping: &MappingTable) -> bool {
    let nb = mapping.bands();
    (0..mapping.height).all(|i| {
        (0..mapping.width).all(|j| {
            (1..nb).all(|k| match (mapping.get(i, j, k - 1), mapping.get(i, j, k)) {
                (Some(a), Some(b)) => b.0 > a.0,
                _ => false,
            })
        })
    })
}
