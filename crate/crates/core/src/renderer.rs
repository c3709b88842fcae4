//! Backward Monte-Carlo rendering of coded hyperspectral scenes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{Container, IoError};
use crate::sampling::{hexapolar, hexapolar_rings_for, latin_hypercube};
use crate::system::{OpticalSystem, CENTRAL_WAVELENGTH};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("{0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Radiance cube indexed by row, column and band.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralCube {
    pub height: usize,
    pub width: usize,
    pub wavelengths: Vec<f64>,
    pub pitch_um: f64,
    pub data: Vec<f64>,
}

impl SpectralCube {
    pub fn zeros(height: usize, width: usize, wavelengths: Vec<f64>, pitch_um: f64) -> Self {
        let n = height * width * wavelengths.len();
        SpectralCube { height, width, wavelengths, pitch_um, data: vec![0.0; n] }
    }

    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, band: usize) -> usize {
        (row * self.width + col) * self.bands() + band
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f64 {
        self.data[self.index(row, col, band)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, band: usize, v: f64) {
        let i = self.index(row, col, band);
        self.data[i] = v;
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn band_total(&self, band: usize) -> f64 {
        self.data.iter().skip(band).step_by(self.bands()).sum()
    }

    /// Values must be finite and non-negative; wavelengths strictly ascending.
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.data.len() != self.height * self.width * self.bands() {
            return Err(RenderError::Shape(format!(
                "{} values for {}×{}×{}",
                self.data.len(),
                self.height,
                self.width,
                self.bands()
            )));
        }
        if self.wavelengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(RenderError::Domain("wavelengths must be strictly ascending".into()));
        }
        if let Some(v) = self.data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(RenderError::Domain(format!("radiance must be finite and non-negative, found {v}")));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        Container {
            height: self.height,
            width: self.width,
            channels: 1,
            pitch_um: self.pitch_um,
            origin: (0.0, 0.0),
            wavelengths: self.wavelengths.clone(),
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self, RenderError> {
        if c.channels != 1 {
            return Err(RenderError::Shape(format!("cube container has {} channels", c.channels)));
        }
        let cube = SpectralCube {
            height: c.height,
            width: c.width,
            wavelengths: c.wavelengths.clone(),
            pitch_um: c.pitch_um,
            data: c.data.iter().map(|&v| v as f64).collect(),
        };
        cube.validate()?;
        Ok(cube)
    }
}

/// Binary coding mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
    pub seed: Option<u64>,
    pub open_ratio: f64,
}

impl Mask {
    pub fn ones(height: usize, width: usize) -> Self {
        Mask { height, width, data: vec![1; height * width], seed: None, open_ratio: 1.0 }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Mask { height, width, data: vec![0; height * width], seed: None, open_ratio: 0.0 }
    }

    /// Exactly `round(ratio · H · W)` open pixels at seeded random positions.
    pub fn random(height: usize, width: usize, open_ratio: f64, seed: u64) -> Result<Self, RenderError> {
        if !(0.0..=1.0).contains(&open_ratio) {
            return Err(RenderError::Domain(format!("open ratio {open_ratio} outside [0, 1]")));
        }
        let n = height * width;
        let open = (open_ratio * n as f64).round() as usize;
        let mut data = vec![0u8; n];
        data[..open].iter_mut().for_each(|v| *v = 1);
        data.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Mask { height, width, data, seed: Some(seed), open_ratio })
    }

    /// Single open column.
    pub fn slit(height: usize, width: usize, column: usize) -> Self {
        let mut m = Self::zeros(height, width);
        for r in 0..height {
            m.data[r * width + column] = 1;
        }
        m.open_ratio = 1.0 / width as f64;
        m
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col] as f64
    }

    pub fn open_fraction(&self) -> f64 {
        self.data.iter().filter(|&&v| v != 0).count() as f64 / self.data.len().max(1) as f64
    }

    pub fn to_pgm_pixels(&self) -> Vec<u8> {
        self.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect()
    }

    /// Pixels at or above half range are open.
    pub fn from_pgm_pixels(width: usize, height: usize, pixels: &[u8]) -> Self {
        let data: Vec<u8> = pixels.iter().map(|&v| u8::from(v >= 128)).collect();
        let mut m = Mask { height, width, data, seed: None, open_ratio: 0.0 };
        m.open_ratio = m.open_fraction();
        m
    }
}

/// Rectangular detector window `[row0, row0 + rows) × [col0, col0 + cols)` in sensor pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub row0: i64,
    pub col0: i64,
    pub rows: usize,
    pub cols: usize,
}

impl Window {
    /// Flat index of the detector pixel nearest to fractional `(col, row)`.
    #[inline]
    pub fn nearest(&self, col: f64, row: f64) -> Option<usize> {
        let r = row.round() as i64 - self.row0;
        let c = col.round() as i64 - self.col0;
        (r >= 0 && c >= 0 && (r as usize) < self.rows && (c as usize) < self.cols)
            .then(|| r as usize * self.cols + c as usize)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Monte-Carlo bookkeeping of a render.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderStats {
    pub rays: u64,
    pub dead: u64,
    pub outside: u64,
    pub flux_in: f64,
    pub flux_deposited: f64,
    /// Binomial variance estimate of the deposited flux.
    pub flux_variance: f64,
}

/// Detector image of a render.
#[derive(Clone, Debug, PartialEq)]
pub struct Acquisition {
    pub window: Window,
    pub pitch_um: f64,
    pub data: Vec<f64>,
    pub rays_per_pixel: usize,
    pub stats: RenderStats,
    pub warnings: Vec<String>,
}

impl Acquisition {
    pub fn zeros(window: Window, pitch_um: f64) -> Self {
        Acquisition {
            window,
            pitch_um,
            data: vec![0.0; window.len()],
            rays_per_pixel: 0,
            stats: RenderStats::default(),
            warnings: Vec::new(),
        }
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.window.cols + col]
    }

    /// Single-band container; the wavelength entry is 0 (panchromatic).
    pub fn to_container(&self) -> Container {
        Container {
            height: self.window.rows,
            width: self.window.cols,
            channels: 1,
            pitch_um: self.pitch_um,
            origin: (self.window.row0 as f64, self.window.col0 as f64),
            wavelengths: vec![0.0],
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self, RenderError> {
        if c.channels != 1 || c.bands() != 1 {
            return Err(RenderError::Shape(format!(
                "acquisition container must hold one band and one channel, found {} and {}",
                c.bands(),
                c.channels
            )));
        }
        if c.origin.0.fract() != 0.0 || c.origin.1.fract() != 0.0 {
            return Err(RenderError::Shape("acquisition origin must be integral".into()));
        }
        let window = Window { row0: c.origin.0 as i64, col0: c.origin.1 as i64, rows: c.height, cols: c.width };
        Ok(Acquisition { data: c.data.iter().map(|&v| v as f64).collect(), ..Self::zeros(window, c.pitch_um) })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub oversampling: usize,
    pub rays_per_pixel: usize,
    /// First-zero diameter of the smoothing Airy disk at 520 nm, pixels.
    pub airy_diameter_at_520: f64,
    pub rng_seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { oversampling: 4, rays_per_pixel: 20, airy_diameter_at_520: 2.5, rng_seed: 0 }
    }
}

impl RenderConfig {
    /// Smallest oversampling covering `spread_px` detector pixels with `bands` native bands.
    pub fn min_oversampling(bands: usize, spread_px: f64) -> usize {
        (spread_px / bands.max(1) as f64).ceil().max(1.0) as usize
    }
}

/// `n` wavelengths per band, uniformly spaced across the band's interval and centred on it.
pub fn sub_band_wavelengths(wavelengths: &[f64], n: usize) -> Vec<f64> {
    let nb = wavelengths.len();
    if n <= 1 || nb < 2 {
        return wavelengths.to_vec();
    }
    let l = wavelengths;
    let mut wl = Vec::with_capacity(nb * n);
    for k in 0..nb {
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(nb - 1));
        let width = (l[hi] - l[lo]) / (hi - lo) as f64;
        for s in 0..n {
            wl.push(l[k] + width * ((s as f64 + 0.5) / n as f64 - 0.5));
        }
    }
    wl
}

/// Splits every band into `n` sub-bands uniformly spaced across the band's own interval
/// (centred on its wavelength), each carrying `1/n` of its native radiance.
pub fn oversample_cube(cube: &SpectralCube, n: usize) -> Result<SpectralCube, RenderError> {
    if n == 0 {
        return Err(RenderError::Domain("oversampling factor must be at least 1".into()));
    }
    if n == 1 {
        return Ok(cube.clone());
    }
    let nb = cube.bands();
    if nb < 2 {
        return Err(RenderError::Domain("oversampling needs at least two bands".into()));
    }
    let wl = sub_band_wavelengths(&cube.wavelengths, n);
    let mut out = SpectralCube::zeros(cube.height, cube.width, wl, cube.pitch_um);
    let inv = 1.0 / n as f64;
    for p in 0..cube.height * cube.width {
        for k in 0..nb {
            let v = cube.data[p * nb + k] * inv;
            for s in 0..n {
                out.data[p * nb * n + k * n + s] = v;
            }
        }
    }
    Ok(out)
}

/// Band-wise product with the mask.
pub fn code_scene(cube: &SpectralCube, mask: &Mask) -> Result<SpectralCube, RenderError> {
    if (mask.height, mask.width) != (cube.height, cube.width) {
        return Err(RenderError::Shape(format!(
            "mask {}×{} vs cube {}×{}",
            mask.height, mask.width, cube.height, cube.width
        )));
    }
    let nb = cube.bands();
    let mut out = cube.clone();
    for (p, m) in mask.data.iter().enumerate() {
        if *m == 0 {
            out.data[p * nb..(p + 1) * nb].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(out)
}

const AIRY_X1: f64 = 3.831_705_970_207_512;
const AIRY_X2: f64 = 7.015_586_669_815_619;

/// Pixel-integrated Airy pattern, truncated at its second dark ring and normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct AiryKernel {
    pub radius: usize,
    /// First-zero radius, pixels.
    pub first_zero_px: f64,
    pub pitch_um: f64,
    pub weights: Vec<f64>,
}

impl AiryKernel {
    pub fn size(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn first_zero_diameter_um(&self) -> f64 {
        2.0 * self.first_zero_px * self.pitch_um
    }

    /// Continuous intensity profile at radius `r` pixels, 1 at the centre.
    pub fn profile(&self, r: f64) -> f64 {
        airy_intensity(AIRY_X1 * r / self.first_zero_px)
    }

    #[inline]
    pub fn at(&self, dy: i64, dx: i64) -> f64 {
        let s = self.size() as i64;
        let r = self.radius as i64;
        self.weights[((dy + r) * s + dx + r) as usize]
    }
}

fn airy_intensity(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0
    } else {
        let a = 2.0 * libm::j1(x) / x;
        a * a
    }
}

/// Airy kernel with first-zero diameter `diameter_at_520 · λ / 520` pixels.
pub fn airy_kernel(wavelength_nm: f64, pitch_um: f64, diameter_at_520: f64) -> AiryKernel {
    const SUB: usize = 16;
    let r0 = 0.5 * diameter_at_520 * wavelength_nm / CENTRAL_WAVELENGTH;
    let r2 = r0 * AIRY_X2 / AIRY_X1;
    let radius = (r2 + 0.5).ceil() as usize;
    let s = 2 * radius + 1;
    let mut w = vec![0.0; s * s];
    for iy in 0..s {
        for ix in 0..s {
            let mut acc = 0.0;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let y = iy as f64 - radius as f64 - 0.5 + (sy as f64 + 0.5) / SUB as f64;
                    let x = ix as f64 - radius as f64 - 0.5 + (sx as f64 + 0.5) / SUB as f64;
                    let r = x.hypot(y);
                    if r <= r2 {
                        acc += airy_intensity(AIRY_X1 * r / r0);
                    }
                }
            }
            w[iy * s + ix] = acc;
        }
    }
    let total: f64 = w.iter().sum();
    if total > 0.0 && total.is_finite() {
        w.iter_mut().for_each(|v| *v /= total);
    } else {
        // Pattern smaller than the subsample grid: a delta.
        w.iter_mut().for_each(|v| *v = 0.0);
        w[radius * s + radius] = 1.0;
    }
    AiryKernel { radius, first_zero_px: r0, pitch_um, weights: w }
}

/// Zero-padded 2-D convolution keeping the image size.
pub fn convolve(image: &[f64], rows: usize, cols: usize, k: &AiryKernel) -> Vec<f64> {
    let mut out = vec![0.0; image.len()];
    let r = k.radius as i64;
    for y in 0..rows as i64 {
        for x in 0..cols as i64 {
            let v = image[(y as usize) * cols + x as usize];
            if v == 0.0 {
                continue;
            }
            for dy in -r..=r {
                let yy = y + dy;
                if yy < 0 || yy >= rows as i64 {
                    continue;
                }
                let row = &mut out[(yy as usize) * cols..(yy as usize + 1) * cols];
                for dx in -r..=r {
                    let xx = x + dx;
                    if xx < 0 || xx >= cols as i64 {
                        continue;
                    }
                    row[xx as usize] += v * k.at(dy, dx);
                }
            }
        }
    }
    out
}

/// Detector window enclosing the chief-ray image of the cube border at every wavelength,
/// widened by `margin` pixels.
pub fn acquisition_window(
    system: &OpticalSystem,
    height: usize,
    width: usize,
    wavelengths: &[f64],
    margin: usize,
) -> Result<Window, RenderError> {
    let mut border = Vec::new();
    for c in 0..width {
        border.push((0, c));
        border.push((height - 1, c));
    }
    for r in 0..height {
        border.push((r, 0));
        border.push((r, width - 1));
    }
    let (mut rmin, mut rmax, mut cmin, mut cmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &l in wavelengths {
        for &(r, c) in &border {
            let (x, y) = system.scene_pixel_mm(r as f64, c as f64, height, width);
            if let Some((col, row)) = system.trace_to_pixels(system.chief_ray(x, y, l)) {
                rmin = rmin.min(row);
                rmax = rmax.max(row);
                cmin = cmin.min(col);
                cmax = cmax.max(col);
            }
        }
    }
    if !rmin.is_finite() {
        return Err(RenderError::Domain("no chief ray reaches the detector".into()));
    }
    let m = margin as i64;
    let row0 = rmin.round() as i64 - m;
    let col0 = cmin.round() as i64 - m;
    Ok(Window {
        row0,
        col0,
        rows: (rmax.round() as i64 + m - row0 + 1) as usize,
        cols: (cmax.round() as i64 + m - col0 + 1) as usize,
    })
}

/// Window margin: Airy support at the longest wavelength plus a few pixels of aberration.
pub fn default_margin(config: &RenderConfig, max_wavelength: f64) -> usize {
    airy_kernel(max_wavelength, 1.0, config.airy_diameter_at_520).radius + 4
}

/// Independent random stream per `(seed, band, pixel)`.
pub fn ray_rng(seed: u64, band: usize, pixel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((band as u64) << 32) | pixel as u64);
    rng
}

struct BandImage {
    image: Vec<f64>,
    stats: RenderStats,
}

fn render_band(
    cube: &SpectralCube,
    band: usize,
    system: &OpticalSystem,
    config: &RenderConfig,
    window: Window,
    pupil: &[(f64, f64)],
) -> BandImage {
    let n = config.rays_per_pixel;
    let l = cube.wavelengths[band];
    let p = system.pitch_mm();
    let mut image = vec![0.0; window.len()];
    let mut st = RenderStats::default();
    let mut order: Vec<usize> = (0..pupil.len()).collect();
    for row in 0..cube.height {
        for col in 0..cube.width {
            let v = cube.get(row, col, band);
            if v == 0.0 {
                continue;
            }
            let pixel = row * cube.width + col;
            let mut rng = ray_rng(config.rng_seed, band, pixel);
            let jitter = latin_hypercube(&mut rng, n);
            order.shuffle(&mut rng);
            let (cx, cy) = system.scene_pixel_mm(row as f64, col as f64, cube.height, cube.width);
            let share = v / n as f64;
            let mut alive = 0usize;
            for (i, (jx, jy)) in jitter.iter().enumerate() {
                let (u, w) = pupil[order[i % pupil.len()]];
                let x = cx + (jx - 0.5) * p;
                let y = cy + (jy - 0.5) * p;
                st.rays += 1;
                match system.trace_to_pixels(system.pupil_ray(x, y, u, w, l)) {
                    Some((c, r)) => match window.nearest(c, r) {
                        Some(idx) => {
                            image[idx] += share;
                            alive += 1;
                        }
                        None => st.outside += 1,
                    },
                    None => st.dead += 1,
                }
            }
            let q = alive as f64 / n as f64;
            st.flux_in += v;
            st.flux_deposited += v * q;
            st.flux_variance += v * v * q * (1.0 - q) / n as f64;
        }
    }
    BandImage { image, stats: st }
}

/// Renders a (coded) cube through `system` into `window`; `None` picks a window covering
/// the whole dispersed image.
///
/// The cube is first oversampled by `config.oversampling`. Bands are traced in parallel
/// and summed in band order.
pub fn render(
    cube: &SpectralCube,
    system: &OpticalSystem,
    config: &RenderConfig,
    window: Option<Window>,
) -> Result<Acquisition, RenderError> {
    cube.validate()?;
    let pitch = system.config.sensor.pitch_um;
    if (cube.pitch_um - pitch).abs() > 1e-9 * pitch {
        return Err(RenderError::Domain(format!("cube pitch {} µm differs from sensor pitch {} µm", cube.pitch_um, pitch)));
    }
    let s = &system.config.sensor;
    if cube.height > s.pixels_y || cube.width > s.pixels_x {
        return Err(RenderError::Domain(format!(
            "cube {}×{} exceeds the {}×{} field of view",
            cube.height, cube.width, s.pixels_y, s.pixels_x
        )));
    }
    if config.rays_per_pixel == 0 {
        return Err(RenderError::Domain("rays per pixel must be positive".into()));
    }
    let over = oversample_cube(cube, config.oversampling)?;
    let window = match window {
        Some(w) => w,
        None => {
            let wl = [over.wavelengths[0], *over.wavelengths.last().unwrap()];
            acquisition_window(system, cube.height, cube.width, &wl, default_margin(config, wl[1]))?
        }
    };
    let pupil = hexapolar(hexapolar_rings_for(config.rays_per_pixel));
    let mut acq = Acquisition::zeros(window, pitch);
    acq.rays_per_pixel = config.rays_per_pixel;
    let bands: Vec<usize> = (0..over.bands()).collect();
    let chunk = rayon::current_num_threads().max(1) * 2;
    for group in bands.chunks(chunk) {
        let images: Vec<(usize, BandImage)> = group
            .par_iter()
            .map(|&b| {
                let mut im = render_band(&over, b, system, config, window, &pupil);
                let k = airy_kernel(over.wavelengths[b], pitch, config.airy_diameter_at_520);
                im.image = convolve(&im.image, window.rows, window.cols, &k);
                (b, im)
            })
            .collect();
        for (b, im) in images {
            for (a, v) in acq.data.iter_mut().zip(&im.image) {
                *a += v;
            }
            let st = &im.stats;
            if st.rays > 0 && 2 * st.dead > st.rays {
                acq.warnings.push(format!(
                    "band {b} ({:.1} nm): {} of {} rays lost",
                    over.wavelengths[b], st.dead, st.rays
                ));
            }
            acq.stats.rays += st.rays;
            acq.stats.dead += st.dead;
            acq.stats.outside += st.outside;
            acq.stats.flux_in += st.flux_in;
            acq.stats.flux_deposited += st.flux_deposited;
            acq.stats.flux_variance += st.flux_variance;
        }
    }
    Ok(acq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::linspace;

    fn wl28() -> Vec<f64> {
        linspace(450.0, 650.0, 28)
    }

    #[test]
    fn oversampling_preserves_flux() {
        let mut c = SpectralCube::zeros(2, 3, wl28(), 10.0);
        for (i, v) in c.data.iter_mut().enumerate() {
            *v = (i % 7) as f64;
        }
        assert_eq!(oversample_cube(&c, 1).unwrap(), c);
        let o = oversample_cube(&c, 4).unwrap();
        assert_eq!(o.bands(), 112);
        assert!((o.total() - c.total()).abs() < 1e-9);
        assert!((o.band_total(0) - c.band_total(0) / 4.0).abs() < 1e-12);
        assert!(oversample_cube(&c, 0).is_err());
        let flat = SpectralCube { data: vec![2.0; 6 * 28], ..c.clone() };
        assert!(oversample_cube(&flat, 4).unwrap().data.iter().all(|&v| v == 0.5));
        for k in 0..28 {
            let mean: f64 = o.wavelengths[4 * k..4 * k + 4].iter().sum::<f64>() / 4.0;
            assert!((mean - c.wavelengths[k]).abs() < 1e-9);
        }
        assert!(o.wavelengths.windows(2).all(|w| (w[1] - w[0] - 200.0 / 27.0 / 4.0).abs() < 1e-9));
    }

    #[test]
    fn coding_examples() {
        let c = SpectralCube { data: vec![1.0; 4 * 4 * 28], ..SpectralCube::zeros(4, 4, wl28(), 10.0) };
        assert_eq!(code_scene(&c, &Mask::ones(4, 4)).unwrap(), c);
        assert_eq!(code_scene(&c, &Mask::zeros(4, 4)).unwrap().total(), 0.0);
        let mut checker = Mask::zeros(4, 4);
        for r in 0..4 {
            for col in 0..4 {
                checker.data[r * 4 + col] = ((r + col) % 2) as u8;
            }
        }
        let coded = code_scene(&c, &checker).unwrap();
        assert_eq!(coded.band_total(3), c.band_total(3) / 2.0);
        assert!(code_scene(&c, &Mask::ones(3, 4)).is_err());
    }

    #[test]
    fn random_mask_ratio() {
        for seed in 0..5 {
            let m = Mask::random(64, 64, 0.5, seed).unwrap();
            assert!((m.open_fraction() - 0.5).abs() < 0.02);
            assert!(m.data.iter().all(|&v| v <= 1));
        }
        assert_eq!(Mask::random(8, 8, 0.3, 1).unwrap(), Mask::random(8, 8, 0.3, 1).unwrap());
    }

    #[test]
    fn airy_kernel_examples() {
        for l in [450.0, 520.0, 650.0] {
            let k = airy_kernel(l, 10.0, 2.5);
            let s: f64 = k.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let k = airy_kernel(520.0, 10.0, 2.5);
        assert!((k.first_zero_diameter_um() - 25.0).abs() < 1e-12);
        assert!(k.profile(1.25).abs() < 1e-12);
        let k = airy_kernel(650.0, 10.0, 2.5);
        assert!((2.0 * k.first_zero_px - 3.125).abs() < 1e-12);
        assert!(k.profile(k.first_zero_px).abs() < 1e-12);
    }

    #[test]
    fn convolution_preserves_interior_flux() {
        let k = airy_kernel(600.0, 10.0, 2.5);
        let mut im = vec![0.0; 15 * 15];
        im[7 * 15 + 7] = 3.0;
        let out = convolve(&im, 15, 15, &k);
        assert!((out.iter().sum::<f64>() - 3.0).abs() < 1e-12);
        assert!((out[7 * 15 + 8] - out[8 * 15 + 7]).abs() < 1e-15);
    }
}
