//! Mapping-aware cube reconstruction from a single coded acquisition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::MappingTable;
use crate::renderer::{Acquisition, Mask, SpectralCube, Window};

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("iterate became non-finite at iteration {0}")]
    NonFinite(usize),
    #[error("{0}")]
    Domain(String),
}

/// Bilinear footprint of one voxel on the detector window.
#[derive(Clone, Copy, Debug)]
struct Footprint {
    idx: [usize; 4],
    w: [f64; 4],
}

fn footprint(window: &Window, col: f64, row: f64) -> Footprint {
    let c0 = col.floor();
    let r0 = row.floor();
    let (fx, fy) = (col - c0, row - r0);
    let mut f = Footprint { idx: [0; 4], w: [0.0; 4] };
    let taps = [(0, 0, (1.0 - fx) * (1.0 - fy)), (0, 1, fx * (1.0 - fy)), (1, 0, (1.0 - fx) * fy), (1, 1, fx * fy)];
    for (t, (dr, dc, w)) in taps.into_iter().enumerate() {
        let r = r0 as i64 + dr - window.row0;
        let c = c0 as i64 + dc - window.col0;
        if r >= 0 && c >= 0 && (r as usize) < window.rows && (c as usize) < window.cols {
            f.idx[t] = r as usize * window.cols + c as usize;
            f.w[t] = w;
        }
    }
    f
}

/// Masking followed by bilinear splatting along the mapping, summed over bands.
///
/// With `subsamples = n > 1` the mapping holds `n` consecutive entries per cube band (the
/// sub-band wavelengths used for rendering) and each band value is split evenly over them.
#[derive(Clone, Debug)]
pub struct ForwardOperator {
    pub mapping: MappingTable,
    pub mask: Mask,
    pub window: Window,
    pub subsamples: usize,
    footprints: Vec<Footprint>,
    /// Mask value over `subsamples`, per mapping entry; zero for missing entries.
    weights: Vec<f64>,
}

impl ForwardOperator {
    pub fn new(mapping: MappingTable, mask: Mask, window: Window) -> Result<Self, ReconError> {
        Self::integrating(mapping, 1, mask, window)
    }

    pub fn integrating(mapping: MappingTable, subsamples: usize, mask: Mask, window: Window) -> Result<Self, ReconError> {
        if (mask.height, mask.width) != (mapping.height, mapping.width) {
            return Err(ReconError::Geometry(format!(
                "mask {}×{} vs mapping {}×{}",
                mask.height, mask.width, mapping.height, mapping.width
            )));
        }
        if subsamples == 0 || mapping.bands() % subsamples != 0 {
            return Err(ReconError::Geometry(format!(
                "{} mapping bands do not split into groups of {subsamples}",
                mapping.bands()
            )));
        }
        let nb = mapping.bands();
        let share = 1.0 / subsamples as f64;
        let mut footprints = Vec::with_capacity(mapping.entries.len());
        let mut weights = Vec::with_capacity(mapping.entries.len());
        for (v, e) in mapping.entries.iter().enumerate() {
            let m = mask.data[v / nb] as f64 * share;
            match e {
                Some((c, r)) => {
                    footprints.push(footprint(&window, *c, *r));
                    weights.push(m);
                }
                None => {
                    footprints.push(Footprint { idx: [0; 4], w: [0.0; 4] });
                    weights.push(0.0);
                }
            }
        }
        Ok(ForwardOperator { mapping, mask, window, subsamples, footprints, weights })
    }

    /// Operator for `acq` after checking that the mapping lands inside its window.
    pub fn for_acquisition(mapping: MappingTable, mask: Mask, acq: &Acquisition) -> Result<Self, ReconError> {
        check_geometry(&mapping, acq)?;
        Self::new(mapping, mask, acq.window)
    }

    /// Sub-band integrating operator for `acq`.
    pub fn integrating_for(
        mapping: MappingTable,
        subsamples: usize,
        mask: Mask,
        acq: &Acquisition,
    ) -> Result<Self, ReconError> {
        check_geometry(&mapping, acq)?;
        Self::integrating(mapping, subsamples, mask, acq.window)
    }

    pub fn bands(&self) -> usize {
        self.mapping.bands() / self.subsamples
    }

    pub fn cube_len(&self) -> usize {
        self.mapping.entries.len() / self.subsamples
    }

    /// Cube wavelengths: the mean of each sub-band group.
    pub fn wavelengths(&self) -> Vec<f64> {
        self.mapping.wavelengths.chunks(self.subsamples).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cube_len(), "cube size");
        let mut y = vec![0.0; self.window.len()];
        let n = self.subsamples;
        for (e, (f, m)) in self.footprints.iter().zip(&self.weights).enumerate() {
            let s = x[e / n] * m;
            if s == 0.0 {
                continue;
            }
            for t in 0..4 {
                y[f.idx[t]] += s * f.w[t];
            }
        }
        y
    }

    fn gather(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.window.len(), "acquisition size");
        let n = self.subsamples;
        self.footprints
            .par_chunks(n)
            .zip(self.weights.par_chunks(n))
            .map(|(fs, ms)| {
                fs.iter()
                    .zip(ms)
                    .filter(|(_, m)| **m != 0.0)
                    .map(|(f, m)| m * (0..4).map(|t| f.w[t] * y[f.idx[t]]).sum::<f64>())
                    .sum()
            })
            .collect()
    }

    pub fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.gather(y)
    }

    /// Bilinear read of `y` at every mapped position, averaged over sub-bands, ignoring the
    /// mask; missing entries read 0.
    pub fn read(&self, y: &[f64]) -> Vec<f64> {
        let unmasked = ForwardOperator {
            mask: Mask::ones(self.mask.height, self.mask.width),
            weights: self
                .mapping
                .entries
                .iter()
                .map(|e| if e.is_some() { 1.0 / self.subsamples as f64 } else { 0.0 })
                .collect(),
            ..self.clone()
        };
        unmasked.gather(y)
    }

    /// Largest eigenvalue of `ΦᵀΦ` by power iteration.
    pub fn lipschitz(&self, iterations: usize) -> f64 {
        let n = self.cube_len();
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 * 0.01).collect();
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            x.iter_mut().for_each(|v| *v /= norm);
            let y = self.adjoint(&self.forward(&x));
            lambda = y.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            x = y;
        }
        lambda
    }

    pub fn cube_from(&self, data: Vec<f64>, pitch_um: f64) -> SpectralCube {
        SpectralCube {
            height: self.mapping.height,
            width: self.mapping.width,
            wavelengths: self.wavelengths(),
            pitch_um,
            data,
        }
    }
}

/// The mapping must fall at least partly inside the acquisition window and share its pitch.
pub fn check_geometry(mapping: &MappingTable, acq: &Acquisition) -> Result<(), ReconError> {
    if (mapping.pitch_um - acq.pitch_um).abs() > 1e-9 * acq.pitch_um {
        return Err(ReconError::Geometry(format!(
            "mapping pitch {} µm vs acquisition pitch {} µm",
            mapping.pitch_um, acq.pitch_um
        )));
    }
    let Some(((c0, r0), (c1, r1))) = mapping.bounds() else {
        return Err(ReconError::Geometry("mapping has no surviving entries".into()));
    };
    let w = &acq.window;
    let inside = |c: f64, r: f64| {
        c >= w.col0 as f64 - 1.0
            && r >= w.row0 as f64 - 1.0
            && c <= (w.col0 + w.cols as i64) as f64
            && r <= (w.row0 + w.rows as i64) as f64
    };
    if !(inside(c0, r0) && inside(c1, r1)) {
        return Err(ReconError::Geometry(format!(
            "mapping {}×{}×{} spans columns {c0:.1}..{c1:.1}, rows {r0:.1}..{r1:.1}; acquisition {}×{} covers columns {}..{}, rows {}..{}",
            mapping.height,
            mapping.width,
            mapping.bands(),
            w.rows,
            w.cols,
            w.col0,
            w.col0 + w.cols as i64 - 1,
            w.row0,
            w.row0 + w.rows as i64 - 1
        )));
    }
    Ok(())
}

/// `I = A ∘ f`: bilinear read of the acquisition at every mapped position; missing entries
/// read 0 and are counted.
pub fn init_cube(acq: &Acquisition, mapping: &MappingTable) -> Result<(SpectralCube, usize), ReconError> {
    check_geometry(mapping, acq)?;
    let op = ForwardOperator::new(mapping.clone(), Mask::ones(mapping.height, mapping.width), acq.window)?;
    Ok((op.cube_from(op.read(&acq.data), acq.pitch_um), mapping.missing()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvConfig {
    pub iterations: usize,
    pub tv_weight: f64,
    /// Weight of spectral differences relative to spatial ones inside the TV term.
    pub spectral_weight: f64,
    /// Dual iterations of the TV proximal step.
    pub inner_iterations: usize,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig { iterations: 200, tv_weight: 0.05, spectral_weight: 2.0, inner_iterations: 10 }
    }
}

#[derive(Clone, Debug)]
pub struct TvResult {
    pub cube: SpectralCube,
    pub best_iteration: usize,
    /// Data residual `‖Φx − A‖` of every iterate, starting with the initialization.
    pub residuals: Vec<f64>,
}

/// Forward differences along rows, columns and bands (zero at the far border); the band
/// difference is scaled by `mu`.
fn gradient(x: &[f64], dims: (usize, usize, usize), mu: f64, g: &mut [Vec<f64>; 3]) {
    let (h, w, b) = dims;
    for i in 0..h {
        for j in 0..w {
            for k in 0..b {
                let p = (i * w + j) * b + k;
                g[0][p] = if i + 1 < h { x[p + w * b] - x[p] } else { 0.0 };
                g[1][p] = if j + 1 < w { x[p + b] - x[p] } else { 0.0 };
                g[2][p] = if k + 1 < b { mu * (x[p + 1] - x[p]) } else { 0.0 };
            }
        }
    }
}

/// Divergence, the negative adjoint of [`gradient`].
fn divergence(p: &[Vec<f64>; 3], dims: (usize, usize, usize), mu: f64, out: &mut [f64]) {
    let (h, w, b) = dims;
    for i in 0..h {
        for j in 0..w {
            for k in 0..b {
                let q = (i * w + j) * b + k;
                let mut d = 0.0;
                if i + 1 < h {
                    d += p[0][q];
                }
                if i > 0 {
                    d -= p[0][q - w * b];
                }
                if j + 1 < w {
                    d += p[1][q];
                }
                if j > 0 {
                    d -= p[1][q - b];
                }
                if k + 1 < b {
                    d += mu * p[2][q];
                }
                if k > 0 {
                    d -= mu * p[2][q - 1];
                }
                out[q] = d;
            }
        }
    }
}

/// `argmin_x ½‖x − z‖² + λ·TV(x)` over `x ≥ 0` by fast gradient projection on the dual;
/// `mu` weights the spectral differences against the spatial ones.
pub fn tv_prox(z: &[f64], dims: (usize, usize, usize), lambda: f64, mu: f64, iterations: usize) -> Vec<f64> {
    let proj = |v: f64| v.max(0.0);
    if lambda <= 0.0 || iterations == 0 {
        return z.iter().map(|&v| proj(v)).collect();
    }
    let n = z.len();
    let mut p = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut r = p.clone();
    let mut g = p.clone();
    let mut div = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut t = 1.0f64;
    let step = 1.0 / (4.0 * (2.0 + mu * mu) * lambda);
    for _ in 0..iterations {
        divergence(&r, dims, mu, &mut div);
        for q in 0..n {
            x[q] = proj(z[q] + lambda * div[q]);
        }
        gradient(&x, dims, mu, &mut g);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        for q in 0..n {
            let a = r[0][q] + step * g[0][q];
            let b = r[1][q] + step * g[1][q];
            let c = r[2][q] + step * g[2][q];
            let s = (a * a + b * b + c * c).sqrt().max(1.0);
            let (na, nb, nc) = (a / s, b / s, c / s);
            r[0][q] = na + beta * (na - p[0][q]);
            r[1][q] = nb + beta * (nb - p[1][q]);
            r[2][q] = nc + beta * (nc - p[2][q]);
            p[0][q] = na;
            p[1][q] = nb;
            p[2][q] = nc;
        }
        t = t_next;
    }
    divergence(&p, dims, mu, &mut div);
    (0..n).map(|q| proj(z[q] + lambda * div[q])).collect()
}

fn residual(op: &ForwardOperator, x: &[f64], a: &[f64]) -> f64 {
    op.forward(x).iter().zip(a).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

/// Accelerated proximal gradient on `½‖Φx − A‖² + w·TV₃D(x)`, `x ≥ 0`, started from the
/// mapped initialization rescaled by the least-squares factor. Returns the iterate with
/// the smallest data residual.
pub fn reconstruct_tv(acq: &Acquisition, op: &ForwardOperator, config: &TvConfig) -> Result<TvResult, ReconError> {
    if acq.data.len() != op.window.len() || acq.window != op.window {
        return Err(ReconError::Geometry("operator window differs from the acquisition window".into()));
    }
    let a = &acq.data;
    let dims = (op.mapping.height, op.mapping.width, op.bands());
    check_geometry(&op.mapping, acq)?;
    let mut x = op.read(a);
    let fx = op.forward(&x);
    let den: f64 = fx.iter().map(|v| v * v).sum();
    if den > 0.0 {
        let s = fx.iter().zip(a).map(|(u, v)| u * v).sum::<f64>() / den;
        x.iter_mut().for_each(|v| *v *= s.max(0.0));
    }
    let mut residuals = vec![residual(op, &x, a)];
    let mut best = (residuals[0], 0, x.clone());
    if config.iterations == 0 {
        return Ok(TvResult { cube: op.cube_from(x, acq.pitch_um), best_iteration: 0, residuals });
    }
    let l = op.lipschitz(30).max(1e-12) * 1.01;
    let mut y = x.clone();
    let mut t = 1.0f64;
    for it in 1..=config.iterations {
        let r: Vec<f64> = op.forward(&y).iter().zip(a).map(|(u, v)| u - v).collect();
        let g = op.adjoint(&r);
        let z: Vec<f64> = y.iter().zip(&g).map(|(u, v)| u - v / l).collect();
        let x_next = tv_prox(&z, dims, config.tv_weight / l, config.spectral_weight, config.inner_iterations);
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(ReconError::NonFinite(it));
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        y = x_next.iter().zip(&x).map(|(u, v)| u + beta * (u - v)).collect();
        x = x_next;
        t = t_next;
        let res = residual(op, &x, a);
        residuals.push(res);
        if res < best.0 {
            best = (res, it, x.clone());
        }
    }
    Ok(TvResult { cube: op.cube_from(best.2, acq.pitch_um), best_iteration: best.1, residuals })
}

/// Reconstruction quality against a reference scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub rmse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub sam_rad: f64,
    pub sam_normalized: f64,
    /// Pixels skipped by SAM because one spectrum is zero.
    pub sam_excluded: usize,
}

pub const PSNR_CAP_DB: f64 = 100.0;

fn gaussian_window() -> [f64; 11] {
    let mut w = [0.0; 11];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / (2.0 * 1.5 * 1.5)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean SSIM of one band over all fully contained 11×11 Gaussian windows
/// (global statistics when the band is smaller than the window).
fn ssim_band(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let index = |ma: f64, mb: f64, va: f64, vb: f64, cov: f64| {
        ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
    };
    if h < 11 || w < 11 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
        let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        return index(ma, mb, va, vb, cov);
    }
    let g = gaussian_window();
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..=h - 11 {
        for j in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in 0..11 {
                for dj in 0..11 {
                    let wgt = g[di] * g[dj];
                    let p = (i + di) * w + j + dj;
                    ma += wgt * a[p];
                    mb += wgt * b[p];
                    saa += wgt * a[p] * a[p];
                    sbb += wgt * b[p] * b[p];
                    sab += wgt * a[p] * b[p];
                }
            }
            acc += index(ma, mb, saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            count += 1;
        }
    }
    acc / count as f64
}

pub fn metrics(truth: &SpectralCube, estimate: &SpectralCube) -> Result<QualityReport, ReconError> {
    if (truth.height, truth.width, truth.bands()) != (estimate.height, estimate.width, estimate.bands()) {
        return Err(ReconError::Geometry(format!(
            "truth {}×{}×{} vs estimate {}×{}×{}",
            truth.height,
            truth.width,
            truth.bands(),
            estimate.height,
            estimate.width,
            estimate.bands()
        )));
    }
    let n = truth.data.len() as f64;
    let mse = truth.data.iter().zip(&estimate.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let psnr = if mse > 0.0 { (-10.0 * mse.log10()).min(PSNR_CAP_DB) } else { PSNR_CAP_DB };
    let (h, w, nb) = (truth.height, truth.width, truth.bands());
    let ssim = (0..nb)
        .into_par_iter()
        .map(|k| {
            let a: Vec<f64> = (0..h * w).map(|p| truth.data[p * nb + k]).collect();
            let b: Vec<f64> = (0..h * w).map(|p| estimate.data[p * nb + k]).collect();
            ssim_band(&a, &b, h, w)
        })
        .sum::<f64>()
        / nb as f64;
    let mut sam = 0.0;
    let mut counted = 0usize;
    for p in 0..h * w {
        let a = &truth.data[p * nb..(p + 1) * nb];
        let b = &estimate.data[p * nb..(p + 1) * nb];
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb2 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb2 == 0.0 {
            continue;
        }
        let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb2);
        sam += c.clamp(-1.0, 1.0).acos();
        counted += 1;
    }
    let sam_rad = if counted > 0 { sam / counted as f64 } else { 0.0 };
    Ok(QualityReport {
        rmse: mse.sqrt(),
        psnr_db: psnr,
        ssim,
        sam_rad,
        sam_normalized: sam_rad / std::f64::consts::FRAC_PI_2,
        sam_excluded: h * w - counted,
    })
}
