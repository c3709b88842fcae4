//! Gradient-based design of the double-Amici prism.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{seed, Dual, Real, ScalarFunction};
use crate::geometry::{intersect, refract, Medium, Pose, Ray, Surface, Vec3};
use std::sync::Arc;

use crate::glass::{CatalogRanges, GlassCatalog, Sellmeier};
use crate::system::{
    build_reference_system, prism_faces, prism_surfaces, sensor_hit, ElementKind, OpticalSystem, PrismGeometry,
    SystemConfig, SystemError, SystemName, CENTRAL_WAVELENGTH,
};

/// Target angular dispersion between the ends of the band, degrees.
pub const DELTA0_DEG: f64 = 0.95;
/// Value returned by trace-based losses when the chief ray is lost.
pub const DEAD_RAY_PENALTY: f64 = 1e6;
/// Temperature of the smooth maximum used for the distortion loss, µm.
pub const SMOOTH_MAX_TEMPERATURE_UM: f64 = 1e-2;
/// Number of optimized scalars: α_c, A₁, A₂ and two normalized (n_d, V_d) pairs.
pub const NPARAM: usize = 7;

pub type D7 = Dual<NPARAM>;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("invalid prism parameters: {0}")]
    InvalidParams(String),
    #[error("loss diverged at iteration {iteration}")]
    Diverged { iteration: usize, last_valid: PrismDesignParams },
    #[error("distortion tensor has no surviving entries")]
    EmptyTensor,
    #[error("glass catalog is empty")]
    EmptyCatalog,
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Double-Amici design: entrance angle, apexes and relaxed glasses `(n_d, V_d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrismDesignParams {
    pub alpha_c_deg: f64,
    pub a1_deg: f64,
    pub a2_deg: f64,
    pub glass1: (f64, f64),
    pub glass2: (f64, f64),
}

impl PrismDesignParams {
    /// Published final design, with its angles rounded to 0.1°.
    pub fn published() -> Self {
        let cat = GlassCatalog::embedded();
        let g1 = cat.get("N-SK2").expect("catalog glass");
        let g2 = cat.get("SF10").expect("catalog glass");
        PrismDesignParams {
            alpha_c_deg: 5.1,
            a1_deg: 29.2,
            a2_deg: 47.9,
            glass1: (g1.nd, g1.vd),
            glass2: (g2.nd, g2.vd),
        }
    }

    /// Published design with angles refined inside their rounding interval for a direct view.
    pub fn rebuilt() -> Self {
        PrismDesignParams { alpha_c_deg: 5.05, a1_deg: 29.234_683, a2_deg: 47.85, ..Self::published() }
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        let bad = |m: String| Err(DesignError::InvalidParams(m));
        for (n, a) in [("A1", self.a1_deg), ("A2", self.a2_deg)] {
            if !(a > 0.0 && a < 80.0) {
                return bad(format!("{n} = {a}° outside (0°, 80°)"));
            }
        }
        if !(self.alpha_c_deg > -45.0 && self.alpha_c_deg < 45.0) {
            return bad(format!("alpha_c = {}° outside (-45°, 45°)", self.alpha_c_deg));
        }
        for (nd, vd) in [self.glass1, self.glass2] {
            if !((1.4..=2.1).contains(&nd) && (15.0..=100.0).contains(&vd)) {
                return bad(format!("glass ({nd}, {vd}) outside the catalog hull"));
            }
        }
        Ok(())
    }

    /// Packs into the optimizer vector: radians and catalog-normalized glass coordinates.
    pub fn to_vector(&self, r: &CatalogRanges) -> [f64; NPARAM] {
        [
            self.alpha_c_deg.to_radians(),
            self.a1_deg.to_radians(),
            self.a2_deg.to_radians(),
            (self.glass1.0 - r.nd_min) / r.nd_span,
            (self.glass1.1 - r.vd_min) / r.vd_span,
            (self.glass2.0 - r.nd_min) / r.nd_span,
            (self.glass2.1 - r.vd_min) / r.vd_span,
        ]
    }

    pub fn from_vector(x: &[f64; NPARAM], r: &CatalogRanges) -> Self {
        PrismDesignParams {
            alpha_c_deg: x[0].to_degrees(),
            a1_deg: x[1].to_degrees(),
            a2_deg: x[2].to_degrees(),
            glass1: (r.nd_min + x[3] * r.nd_span, r.vd_min + x[4] * r.vd_span),
            glass2: (r.nd_min + x[5] * r.nd_span, r.vd_min + x[6] * r.vd_span),
        }
    }

    /// Replaces each glass by its nearest catalog entry.
    pub fn snapped(&self, catalog: &GlassCatalog) -> (Self, [String; 2]) {
        let (g1, _) = catalog.nearest(self.glass1.0, self.glass1.1);
        let (g2, _) = catalog.nearest(self.glass2.0, self.glass2.1);
        (
            PrismDesignParams { glass1: (g1.nd, g1.vd), glass2: (g2.nd, g2.vd), ..self.clone() },
            [g1.name.clone(), g2.name.clone()],
        )
    }
}

/// Weights of the six losses; `w_g` is further multiplied by the iteration number.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_delta: f64,
    pub w_eps: f64,
    pub w_d: f64,
    pub w_t: f64,
    pub w_g: f64,
    pub w_r: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_delta: 1.0, w_eps: 1.0, w_d: 2.5e6, w_t: 5e3, w_g: 1e10, w_r: 10.0 }
    }
}

impl LossWeights {
    /// Weights balanced for radians and micrometres, used by the shipped design run.
    pub fn calibrated() -> Self {
        LossWeights { w_delta: 1e8, w_eps: 1.0, w_d: 1e7, w_t: 1.0, w_g: 1e10, w_r: 10.0 }
    }

    pub fn zero() -> Self {
        LossWeights { w_delta: 0.0, w_eps: 0.0, w_d: 0.0, w_t: 0.0, w_g: 0.0, w_r: 0.0 }
    }
}

/// The six sub-losses at one parameter point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubLosses<S = f64> {
    pub dispersion: S,
    pub distortion: S,
    pub deviation: S,
    pub thickness: S,
    pub glass: S,
    pub tir: S,
}

impl<S: Real> SubLosses<S> {
    pub fn total(&self, w: &LossWeights, iteration: usize) -> S {
        self.dispersion * w.w_delta
            + self.distortion * w.w_eps
            + self.deviation * w.w_d
            + self.thickness * w.w_t
            + self.glass * (w.w_g * iteration as f64)
            + self.tir * w.w_r
    }

    pub fn values(&self) -> SubLosses<f64> {
        SubLosses {
            dispersion: self.dispersion.val(),
            distortion: self.distortion.val(),
            deviation: self.deviation.val(),
            thickness: self.thickness.val(),
            glass: self.glass.val(),
            tir: self.tir.val(),
        }
    }

    pub fn as_array(&self) -> [S; 6] {
        [self.dispersion, self.distortion, self.deviation, self.thickness, self.glass, self.tir]
    }
}

/// How the distortion maximum is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaxKind {
    Exact,
    Smooth,
}

/// Fixed part of the design problem: the (AP) layout around the prism.
#[derive(Clone, Debug)]
pub struct DesignContext {
    pub catalog: Arc<GlassCatalog>,
    pub ranges: CatalogRanges,
    /// Catalog entries in normalized coordinates.
    pub catalog_points: Vec<(f64, f64)>,
    pub lens: Vec<Surface>,
    pub prism_pose: Pose,
    pub prism_geometry: PrismGeometry,
    pub sensor_pose: Pose,
    pub pupil_pose: Pose,
    pub scene_z: f64,
    /// Field points (mm) of the distortion grid; index `centre` is the axis.
    pub grid: Vec<(f64, f64)>,
    pub centre: usize,
    pub wavelengths: [f64; 3],
    pub delta0: f64,
    pub max_kind: MaxKind,
    /// Catalog glasses replacing the relaxed ones; the glass coordinates are then ignored.
    pub fixed_glasses: Option<[Arc<Sellmeier>; 2]>,
}

impl DesignContext {
    /// Layout of the shipped (AP) system with a `n × n` distortion grid.
    pub fn reference(grid_n: usize) -> Result<Self, DesignError> {
        let cfg = build_reference_system(SystemName::AP, &PrismDesignParams::rebuilt())?;
        Self::from_config(&cfg, grid_n)
    }

    pub fn from_config(cfg: &SystemConfig, grid_n: usize) -> Result<Self, DesignError> {
        let catalog = GlassCatalog::embedded();
        let sys = cfg.build_with(&catalog)?;
        let prism_idx = cfg
            .elements
            .iter()
            .position(|e| e.is_dispersive())
            .ok_or_else(|| DesignError::InvalidParams("layout has no prism".into()))?;
        let (geom, n_before) = match &cfg.elements[prism_idx].kind {
            ElementKind::Prism { clear_half_height_mm, clear_half_width_mm, edge_mm, .. } => (
                PrismGeometry { half_height: *clear_half_height_mm, half_width: *clear_half_width_mm, edge: *edge_mm },
                cfg.elements[..prism_idx].iter().map(|e| e.surfaces::<f64>(&catalog).map(|s| s.len())).sum::<Result<usize, _>>()?,
            ),
            _ => unreachable!(),
        };
        let ranges = catalog.ranges();
        let catalog_points = catalog
            .glasses()
            .iter()
            .map(|g| ((g.nd - ranges.nd_min) / ranges.nd_span, (g.vd - ranges.vd_min) / ranges.vd_span))
            .collect();
        Ok(DesignContext {
            catalog: catalog.clone(),
            ranges,
            catalog_points,
            lens: sys.surfaces[..n_before].to_vec(),
            prism_pose: cfg.elements[prism_idx].pose(),
            prism_geometry: geom,
            sensor_pose: sys.sensor_pose,
            pupil_pose: sys.pupil_pose,
            scene_z: cfg.scene_z_mm,
            grid: field_grid(grid_n, half_field_mm(cfg)),
            centre: (grid_n * grid_n) / 2,
            wavelengths: [cfg.spectral.min_nm, CENTRAL_WAVELENGTH, cfg.spectral.max_nm],
            delta0: DELTA0_DEG.to_radians(),
            max_kind: MaxKind::Smooth,
            fixed_glasses: None,
        })
    }

    fn lens_lifted<S: Real>(&self) -> Vec<Surface<S>> {
        self.lens.iter().map(lift_surface).collect()
    }

    /// Prism surfaces for a parameter vector.
    pub fn prism<S: Real>(&self, x: &[S]) -> Vec<Surface<S>> {
        let faces = prism_faces(x[0], &[x[1], x[2], x[1]]);
        let r = &self.ranges;
        let g = |u: S, v: S| Medium::relaxed(u * r.nd_span + r.nd_min, v * r.vd_span + r.vd_min);
        let (m1, m2) = match &self.fixed_glasses {
            Some([a, b]) => (Medium::Sellmeier(a.clone()), Medium::Sellmeier(b.clone())),
            None => (g(x[3], x[4]), g(x[5], x[6])),
        };
        prism_surfaces(&faces, &[m1.clone(), m2, m1], &self.prism_geometry, &lift_pose(&self.prism_pose))
    }

    fn axial_ray<S: Real>(&self, wavelength: f64) -> Ray<S> {
        let z = self.prism_pose.translation.z - 50.0;
        Ray::new(Vec3::cst(0.0, 0.0, z), Vec3::cst(0.0, 0.0, 1.0), wavelength)
    }

    fn penalty<S: Real>(&self, x: &[S]) -> S {
        x[0] * x[0] + DEAD_RAY_PENALTY
    }

    /// Exit angle of the axial chief ray after the prism, about y.
    fn exit_angle<S: Real>(&self, prism: &[Surface<S>], wavelength: f64) -> Option<S> {
        let mut r = self.axial_ray::<S>(wavelength);
        for s in prism {
            let Some(h) = intersect(&r, s) else { return None };
            r = refract(&Ray { origin: h.point, ..r }, h.normal, s.before.index(wavelength), s.after.index(wavelength));
            if !r.alive {
                return None;
            }
        }
        Some(r.direction.x.atan2(r.direction.z))
    }

    pub fn loss_dispersion<S: Real>(&self, x: &[S]) -> S {
        let p = self.prism(x);
        match (self.exit_angle(&p, self.wavelengths[0]), self.exit_angle(&p, self.wavelengths[2])) {
            (Some(a), Some(b)) => (S::cst(self.delta0) - (b - a).abs()).square(),
            _ => self.penalty(x),
        }
    }

    /// Dispersion angle |Δ(λmax) − Δ(λmin)| in radians.
    pub fn dispersion_angle(&self, x: &[f64]) -> Option<f64> {
        let p = self.prism(x);
        Some((self.exit_angle(&p, self.wavelengths[2])? - self.exit_angle(&p, self.wavelengths[0])?).abs())
    }

    /// Signed total deviation α_c + α_c_out + 2A₁ − A₂ (rad).
    pub fn deviation<S: Real>(&self, x: &[S]) -> Option<S> {
        let p = self.prism(x);
        let theta_out = self.exit_angle(&p, CENTRAL_WAVELENGTH)?;
        let faces = prism_faces(x[0], &[x[1], x[2], x[1]]);
        let alpha_out = theta_out - faces[3];
        Some(x[0] + alpha_out + x[1] * 2.0 - x[2])
    }

    pub fn loss_deviation<S: Real>(&self, x: &[S]) -> S {
        match self.deviation(x) {
            Some(d) => d.square(),
            None => self.penalty(x),
        }
    }

    pub fn loss_thickness<S: Real>(&self, x: &[S]) -> S {
        loss_thickness(x[1], x[2])
    }

    pub fn loss_glass<S: Real>(&self, x: &[S]) -> S {
        nearest_sq(&self.catalog_points, x[3], x[4]) + nearest_sq(&self.catalog_points, x[5], x[6])
    }

    /// Signed margins `sin θ_i − sin θ_c` at every interface for the three design wavelengths.
    pub fn tir_margins<S: Real>(&self, x: &[S]) -> Vec<S> {
        let p = self.prism(x);
        let mut out = Vec::new();
        for &l in &self.wavelengths {
            let mut r = self.axial_ray::<S>(l);
            for s in &p {
                let Some(h) = intersect(&r, s) else { break };
                let n1 = s.before.index(l);
                let n2 = s.after.index(l);
                let sin_i = r.direction.cross(h.normal).norm();
                out.push(sin_i - n2 / n1);
                r = refract(&Ray { origin: h.point, ..r }, h.normal, n1, n2);
                if !r.alive {
                    break;
                }
            }
        }
        out
    }

    pub fn loss_tir<S: Real>(&self, x: &[S]) -> S {
        tir_loss(&self.tir_margins(x))
    }

    /// Chief-ray sensor positions (µm, sensor frame) per wavelength and grid point.
    pub fn grid_positions<S: Real>(&self, x: &[S]) -> Vec<Vec<Option<(S, S)>>> {
        let mut surfaces = self.lens_lifted::<S>();
        surfaces.extend(self.prism(x));
        let sensor = lift_pose::<S>(&self.sensor_pose);
        let pupil = self.pupil_pose.translation;
        self.wavelengths
            .iter()
            .map(|&l| {
                self.grid
                    .iter()
                    .map(|&(gx, gy)| {
                        let o = Vec3::cst(gx, gy, self.scene_z);
                        let d = Vec3::cst(pupil.x - gx, pupil.y - gy, pupil.z - self.scene_z);
                        let out = crate::geometry::propagate(Ray::new(o, d, l), &surfaces);
                        sensor_hit(&out, &sensor).map(|p| (p.x * 1e3, p.y * 1e3))
                    })
                    .collect()
            })
            .collect()
    }

    /// Distortion magnitudes (µm) per wavelength and grid point against the ideal grid.
    pub fn distortion_eps<S: Real>(&self, x: &[S]) -> Option<Vec<Vec<Option<S>>>> {
        let pos = self.grid_positions(x);
        let field: Vec<(f64, f64)> = self.grid.iter().map(|&(a, b)| (a * 1e3, b * 1e3)).collect();
        ideal_grid_eps(&field, &pos, self.centre, 1)
    }

    pub fn loss_distortion<S: Real>(&self, x: &[S]) -> S {
        let Some(eps) = self.distortion_eps(x) else { return self.penalty(x) };
        let flat: Vec<S> = eps.into_iter().flatten().flatten().collect();
        if flat.is_empty() {
            return self.penalty(x);
        }
        let m = match self.max_kind {
            MaxKind::Exact => flat.iter().copied().fold(flat[0], |a, b| a.max(b)),
            MaxKind::Smooth => smooth_max(&flat, SMOOTH_MAX_TEMPERATURE_UM),
        };
        m.square()
    }

    pub fn sub_losses<S: Real>(&self, x: &[S]) -> SubLosses<S> {
        SubLosses {
            dispersion: self.loss_dispersion(x),
            distortion: self.loss_distortion(x),
            deviation: self.loss_deviation(x),
            thickness: self.loss_thickness(x),
            glass: self.loss_glass(x),
            tir: self.loss_tir(x),
        }
    }

    pub fn total_loss<S: Real>(&self, x: &[S], w: &LossWeights, iteration: usize) -> S {
        self.sub_losses(x).total(w, iteration)
    }
}

/// One of the six sub-losses, as a differentiable scalar function of the parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTerm {
    Dispersion,
    Distortion,
    Deviation,
    Thickness,
    Glass,
    Tir,
}

impl LossTerm {
    pub const ALL: [LossTerm; 6] = [
        LossTerm::Dispersion,
        LossTerm::Distortion,
        LossTerm::Deviation,
        LossTerm::Thickness,
        LossTerm::Glass,
        LossTerm::Tir,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Dispersion => "dispersion",
            LossTerm::Distortion => "distortion",
            LossTerm::Deviation => "deviation",
            LossTerm::Thickness => "thickness",
            LossTerm::Glass => "glass",
            LossTerm::Tir => "tir",
        }
    }
}

/// A sub-loss bound to its context.
pub struct TermFunction<'a> {
    pub ctx: &'a DesignContext,
    pub term: LossTerm,
}

impl ScalarFunction for TermFunction<'_> {
    fn eval<S: Real>(&self, x: &[S]) -> S {
        match self.term {
            LossTerm::Dispersion => self.ctx.loss_dispersion(x),
            LossTerm::Distortion => self.ctx.loss_distortion(x),
            LossTerm::Deviation => self.ctx.loss_deviation(x),
            LossTerm::Thickness => self.ctx.loss_thickness(x),
            LossTerm::Glass => self.ctx.loss_glass(x),
            LossTerm::Tir => self.ctx.loss_tir(x),
        }
    }
}

fn lift_pose<S: Real>(p: &Pose) -> Pose<S> {
    let mut m = [[S::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = S::cst(p.rotation.m[i][j]);
        }
    }
    Pose { rotation: crate::geometry::Mat3 { m }, translation: p.translation.lift() }
}

fn lift_medium<S: Real>(m: &Medium) -> Medium<S> {
    match m {
        Medium::Vacuum => Medium::Vacuum,
        Medium::Sellmeier(s) => Medium::Sellmeier(s.clone()),
        Medium::Cauchy { a, b } => Medium::Cauchy { a: S::cst(*a), b: S::cst(*b) },
    }
}

fn lift_surface<S: Real>(s: &Surface) -> Surface<S> {
    use crate::geometry::SurfaceKind;
    Surface {
        kind: match s.kind {
            SurfaceKind::Plane => SurfaceKind::Plane,
            SurfaceKind::Sphere { radius } => SurfaceKind::Sphere { radius: S::cst(radius) },
            SurfaceKind::IdealLens { focal } => SurfaceKind::IdealLens { focal: S::cst(focal) },
        },
        pose: lift_pose(&s.pose),
        aperture: s.aperture,
        before: lift_medium(&s.before),
        after: lift_medium(&s.after),
    }
}

/// Half extent (mm) of the field covered by the sensor pixel centres.
pub fn half_field_mm(cfg: &SystemConfig) -> f64 {
    (cfg.sensor.pixels_x.min(cfg.sensor.pixels_y) as f64 - 1.0) / 2.0 * cfg.sensor.pitch_um * 1e-3
}

/// Row-major `n × n` grid over `[-half, half]²`.
pub fn field_grid(n: usize, half: f64) -> Vec<(f64, f64)> {
    let c = crate::system::linspace(-half, half, n);
    let mut out = Vec::with_capacity(n * n);
    for &y in &c {
        for &x in &c {
            out.push((x, y));
        }
    }
    out
}

pub fn loss_thickness<S: Real>(a1: S, a2: S) -> S {
    a1 * a1 * 2.0 + a2 * a2
}

fn nearest_sq<S: Real>(points: &[(f64, f64)], u: S, v: S) -> S {
    let mut best: Option<S> = None;
    for &(pu, pv) in points {
        let d = (u - pu).square() + (v - pv).square();
        best = Some(match best {
            Some(b) => b.min(d),
            None => d,
        });
    }
    best.unwrap_or(S::cst(f64::INFINITY))
}

/// `softplus(2 · max_k margin_k)²`; an empty list counts as a safe margin of −1.
pub fn tir_loss<S: Real>(margins: &[S]) -> S {
    let m = margins.iter().copied().reduce(|a, b| a.max(b)).unwrap_or(S::cst(-1.0));
    (m * 2.0).softplus().square()
}

/// Log-sum-exp maximum with temperature `t`.
pub fn smooth_max<S: Real>(values: &[S], t: f64) -> S {
    let m = values.iter().map(|v| v.val()).fold(f64::NEG_INFINITY, f64::max);
    let mut acc = S::zero();
    for v in values {
        acc += ((*v - m) / t).exp();
    }
    acc.ln() * t + m
}

/// Euclidean norm with a zero derivative at the origin.
fn safe_norm<S: Real>(dx: S, dy: S) -> S {
    let r2 = dx * dx + dy * dy;
    if r2.val() == 0.0 {
        S::zero()
    } else {
        r2.sqrt()
    }
}

/// Distortion against the ideal grid: a single magnification fitted at wavelength index
/// `reference` with the centre point fixed, shifted per wavelength by the centre spread.
///
/// `field` holds the undistorted scene coordinates; `pos[k][i]` the traced positions.
pub fn ideal_grid_eps<S: Real>(
    field: &[(f64, f64)],
    pos: &[Vec<Option<(S, S)>>],
    centre: usize,
    reference: usize,
) -> Option<Vec<Vec<Option<S>>>> {
    let c_ref = pos[reference][centre]?;
    let mut num = S::zero();
    let mut den = 0.0;
    for (i, p) in pos[reference].iter().enumerate() {
        if let Some((px, py)) = p {
            let (fx, fy) = field[i];
            num += (*px - c_ref.0) * fx + (*py - c_ref.1) * fy;
            den += fx * fx + fy * fy;
        }
    }
    if den == 0.0 {
        return None;
    }
    let m = num / den;
    let mut out = Vec::with_capacity(pos.len());
    for row in pos {
        let Some(c) = row[centre] else {
            out.push(vec![None; row.len()]);
            continue;
        };
        out.push(
            row.iter()
                .enumerate()
                .map(|(i, p)| {
                    p.map(|(px, py)| {
                        let (fx, fy) = field[i];
                        safe_norm(px - (m * fx + c.0), py - (m * fy + c.1))
                    })
                })
                .collect(),
        );
    }
    Some(out)
}

/// Distortion magnitudes of a traced system on a regular field grid.
#[derive(Clone, Debug)]
pub struct DistortionTensor {
    pub grid_n: usize,
    pub wavelengths: Vec<f64>,
    /// Scene coordinates of the grid, µm.
    pub field_um: Vec<(f64, f64)>,
    /// `[wavelength][point]`, µm; `None` where the chief ray is lost.
    pub eps: Vec<Vec<Option<f64>>>,
    pub ideal: Vec<Vec<Option<(f64, f64)>>>,
    pub distorted: Vec<Vec<Option<(f64, f64)>>>,
    pub missing: usize,
}

impl DistortionTensor {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.eps.iter().flatten().flatten().copied()
    }

    pub fn max(&self) -> Option<f64> {
        self.values().reduce(f64::max)
    }

    pub fn mean(&self) -> Option<f64> {
        let (s, n) = self.values().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| s / n as f64)
    }
}

/// Traces a `grid_n × grid_n` chief-ray grid over the sensor field at each wavelength.
///
/// The ideal grid uses the magnification fitted at the wavelength closest to 520 nm.
pub fn distortion_tensor(system: &OpticalSystem, grid_n: usize, wavelengths: &[f64]) -> Result<DistortionTensor, DesignError> {
    let half = half_field_mm(&system.config);
    let field = field_grid(grid_n, half);
    let centre = (grid_n * grid_n) / 2;
    let distorted: Vec<Vec<Option<(f64, f64)>>> = wavelengths
        .iter()
        .map(|&l| {
            field
                .iter()
                .map(|&(x, y)| system.trace_to_sensor_mm(system.chief_ray(x, y, l)).map(|(a, b)| (a * 1e3, b * 1e3)))
                .collect()
        })
        .collect();
    let reference = wavelengths
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - CENTRAL_WAVELENGTH).abs().total_cmp(&(b.1 - CENTRAL_WAVELENGTH).abs()))
        .map(|(i, _)| i)
        .ok_or(DesignError::EmptyTensor)?;
    let field_um: Vec<(f64, f64)> = field.iter().map(|&(a, b)| (a * 1e3, b * 1e3)).collect();
    let eps = ideal_grid_eps(&field_um, &distorted, centre, reference).ok_or(DesignError::EmptyTensor)?;
    let ideal = ideal_positions(&field_um, &distorted, centre, reference);
    let missing = eps.iter().flatten().filter(|e| e.is_none()).count();
    if missing == eps.iter().map(|r| r.len()).sum::<usize>() {
        return Err(DesignError::EmptyTensor);
    }
    Ok(DistortionTensor { grid_n, wavelengths: wavelengths.to_vec(), field_um, eps, ideal, distorted, missing })
}

fn ideal_positions(
    field: &[(f64, f64)],
    pos: &[Vec<Option<(f64, f64)>>],
    centre: usize,
    reference: usize,
) -> Vec<Vec<Option<(f64, f64)>>> {
    let Some(c_ref) = pos[reference][centre] else { return vec![vec![None; field.len()]; pos.len()] };
    let (mut num, mut den) = (0.0, 0.0);
    for (i, p) in pos[reference].iter().enumerate() {
        if let Some((px, py)) = p {
            num += (px - c_ref.0) * field[i].0 + (py - c_ref.1) * field[i].1;
            den += field[i].0.powi(2) + field[i].1.powi(2);
        }
    }
    let m = num / den;
    pos.iter()
        .map(|row| match row[centre] {
            Some(c) => field.iter().map(|f| Some((m * f.0 + c.0, m * f.1 + c.1))).collect(),
            None => vec![None; field.len()],
        })
        .collect()
}

/// `(max eps)²` of a tensor, exact maximum.
pub fn loss_distortion(t: &DistortionTensor) -> Result<f64, DesignError> {
    t.max().map(|m| m * m).ok_or(DesignError::EmptyTensor)
}

/// Adam settings; the step decays geometrically from `lr` to `final_lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub final_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: usize,
    /// Angle-only iterations run after snapping, with catalog dispersion.
    #[serde(default)]
    pub refine_iterations: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, final_lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, iterations: 2000, refine_iterations: 0 }
    }
}

impl AdamConfig {
    /// Schedule of the shipped design run.
    pub fn calibrated() -> Self {
        AdamConfig { lr: 1e-3, final_lr: 1e-6, iterations: 2000, refine_iterations: 2000, ..Default::default() }
    }

    /// Step size at `iteration` of a phase lasting `total` iterations.
    pub fn lr_at(&self, iteration: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.lr;
        }
        let t = iteration as f64 / (total - 1) as f64;
        self.lr * (self.final_lr / self.lr).powf(t)
    }
}

/// Everything a design run needs: start point, loss weights, Adam schedule and grid size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignRunConfig {
    pub initial: PrismDesignParams,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    /// Chief-ray grid per side for the distortion loss.
    pub grid_n: usize,
}

impl Default for DesignRunConfig {
    fn default() -> Self {
        DesignRunConfig {
            initial: PrismDesignParams::rebuilt(),
            weights: LossWeights::calibrated(),
            adam: AdamConfig::calibrated(),
            grid_n: 7,
        }
    }
}

impl DesignRunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("design config serializes")
    }
}

/// Design quantities measured with catalog dispersion on the rebuilt layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignMetrics {
    pub dispersion_deg: f64,
    pub deviation_mrad: f64,
    pub max_distortion_um: f64,
    pub mean_distortion_um: f64,
    pub spread_um: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DesignOutcome {
    pub initial: PrismDesignParams,
    /// Optimized parameters with relaxed glasses.
    pub relaxed: PrismDesignParams,
    /// Same angles with catalog glasses.
    pub snapped: PrismDesignParams,
    pub glass_names: [String; 2],
    pub sub_losses: SubLosses<f64>,
    pub metrics: DesignMetrics,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
}

/// Adam over the total loss; returns the final vector. `offset` continues the iteration count.
fn adam_phase(
    ctx: &DesignContext,
    mut x: [f64; NPARAM],
    weights: &LossWeights,
    adam: &AdamConfig,
    iterations: usize,
    offset: usize,
    trace: &mut Vec<f64>,
) -> Result<[f64; NPARAM], DesignError> {
    let mut m = [0.0; NPARAM];
    let mut v = [0.0; NPARAM];
    let mut last_valid = x;
    for it in 0..iterations {
        let vars = seed(x).expect("non-empty");
        let loss: D7 = ctx.total_loss(&vars, weights, offset + it + 1);
        if !loss.is_finite() {
            return Err(DesignError::Diverged {
                iteration: offset + it,
                last_valid: PrismDesignParams::from_vector(&last_valid, &ctx.ranges),
            });
        }
        trace.push(loss.v);
        last_valid = x;
        let lr = adam.lr_at(it, iterations);
        let t = (it + 1) as i32;
        for i in 0..NPARAM {
            let g = loss.d[i];
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * g;
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * g * g;
            let mh = m[i] / (1.0 - adam.beta1.powi(t));
            let vh = v[i] / (1.0 - adam.beta2.powi(t));
            x[i] -= lr * mh / (vh.sqrt() + adam.epsilon);
        }
    }
    Ok(x)
}

/// Runs Adam on the total loss, snaps the glasses, optionally refines the angles with the
/// catalog glasses, and re-measures with catalog dispersion.
pub fn optimize_prism(
    ctx: &DesignContext,
    initial: &PrismDesignParams,
    weights: &LossWeights,
    adam: &AdamConfig,
) -> Result<DesignOutcome, DesignError> {
    initial.validate()?;
    let mut trace = Vec::with_capacity(adam.iterations + adam.refine_iterations);
    let x = adam_phase(ctx, initial.to_vector(&ctx.ranges), weights, adam, adam.iterations, 0, &mut trace)?;
    let relaxed = PrismDesignParams::from_vector(&x, &ctx.ranges);
    let (mut snapped, glass_names) = relaxed.snapped(&ctx.catalog);
    let mut sub_losses = ctx.sub_losses(&x).values();
    if adam.refine_iterations > 0 {
        let mut fixed = ctx.clone();
        let g1 = ctx.catalog.get(&glass_names[0]).map_err(SystemError::from)?;
        let g2 = ctx.catalog.get(&glass_names[1]).map_err(SystemError::from)?;
        fixed.fixed_glasses = Some([Arc::new(g1.sellmeier), Arc::new(g2.sellmeier)]);
        let y = adam_phase(
            &fixed,
            snapped.to_vector(&ctx.ranges),
            weights,
            adam,
            adam.refine_iterations,
            adam.iterations,
            &mut trace,
        )?;
        let refined = PrismDesignParams::from_vector(&y, &ctx.ranges);
        snapped = PrismDesignParams { glass1: snapped.glass1, glass2: snapped.glass2, ..refined };
        sub_losses = fixed.sub_losses(&y).values();
    }
    let metrics = measure_design(&snapped)?;
    Ok(DesignOutcome {
        initial: initial.clone(),
        relaxed,
        snapped,
        glass_names,
        sub_losses,
        metrics,
        weights: weights.clone(),
        adam: adam.clone(),
        loss_trace: trace,
    })
}

/// Builds (AP) around `params` (glasses snapped) and measures dispersion, deviation, distortion and spread.
pub fn measure_design(params: &PrismDesignParams) -> Result<DesignMetrics, DesignError> {
    let catalog = GlassCatalog::embedded();
    let (snapped, _) = params.snapped(&catalog);
    let cfg = build_reference_system(SystemName::AP, &snapped)?;
    let sys = cfg.build()?;
    let ctx = DesignContext::from_config(&cfg, 7)?;
    let x = snapped.to_vector(&ctx.ranges);
    // Dispersion and deviation with the catalog (Sellmeier) glasses of the built system.
    let prism: Vec<Surface> = sys.surfaces[ctx.lens.len()..].to_vec();
    let a = ctx.exit_angle(&prism, cfg.spectral.min_nm);
    let b = ctx.exit_angle(&prism, cfg.spectral.max_nm);
    let c = ctx.exit_angle(&prism, CENTRAL_WAVELENGTH);
    let (Some(a), Some(b), Some(c)) = (a, b, c) else {
        return Err(SystemError::DeadChiefRay { wavelength: CENTRAL_WAVELENGTH, x_mm: 0.0, y_mm: 0.0 }.into());
    };
    let faces = prism_faces(x[0], &[x[1], x[2], x[1]]);
    let deviation = x[0] + (c - faces[3]) + 2.0 * x[1] - x[2];
    let t = distortion_tensor(&sys, ANALYSIS_GRID, &[cfg.spectral.min_nm, CENTRAL_WAVELENGTH, cfg.spectral.max_nm])?;
    let s = crate::system::spectral_spread_at(&sys, (0.0, 0.0), &[cfg.spectral.min_nm, cfg.spectral.max_nm])?;
    Ok(DesignMetrics {
        dispersion_deg: (b - a).abs().to_degrees(),
        deviation_mrad: deviation * 1e3,
        max_distortion_um: t.max().unwrap_or(f64::NAN),
        mean_distortion_um: t.mean().unwrap_or(f64::NAN),
        spread_um: s[1].dx_um.hypot(s[1].dy_um),
    })
}

/// Grid size of the distortion analysis maps.
pub const ANALYSIS_GRID: usize = 21;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> DesignContext {
        DesignContext::reference(7).unwrap()
    }

    fn catalog_ctx(c: &DesignContext, g1: &str, g2: &str) -> DesignContext {
        let mut f = c.clone();
        let a = c.catalog.get(g1).unwrap().sellmeier;
        let b = c.catalog.get(g2).unwrap().sellmeier;
        f.fixed_glasses = Some([Arc::new(a), Arc::new(b)]);
        f
    }

    #[test]
    fn zero_dispersion_design() {
        let c = ctx();
        let mut x = PrismDesignParams::rebuilt().to_vector(&c.ranges);
        x[1] = 0.0;
        x[2] = 0.0;
        let l = c.loss_dispersion(&x);
        assert!((l - 2.749e-4).abs() < 1e-7, "{l}");
        assert!((l - 0.95f64.to_radians().powi(2)).abs() < 1e-15);
    }

    #[test]
    fn rebuilt_design_dispersion_within_one_percent() {
        let c = ctx();
        let f = catalog_ctx(&c, "N-SK2", "SF10");
        let x = PrismDesignParams::rebuilt().to_vector(&c.ranges);
        assert!(f.loss_dispersion(&x) <= 0.0095f64.to_radians().powi(2));
        assert!(f.loss_deviation(&x) < 1e-6);
    }

    #[test]
    fn thickness_examples() {
        assert_eq!(loss_thickness(0.0, 0.0), 0.0);
        assert_eq!(loss_thickness(0.0, 1.0), 1.0);
        let l = loss_thickness(29.2f64.to_radians(), 47.9f64.to_radians());
        assert!((l - 1.218375).abs() < 1e-6, "{l}");
    }

    #[test]
    fn tir_examples() {
        assert!((tir_loss(&[-0.66]) - 0.056055).abs() < 1e-6);
        assert!((tir_loss(&[0.0]) - 0.480453).abs() < 1e-6);
        assert!((tir_loss(&[0.1]) - 0.637026).abs() < 1e-6);
        assert_eq!(tir_loss(&[-0.66, 0.1, -0.2]), tir_loss(&[0.1]));
    }

    #[test]
    fn glass_loss_examples() {
        let c = ctx();
        let cat = c.catalog.clone();
        let g = cat.get("N-SK2").unwrap();
        let h = cat.get("SF10").unwrap();
        let mut p = PrismDesignParams { glass1: (g.nd, g.vd), glass2: (h.nd, h.vd), ..PrismDesignParams::rebuilt() };
        assert_eq!(c.loss_glass(&p.to_vector(&c.ranges)), 0.0);
        // Above the densest glass of the catalog, so the nearest entry stays the same.
        let top = cat.glasses().iter().max_by(|a, b| a.nd.total_cmp(&b.nd)).unwrap();
        p.glass1 = (top.nd + c.ranges.nd_span, top.vd);
        let l = c.loss_glass(&p.to_vector(&c.ranges));
        assert!((l - 1.0).abs() < 1e-12, "{l}");
    }

    #[test]
    fn total_loss_is_linear_in_weights() {
        let only_t = SubLosses { thickness: 1.0, ..SubLosses::default() };
        assert_eq!(only_t.total(&LossWeights::default(), 1), 5e3);
        assert_eq!(SubLosses::<f64>::default().total(&LossWeights::default(), 7), 0.0);
        let c = ctx();
        let x = PrismDesignParams::rebuilt().to_vector(&c.ranges);
        let w = LossWeights::default();
        let w2 = LossWeights { w_t: 2.0 * w.w_t, ..w.clone() };
        let s = c.sub_losses(&x);
        let delta = s.total(&w2, 3) - s.total(&w, 3);
        assert!((delta - w.w_t * s.thickness).abs() < 1e-9 * delta);
        for v in s.as_array() {
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn snapping_is_idempotent() {
        let cat = GlassCatalog::embedded();
        let p = PrismDesignParams { glass1: (1.61, 55.0), glass2: (1.74, 27.0), ..PrismDesignParams::rebuilt() };
        let (a, na) = p.snapped(&cat);
        let (b, nb) = a.snapped(&cat);
        assert_eq!(a, b);
        assert_eq!(na, nb);
    }

    #[test]
    fn published_glasses_snap_to_catalog_names() {
        let (_, names) = PrismDesignParams::published().snapped(&GlassCatalog::embedded());
        assert_eq!(names, ["N-SK2".to_string(), "SF10".to_string()]);
    }

    #[test]
    fn symmetric_amici_has_no_deviation() {
        let c = ctx();
        let mut f = c.clone();
        let bk7 = c.catalog.get("N-BK7").unwrap().sellmeier;
        f.fixed_glasses = Some([Arc::new(bk7), Arc::new(bk7)]);
        let p = PrismDesignParams { alpha_c_deg: 3.0, a1_deg: 20.0, a2_deg: 40.0, ..PrismDesignParams::rebuilt() };
        let d = f.deviation(&p.to_vector(&c.ranges)).unwrap();
        assert!(d.abs() < 1e-6, "{d}");
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let c = ctx();
        let p = PrismDesignParams::rebuilt();
        let adam = AdamConfig { iterations: 20, ..Default::default() };
        let o = optimize_prism(&c, &p, &LossWeights::zero(), &adam).unwrap();
        assert_eq!(o.relaxed.to_vector(&c.ranges), p.to_vector(&c.ranges));
        assert!(o.loss_trace.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let p = PrismDesignParams { a1_deg: 85.0, ..PrismDesignParams::rebuilt() };
        assert!(p.validate().is_err());
        let p = PrismDesignParams { glass2: (2.5, 30.0), ..PrismDesignParams::rebuilt() };
        assert!(p.validate().is_err());
        let p = PrismDesignParams { alpha_c_deg: -50.0, ..PrismDesignParams::rebuilt() };
        assert!(optimize_prism(&ctx(), &p, &LossWeights::default(), &AdamConfig::default()).is_err());
    }

    #[test]
    fn dead_ray_penalty_is_finite() {
        let c = ctx();
        let p = PrismDesignParams { alpha_c_deg: 44.0, a1_deg: 79.0, a2_deg: 10.0, ..PrismDesignParams::rebuilt() };
        let x = p.to_vector(&c.ranges);
        let l = c.loss_dispersion(&x);
        assert!(l >= DEAD_RAY_PENALTY && l.is_finite(), "{l}");
    }

    #[test]
    fn distortion_tensor_examples() {
        let field = vec![(-1.0, 0.0), (0.0, 0.0), (1.0, 0.0)];
        let pos = vec![vec![Some((-2.0, 0.0)), Some((0.0, 0.0)), Some((2.0, 0.0))]];
        let eps = ideal_grid_eps(&field, &pos, 1, 0).unwrap();
        assert!(eps[0].iter().all(|e| *e == Some(0.0)));
        let pos = vec![vec![Some((-2.0, 0.0)), Some((0.0, 0.0)), Some((2.0, 0.0))], vec![
            Some((-2.0, 0.0)),
            Some((0.0, 0.0)),
            Some((5.0, 4.0)),
        ]];
        let eps = ideal_grid_eps(&field, &pos, 1, 0).unwrap();
        assert_eq!(eps[1][2], Some(5.0));
        let t = DistortionTensor {
            grid_n: 1,
            wavelengths: vec![520.0],
            field_um: vec![(0.0, 0.0)],
            eps: vec![vec![Some(6.0), Some(1.0), None]],
            ideal: vec![],
            distorted: vec![],
            missing: 1,
        };
        assert_eq!(loss_distortion(&t).unwrap(), 36.0);
        assert_eq!(t.mean(), Some(3.5));
        let empty = DistortionTensor { eps: vec![vec![None]], ..t };
        assert!(loss_distortion(&empty).is_err());
    }

    #[test]
    fn smooth_max_bounds() {
        let v = [1.0, 3.0, 2.999];
        let m = smooth_max(&v, SMOOTH_MAX_TEMPERATURE_UM);
        assert!(m >= 3.0 && m <= 3.0 + SMOOTH_MAX_TEMPERATURE_UM * 3f64.ln());
    }

    #[test]
    fn sk10_pairing_misses_the_dispersion_target() {
        let c = ctx();
        let f = catalog_ctx(&c, "N-SK2", "SK10");
        let x = PrismDesignParams::published().to_vector(&c.ranges);
        let delta = f.dispersion_angle(&x).unwrap().to_degrees();
        assert!(delta < 0.5, "{delta}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = ctx();
        let base = PrismDesignParams::rebuilt().to_vector(&c.ranges);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let mut x = base;
            for v in x.iter_mut().take(3) {
                *v += rng.gen_range(-0.03..0.03);
            }
            for v in x.iter_mut().skip(3) {
                *v += rng.gen_range(-0.02..0.02);
            }
            for term in LossTerm::ALL {
                let step = if term == LossTerm::Distortion { 1e-5 } else { 1e-6 };
                let g = gradient_check(&TermFunction { ctx: &c, term }, &x, step).unwrap();
                assert!(g.max_rel_error < 1e-5, "{}: {}", term.name(), g.max_rel_error);
            }
        }
    }
}
