//! Optical elements, system configuration files and the reference layouts.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Real;
use crate::designer::PrismDesignParams;
use crate::geometry::{
    propagate, Aperture, Mat3, Medium, Pose, Ray, Surface, SurfaceKind, Vec3,
};
use crate::glass::{GlassCatalog, GlassError};
use crate::sampling::hexapolar;

/// Wavelength at which the single prism is set to minimum deviation, nm.
pub const CENTRAL_WAVELENGTH: f64 = 520.0;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("unknown reference system `{0}` (expected SP, AP, mSP or mAP)")]
    UnknownName(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Glass(#[from] GlassError),
    #[error("cannot parse system config: {0}")]
    Parse(String),
    #[error("chief ray lost at {wavelength} nm for field ({x_mm}, {y_mm}) mm")]
    DeadChiefRay { wavelength: f64, x_mm: f64, y_mm: f64 },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Which of the four layouts a configuration represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub enum SystemName {
    SP,
    AP,
    #[serde(rename = "mSP")]
    MSP,
    #[serde(rename = "mAP")]
    MAP,
    #[serde(rename = "custom")]
    Custom,
}

impl SystemName {
    pub const REFERENCE: [SystemName; 4] = [SystemName::SP, SystemName::AP, SystemName::MSP, SystemName::MAP];

    pub fn parse(s: &str) -> Result<Self, SystemError> {
        match s.to_ascii_lowercase().as_str() {
            "sp" => Ok(SystemName::SP),
            "ap" => Ok(SystemName::AP),
            "msp" => Ok(SystemName::MSP),
            "map" => Ok(SystemName::MAP),
            _ => Err(SystemError::UnknownName(s.to_string())),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SystemName::SP => "SP",
            SystemName::AP => "AP",
            SystemName::MSP => "mSP",
            SystemName::MAP => "mAP",
            SystemName::Custom => "custom",
        }
    }

    pub fn is_misaligned(&self) -> bool {
        matches!(self, SystemName::MSP | SystemName::MAP)
    }

    pub fn is_amici(&self) -> bool {
        matches!(self, SystemName::AP | SystemName::MAP)
    }
}

impl std::fmt::Display for SystemName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Element placement: `position_mm` is the geometric centre, `rotation_deg` intrinsic x/y/z about it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub position_mm: [f64; 3],
    #[serde(default)]
    pub rotation_deg: [f64; 3],
}

impl Placement {
    pub fn pose<S: Real>(&self) -> Pose<S> {
        let p = self.position_mm;
        Pose { rotation: Mat3::from_intrinsic_deg(self.rotation_deg), translation: Vec3::cst(p[0], p[1], p[2]) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElementKind {
    ThinLens {
        focal_mm: f64,
        aperture_radius_mm: f64,
    },
    Doublet {
        radii_mm: [f64; 3],
        thickness_mm: [f64; 2],
        glasses: [String; 2],
        semi_aperture_mm: f64,
    },
    Prism {
        /// Apex angles in order of traversal.
        apex_deg: Vec<f64>,
        glasses: Vec<String>,
        /// Angle of the entrance face normal to the local z axis, about y.
        entrance_normal_deg: f64,
        /// Half extent, across the apex direction, of the clear aperture.
        clear_half_height_mm: f64,
        /// Half extent along the apex edges.
        clear_half_width_mm: f64,
        /// Thickness at the thin end of each prism.
        edge_mm: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    #[serde(flatten)]
    pub kind: ElementKind,
    #[serde(flatten)]
    pub placement: Placement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub pixels_x: usize,
    pub pixels_y: usize,
    pub pitch_um: f64,
    #[serde(flatten)]
    pub placement: Placement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub min_nm: f64,
    pub max_nm: f64,
    pub band_count: usize,
}

impl SpectralConfig {
    /// Band-centre wavelengths, evenly spaced and inclusive of both ends.
    pub fn wavelengths(&self) -> Vec<f64> {
        linspace(self.min_nm, self.max_nm, self.band_count)
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (a + b)],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Serializable description of an optical system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub name: SystemName,
    pub numerical_aperture: f64,
    pub focal_mm: f64,
    /// Scene (coded aperture) plane position along z.
    #[serde(default)]
    pub scene_z_mm: f64,
    pub spectral: SpectralConfig,
    pub sensor: SensorConfig,
    pub elements: Vec<Element>,
}

/// Face normal angles (rad) of a prism stack: alternate apex signs.
pub fn prism_faces<S: Real>(entrance: S, apexes: &[S]) -> Vec<S> {
    let mut faces = Vec::with_capacity(apexes.len() + 1);
    faces.push(entrance);
    let mut phi = entrance;
    for (i, a) in apexes.iter().enumerate() {
        phi = if i % 2 == 0 { phi + *a } else { phi - *a };
        faces.push(phi);
    }
    faces
}

/// Clear-aperture geometry of a prism stack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrismGeometry {
    pub half_height: f64,
    pub half_width: f64,
    pub edge: f64,
}

/// Axial thickness of each prism so that the thin end keeps `edge` over the clear height.
pub fn prism_thicknesses<S: Real>(faces: &[S], geom: &PrismGeometry) -> Vec<S> {
    faces
        .windows(2)
        .map(|w| (w[1].tan() - w[0].tan()).abs() * geom.half_height + geom.edge)
        .collect()
}

/// Planar faces of a prism stack centred on the local origin, in the parent frame of `pose`.
///
/// `media` lists the glass of each prism; vacuum surrounds the stack.
pub fn prism_surfaces<S: Real>(
    faces: &[S],
    media: &[Medium<S>],
    geom: &PrismGeometry,
    pose: &Pose<S>,
) -> Vec<Surface<S>> {
    assert_eq!(faces.len(), media.len() + 1, "one medium per prism");
    let t = prism_thicknesses(faces, geom);
    let total = t.iter().fold(S::zero(), |a, b| a + *b);
    let mut z = -(total * 0.5);
    let mut out = Vec::with_capacity(faces.len());
    for (i, phi) in faces.iter().enumerate() {
        let local = Pose { rotation: Mat3::rot_y(*phi), translation: Vec3::new(S::zero(), S::zero(), z) };
        let before = if i == 0 { Medium::Vacuum } else { media[i - 1].clone() };
        let after = if i == media.len() { Medium::Vacuum } else { media[i].clone() };
        let aperture = Aperture::Rectangular {
            half_x: geom.half_height / phi.val().cos(),
            half_y: geom.half_width,
        };
        out.push(Surface { kind: SurfaceKind::Plane, pose: pose.compose(&local), aperture, before, after });
        if i < t.len() {
            z += t[i];
        }
    }
    out
}

impl Element {
    pub fn pose<S: Real>(&self) -> Pose<S> {
        self.placement.pose()
    }

    /// Sequential surfaces of this element in the system frame.
    pub fn surfaces<S: Real>(&self, catalog: &GlassCatalog) -> Result<Vec<Surface<S>>, SystemError> {
        let pose = self.pose::<S>();
        match &self.kind {
            ElementKind::ThinLens { focal_mm, aperture_radius_mm } => {
                if *focal_mm == 0.0 {
                    return Err(SystemError::Invalid("thin lens focal length must be non-zero".into()));
                }
                Ok(vec![Surface {
                    kind: SurfaceKind::IdealLens { focal: S::cst(*focal_mm) },
                    pose,
                    aperture: Aperture::Circular { radius: *aperture_radius_mm },
                    before: Medium::Vacuum,
                    after: Medium::Vacuum,
                }])
            }
            ElementKind::Doublet { radii_mm, thickness_mm, glasses, semi_aperture_mm } => {
                if radii_mm.iter().any(|r| *r == 0.0) {
                    return Err(SystemError::Invalid("doublet radius must be non-zero".into()));
                }
                let g1: Medium<S> = Medium::from_glass(&catalog.get(&glasses[0])?.model());
                let g2: Medium<S> = Medium::from_glass(&catalog.get(&glasses[1])?.model());
                let total = thickness_mm[0] + thickness_mm[1];
                let zs = [-total / 2.0, -total / 2.0 + thickness_mm[0], total / 2.0];
                let media = [Medium::Vacuum, g1, g2, Medium::Vacuum];
                Ok((0..3)
                    .map(|i| {
                        let local = Pose::translation(Vec3::cst(0.0, 0.0, zs[i]));
                        Surface {
                            kind: SurfaceKind::Sphere { radius: S::cst(radii_mm[i]) },
                            pose: pose.compose(&local),
                            aperture: Aperture::Circular { radius: *semi_aperture_mm },
                            before: media[i].clone(),
                            after: media[i + 1].clone(),
                        }
                    })
                    .collect())
            }
            ElementKind::Prism {
                apex_deg,
                glasses,
                entrance_normal_deg,
                clear_half_height_mm,
                clear_half_width_mm,
                edge_mm,
            } => {
                if apex_deg.len() != glasses.len() || apex_deg.is_empty() {
                    return Err(SystemError::Invalid("prism needs one glass per apex".into()));
                }
                let apexes: Vec<S> = apex_deg.iter().map(|a| S::cst(a.to_radians())).collect();
                let faces = prism_faces(S::cst(entrance_normal_deg.to_radians()), &apexes);
                let media = glasses
                    .iter()
                    .map(|g| Ok(Medium::from_glass(&catalog.get(g)?.model())))
                    .collect::<Result<Vec<_>, SystemError>>()?;
                let geom = PrismGeometry {
                    half_height: *clear_half_height_mm,
                    half_width: *clear_half_width_mm,
                    edge: *edge_mm,
                };
                Ok(prism_surfaces(&faces, &media, &geom, &pose))
            }
        }
    }

    pub fn is_dispersive(&self) -> bool {
        matches!(self.kind, ElementKind::Prism { .. })
    }
}

impl SystemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SystemError> {
        let cfg: SystemConfig = toml::from_str(text).map_err(|e| SystemError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("system config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, SystemError> {
        let text = std::fs::read_to_string(path).map_err(|e| SystemError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// One of the configuration files shipped with the crate.
    pub fn shipped(name: SystemName) -> Result<Self, SystemError> {
        let text = match name {
            SystemName::SP => include_str!("../data/systems/sp.toml"),
            SystemName::AP => include_str!("../data/systems/ap.toml"),
            SystemName::MSP => include_str!("../data/systems/msp.toml"),
            SystemName::MAP => include_str!("../data/systems/map.toml"),
            SystemName::Custom => return Err(SystemError::UnknownName("custom".into())),
        };
        Self::from_toml_str(text)
    }

    pub fn validate(&self) -> Result<(), SystemError> {
        let bad = |m: &str| Err(SystemError::Invalid(m.to_string()));
        if self.elements.is_empty() {
            return bad("system has no elements");
        }
        if !(self.numerical_aperture > 0.0 && self.numerical_aperture < 1.0) {
            return bad("numerical aperture must lie in (0, 1)");
        }
        if self.sensor.pixels_x == 0 || self.sensor.pixels_y == 0 || !(self.sensor.pitch_um > 0.0) {
            return bad("sensor needs positive pixel counts and pitch");
        }
        if self.spectral.band_count == 0 || !(self.spectral.min_nm > 0.0) || self.spectral.max_nm < self.spectral.min_nm {
            return bad("spectral range must be positive and ordered with at least one band");
        }
        if let ElementKind::ThinLens { focal_mm, .. } = self.elements[0].kind {
            if focal_mm == 0.0 {
                return bad("thin lens focal length must be non-zero");
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<OpticalSystem, SystemError> {
        self.build_with(&GlassCatalog::embedded())
    }

    pub fn build_with(&self, catalog: &GlassCatalog) -> Result<OpticalSystem, SystemError> {
        self.validate()?;
        let mut surfaces = Vec::new();
        for e in &self.elements {
            surfaces.extend(e.surfaces::<f64>(catalog)?);
        }
        let first = &self.elements[0];
        let pupil_pose = first.pose::<f64>();
        Ok(OpticalSystem {
            config: Arc::new(self.clone()),
            surfaces,
            sensor_pose: self.sensor.placement.pose(),
            pupil_pose,
        })
    }

    /// Field of view of the sensor, mm.
    pub fn field_of_view_mm(&self) -> (f64, f64) {
        let p = self.sensor.pitch_um * 1e-3;
        (self.sensor.pixels_x as f64 * p, self.sensor.pixels_y as f64 * p)
    }

    pub fn dispersive_element_mut(&mut self) -> Option<&mut Element> {
        self.elements.iter_mut().find(|e| e.is_dispersive())
    }
}

/// A system ready for tracing.
#[derive(Clone, Debug)]
pub struct OpticalSystem {
    pub config: Arc<SystemConfig>,
    pub surfaces: Vec<Surface>,
    pub sensor_pose: Pose,
    /// Frame of the objective; the NA cone is aimed at its local z = 0 disc.
    pub pupil_pose: Pose,
}

impl OpticalSystem {
    pub fn pitch_mm(&self) -> f64 {
        self.config.sensor.pitch_um * 1e-3
    }

    pub fn scene_point(&self, x_mm: f64, y_mm: f64) -> Vec3 {
        Vec3::cst(x_mm, y_mm, self.config.scene_z_mm)
    }

    /// Radius of the objective disc subtended by the NA cone from the scene plane.
    pub fn pupil_radius(&self) -> f64 {
        let d = (self.pupil_pose.translation.z - self.config.scene_z_mm).abs();
        let na = self.config.numerical_aperture;
        d * na / (1.0 - na * na).sqrt()
    }

    /// Ray from a scene point toward the point `(u, v)` (unit disc) of the objective pupil.
    pub fn pupil_ray(&self, x_mm: f64, y_mm: f64, u: f64, v: f64, wavelength: f64) -> Ray {
        let r = self.pupil_radius();
        let target = self.pupil_pose.point_to_parent(Vec3::cst(u * r, v * r, 0.0));
        let o = self.scene_point(x_mm, y_mm);
        Ray::new(o, target - o, wavelength)
    }

    pub fn chief_ray(&self, x_mm: f64, y_mm: f64, wavelength: f64) -> Ray {
        self.pupil_ray(x_mm, y_mm, 0.0, 0.0, wavelength)
    }

    /// Local sensor-plane coordinates (mm) of a ray after the optics.
    pub fn trace_to_sensor_mm(&self, ray: Ray) -> Option<(f64, f64)> {
        let out = propagate(ray, &self.surfaces);
        sensor_hit(&out, &self.sensor_pose).map(|p| (p.x, p.y))
    }

    /// Fractional pixel coordinates `(column, row)` on the sensor; integers are pixel centres.
    pub fn trace_to_pixels(&self, ray: Ray) -> Option<(f64, f64)> {
        self.trace_to_sensor_mm(ray).map(|(x, y)| self.mm_to_pixels(x, y))
    }

    pub fn mm_to_pixels(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.pitch_mm();
        let s = &self.config.sensor;
        (x / p + (s.pixels_x as f64 - 1.0) / 2.0, y / p + (s.pixels_y as f64 - 1.0) / 2.0)
    }

    /// Scene-plane coordinates (mm) of the centre of scene pixel `(row, col)` in an `h × w` cube.
    pub fn scene_pixel_mm(&self, row: f64, col: f64, h: usize, w: usize) -> (f64, f64) {
        let p = self.pitch_mm();
        ((col - (w as f64 - 1.0) / 2.0) * p, (row - (h as f64 - 1.0) / 2.0) * p)
    }

    pub fn chief_ray_sensor_mm(&self, x_mm: f64, y_mm: f64, wavelength: f64) -> Result<(f64, f64), SystemError> {
        self.trace_to_sensor_mm(self.chief_ray(x_mm, y_mm, wavelength))
            .ok_or(SystemError::DeadChiefRay { wavelength, x_mm, y_mm })
    }
}

/// Intersects a propagated ray with the sensor plane; returns local coordinates.
pub fn sensor_hit<S: Real>(ray: &Ray<S>, sensor: &Pose<S>) -> Option<Vec3<S>> {
    if !ray.alive {
        return None;
    }
    let o = sensor.point_to_local(ray.origin);
    let d = sensor.dir_to_local(ray.direction);
    if d.z.val().abs() < 1e-15 {
        return None;
    }
    let t = -o.z / d.z;
    if t.val() < 0.0 {
        return None;
    }
    Some(o + d * t)
}

/// Sensor-relative displacement of the chief-ray image versus wavelength.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpreadPoint {
    pub wavelength: f64,
    pub dx_um: f64,
    pub dy_um: f64,
}

/// Chief-ray positions relative to the shortest wavelength, at the system's band centres.
pub fn spectral_spread_curve(system: &OpticalSystem, field_mm: (f64, f64)) -> Result<Vec<SpreadPoint>, SystemError> {
    spectral_spread_at(system, field_mm, &system.config.spectral.wavelengths())
}

pub fn spectral_spread_at(
    system: &OpticalSystem,
    field_mm: (f64, f64),
    wavelengths: &[f64],
) -> Result<Vec<SpreadPoint>, SystemError> {
    let mut out = Vec::with_capacity(wavelengths.len());
    let mut first: Option<(f64, f64)> = None;
    for &l in wavelengths {
        let (x, y) = system.chief_ray_sensor_mm(field_mm.0, field_mm.1, l)?;
        let (x0, y0) = *first.get_or_insert((x, y));
        out.push(SpreadPoint { wavelength: l, dx_um: (x - x0) * 1e3, dy_um: (y - y0) * 1e3 });
    }
    Ok(out)
}

/// Moves the sensor along its normal to the plane of least RMS spot (closed form) for one field point.
pub fn autofocus(config: &mut SystemConfig, field_mm: (f64, f64), wavelength: f64) -> Result<f64, SystemError> {
    let system = config.build()?;
    let pose = system.sensor_pose;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (u, v) in hexapolar(6) {
        let out = propagate(system.pupil_ray(field_mm.0, field_mm.1, u, v, wavelength), &system.surfaces);
        if !out.alive {
            continue;
        }
        let o = pose.point_to_local(out.origin);
        let d = pose.dir_to_local(out.direction);
        // Position on the plane local z = s: (o + d (s - o.z) / d.z).xy = a + b s
        let bx = d.x / d.z;
        let by = d.y / d.z;
        a.push((o.x - bx * o.z, o.y - by * o.z));
        b.push((bx, by));
    }
    if a.len() < 3 {
        return Err(SystemError::DeadChiefRay { wavelength, x_mm: field_mm.0, y_mm: field_mm.1 });
    }
    let n = a.len() as f64;
    let ma = a.iter().fold((0.0, 0.0), |s, p| (s.0 + p.0 / n, s.1 + p.1 / n));
    let mb = b.iter().fold((0.0, 0.0), |s, p| (s.0 + p.0 / n, s.1 + p.1 / n));
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, q) in a.iter().zip(&b) {
        let da = (p.0 - ma.0, p.1 - ma.1);
        let db = (q.0 - mb.0, q.1 - mb.1);
        num += da.0 * db.0 + da.1 * db.1;
        den += db.0 * db.0 + db.1 * db.1;
    }
    let shift = -num / den;
    let moved = pose.point_to_parent(Vec3::cst(0.0, 0.0, shift));
    config.sensor.placement.position_mm = [moved.x, moved.y, moved.z];
    Ok(shift)
}

/// Free layout constants of the reference systems.
pub mod layout {
    /// Objective-to-collimator spacing equals the focal length; scene sits at z = 0.
    pub const FOCAL_MM: f64 = 50.0;
    pub const LENS_APERTURE_RADIUS_MM: f64 = 12.7;
    /// (SP) distance from the collimator to the prism centre.
    pub const SP_PRISM_DISTANCE_MM: f64 = 30.0;
    /// (SP) distance from the prism centre to the doublet front vertex, along the deviated axis.
    pub const SP_DOUBLET_DISTANCE_MM: f64 = 25.0;
    pub const SP_PRISM_HALF_HEIGHT_MM: f64 = 10.0;
    pub const SP_PRISM_HALF_WIDTH_MM: f64 = 12.5;
    pub const SP_PRISM_EDGE_MM: f64 = 1.0;
    pub const AMICI_HALF_HEIGHT_MM: f64 = 4.0;
    pub const AMICI_HALF_WIDTH_MM: f64 = 5.0;
    pub const AMICI_EDGE_MM: f64 = 0.5;
    /// Target centre-field spread, µm.
    pub const SPREAD_UM: f64 = 830.0;
    /// Misalignment of the dispersive element about x, degrees.
    pub const MISALIGNMENT_DEG: f64 = 5.0;
}

/// Doublet imager of (SP): catalog achromat, f = 50 mm, Ø 25.4 mm.
pub fn imaging_doublet(placement: Placement) -> Element {
    Element {
        kind: ElementKind::Doublet {
            radii_mm: [33.34, -22.28, -291.07],
            thickness_mm: [9.0, 2.5],
            glasses: ["N-BAF10".into(), "N-SF10".into()],
            semi_aperture_mm: 12.7,
        },
        placement,
    }
}

fn base_config(name: SystemName, elements: Vec<Element>, sensor: Placement) -> SystemConfig {
    SystemConfig {
        name,
        numerical_aperture: 0.05,
        focal_mm: layout::FOCAL_MM,
        scene_z_mm: 0.0,
        spectral: SpectralConfig { min_nm: 450.0, max_nm: 650.0, band_count: 28 },
        sensor: SensorConfig { pixels_x: 512, pixels_y: 512, pitch_um: 10.0, placement: sensor },
        elements,
    }
}

fn round_to(x: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (x * s).round() / s
}

/// Builds one of the four reference layouts.
pub fn build_reference_system(name: SystemName, amici: &PrismDesignParams) -> Result<SystemConfig, SystemError> {
    let catalog = GlassCatalog::embedded();
    let mut cfg = match name {
        SystemName::SP | SystemName::MSP => build_sp(&catalog)?,
        SystemName::AP | SystemName::MAP => build_ap(&catalog, amici)?,
        SystemName::Custom => return Err(SystemError::UnknownName("custom".into())),
    };
    if name.is_misaligned() {
        let e = cfg.dispersive_element_mut().expect("reference systems hold a prism");
        e.placement.rotation_deg[0] += layout::MISALIGNMENT_DEG;
    }
    cfg.name = name;
    Ok(cfg)
}

/// Incidence angle (rad) of minimum deviation for a symmetric prism of apex `apex` (rad).
pub fn min_deviation_incidence(n: f64, apex: f64) -> f64 {
    (n * (apex / 2.0).sin()).asin()
}

/// Prism-only 2-D exit angle (rad, about y) of an axial ray through a stack of faces.
pub fn stack_exit_angle<S: Real>(faces: &[S], indices: &[S]) -> Option<S> {
    let mut theta = S::zero();
    let mut n = S::one();
    for (phi, n2) in faces.iter().zip(indices.iter().chain(std::iter::once(&S::one()))) {
        let s = n / *n2 * (theta - *phi).sin();
        if s.val().abs() >= 1.0 {
            return None;
        }
        theta = *phi + s.asin();
        n = *n2;
    }
    Some(theta)
}

fn build_sp(catalog: &GlassCatalog) -> Result<SystemConfig, SystemError> {
    let bk7 = catalog.get("N-BK7")?;
    let apex = 60f64.to_radians();
    let theta1 = min_deviation_incidence(bk7.sellmeier.index(CENTRAL_WAVELENGTH), apex);
    let f = layout::FOCAL_MM;
    let collimator = Element {
        kind: ElementKind::ThinLens { focal_mm: f, aperture_radius_mm: layout::LENS_APERTURE_RADIUS_MM },
        placement: Placement { position_mm: [0.0, 0.0, f], rotation_deg: [0.0; 3] },
    };
    let prism_z = f + layout::SP_PRISM_DISTANCE_MM;
    let prism = Element {
        kind: ElementKind::Prism {
            apex_deg: vec![60.0],
            glasses: vec!["N-BK7".into()],
            entrance_normal_deg: -theta1.to_degrees(),
            clear_half_height_mm: layout::SP_PRISM_HALF_HEIGHT_MM,
            clear_half_width_mm: layout::SP_PRISM_HALF_WIDTH_MM,
            edge_mm: layout::SP_PRISM_EDGE_MM,
        },
        // Turned about the axis so that longer wavelengths land at larger sensor columns.
        placement: Placement { position_mm: [0.0, 0.0, prism_z], rotation_deg: [0.0, 0.0, 180.0] },
    };
    // The imaging arm follows the 520 nm axial chief ray leaving the prism.
    let mut probe = base_config(SystemName::SP, vec![collimator.clone(), prism.clone()], Placement {
        position_mm: [0.0, 0.0, 500.0],
        rotation_deg: [0.0; 3],
    });
    let sys = probe.build_with(catalog)?;
    let out = propagate(sys.chief_ray(0.0, 0.0, CENTRAL_WAVELENGTH), &sys.surfaces);
    if !out.alive {
        return Err(SystemError::DeadChiefRay { wavelength: CENTRAL_WAVELENGTH, x_mm: 0.0, y_mm: 0.0 });
    }
    let u = out.direction;
    let psi = u.x.atan2(u.z);
    let centre = Vec3::cst(0.0, 0.0, prism_z);
    // Point of the exit ray closest to the prism centre, then move along the axis.
    let t0 = (centre - out.origin).dot(u);
    let axis_origin = out.origin + u * t0;
    let doublet = imaging_doublet(Placement { position_mm: [0.0; 3], rotation_deg: [0.0; 3] });
    let ElementKind::Doublet { thickness_mm, .. } = &doublet.kind else { unreachable!() };
    let half = 0.5 * (thickness_mm[0] + thickness_mm[1]);
    let doublet_centre = axis_origin + u * (layout::SP_DOUBLET_DISTANCE_MM + half);
    let rot = [0.0, psi.to_degrees(), 0.0];
    let doublet = imaging_doublet(Placement {
        position_mm: [doublet_centre.x, doublet_centre.y, doublet_centre.z],
        rotation_deg: rot,
    });
    let sensor_guess = doublet_centre + u * 45.0;
    probe = base_config(SystemName::SP, vec![collimator, prism, doublet], Placement {
        position_mm: [sensor_guess.x, sensor_guess.y, sensor_guess.z],
        rotation_deg: [0.0, psi.to_degrees(), 180.0],
    });
    autofocus(&mut probe, (0.0, 0.0), CENTRAL_WAVELENGTH)?;
    Ok(probe)
}

fn amici_element(amici: &PrismDesignParams, catalog: &GlassCatalog, centre_z: f64) -> Result<Element, SystemError> {
    let (g1, _) = catalog.nearest(amici.glass1.0, amici.glass1.1);
    let (g2, _) = catalog.nearest(amici.glass2.0, amici.glass2.1);
    Ok(Element {
        kind: ElementKind::Prism {
            apex_deg: vec![amici.a1_deg, amici.a2_deg, amici.a1_deg],
            glasses: vec![g1.name.clone(), g2.name.clone(), g1.name.clone()],
            entrance_normal_deg: amici.alpha_c_deg,
            clear_half_height_mm: layout::AMICI_HALF_HEIGHT_MM,
            clear_half_width_mm: layout::AMICI_HALF_WIDTH_MM,
            edge_mm: layout::AMICI_EDGE_MM,
        },
        placement: Placement { position_mm: [0.0, 0.0, centre_z], rotation_deg: [0.0; 3] },
    })
}

/// Axial length of the double-Amici stack, mm.
pub fn amici_length(amici: &PrismDesignParams) -> f64 {
    let apexes = [amici.a1_deg, amici.a2_deg, amici.a1_deg].map(f64::to_radians);
    let faces = prism_faces(amici.alpha_c_deg.to_radians(), &apexes);
    let geom = PrismGeometry {
        half_height: layout::AMICI_HALF_HEIGHT_MM,
        half_width: layout::AMICI_HALF_WIDTH_MM,
        edge: layout::AMICI_EDGE_MM,
    };
    prism_thicknesses(&faces, &geom).iter().sum()
}

fn build_ap(catalog: &GlassCatalog, amici: &PrismDesignParams) -> Result<SystemConfig, SystemError> {
    amici.validate().map_err(|e| SystemError::Invalid(e.to_string()))?;
    let f = layout::FOCAL_MM;
    let lens = Element {
        kind: ElementKind::ThinLens { focal_mm: f, aperture_radius_mm: layout::LENS_APERTURE_RADIUS_MM },
        placement: Placement { position_mm: [0.0, 0.0, 2.0 * f], rotation_deg: [0.0; 3] },
    };
    let length = amici_length(amici);
    let make = |front: f64| -> Result<SystemConfig, SystemError> {
        let prism = amici_element(amici, catalog, front + length / 2.0)?;
        let mut cfg = base_config(SystemName::AP, vec![lens.clone(), prism], Placement {
            position_mm: [0.0, 0.0, 4.0 * f],
            rotation_deg: [0.0, 0.0, 180.0],
        });
        autofocus(&mut cfg, (0.0, 0.0), CENTRAL_WAVELENGTH)?;
        Ok(cfg)
    };
    let spread = |cfg: &SystemConfig| -> Result<f64, SystemError> {
        let sys = cfg.build_with(catalog)?;
        let s = spectral_spread_at(&sys, (0.0, 0.0), &[cfg.spectral.min_nm, cfg.spectral.max_nm])?;
        Ok(s[1].dx_um.hypot(s[1].dy_um))
    };
    // The spread grows with the prism-to-sensor distance: bisect the gap after the lens.
    let (mut lo, mut hi) = (2.0 * f + 1.0, 4.0 * f - length - 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if spread(&make(mid)?)? > layout::SPREAD_UM {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let front = round_to(0.5 * (lo + hi), 6);
    make(front)
}
