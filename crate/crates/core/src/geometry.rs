//! Sequential ray tracing: vectors, rigid poses, surfaces, refraction.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use crate::autodiff::Real;
use crate::glass::{relaxed_coefficients, GlassKind, GlassModel, Sellmeier};

/// Self-intersection tolerance along the ray, mm.
pub const TAU_INT: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3<S = f64> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Real> Vec3<S> {
    pub fn new(x: S, y: S, z: S) -> Self {
        Vec3 { x, y, z }
    }

    pub fn cst(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x: S::cst(x), y: S::cst(y), z: S::cst(z) }
    }

    pub fn zero() -> Self {
        Self::cst(0.0, 0.0, 0.0)
    }

    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn norm(self) -> S {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        self * self.norm().recip()
    }

    pub fn scale(self, s: S) -> Self {
        Vec3 { x: self.x * s, y: self.y * s, z: self.z * s }
    }

    pub fn value(self) -> Vec3<f64> {
        Vec3 { x: self.x.val(), y: self.y.val(), z: self.z.val() }
    }
}

impl Vec3<f64> {
    pub fn lift<S: Real>(self) -> Vec3<S> {
        Vec3::cst(self.x, self.y, self.z)
    }
}

impl<S: Real> Add for Vec3<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3 { x: self.x + o.x, y: self.y + o.y, z: self.z + o.z }
    }
}

impl<S: Real> Sub for Vec3<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3 { x: self.x - o.x, y: self.y - o.y, z: self.z - o.z }
    }
}

impl<S: Real> Neg for Vec3<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec3 { x: -self.x, y: -self.y, z: -self.z }
    }
}

impl<S: Real> Mul<S> for Vec3<S> {
    type Output = Self;
    fn mul(self, s: S) -> Self {
        self.scale(s)
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<S = f64> {
    pub m: [[S; 3]; 3],
}

impl<S: Real> Mat3<S> {
    pub fn identity() -> Self {
        let o = S::zero();
        let l = S::one();
        Mat3 { m: [[l, o, o], [o, l, o], [o, o, l]] }
    }

    pub fn rot_x(a: S) -> Self {
        let (s, c) = (a.sin(), a.cos());
        let (o, l) = (S::zero(), S::one());
        Mat3 { m: [[l, o, o], [o, c, -s], [o, s, c]] }
    }

    pub fn rot_y(a: S) -> Self {
        let (s, c) = (a.sin(), a.cos());
        let (o, l) = (S::zero(), S::one());
        Mat3 { m: [[c, o, s], [o, l, o], [-s, o, c]] }
    }

    pub fn rot_z(a: S) -> Self {
        let (s, c) = (a.sin(), a.cos());
        let (o, l) = (S::zero(), S::one());
        Mat3 { m: [[c, -s, o], [s, c, o], [o, o, l]] }
    }

    /// Intrinsic rotation about x, then the new y, then the new z (degrees).
    pub fn from_intrinsic_deg(deg: [f64; 3]) -> Self {
        let r = |d: f64| S::cst(d.to_radians());
        Mat3::rot_x(r(deg[0])).matmul(&Mat3::rot_y(r(deg[1]))).matmul(&Mat3::rot_z(r(deg[2])))
    }

    pub fn apply(&self, v: Vec3<S>) -> Vec3<S> {
        let m = &self.m;
        Vec3 {
            x: m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            y: m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            z: m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        }
    }

    pub fn apply_t(&self, v: Vec3<S>) -> Vec3<S> {
        let m = &self.m;
        Vec3 {
            x: m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            y: m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            z: m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
        }
    }

    pub fn matmul(&self, o: &Self) -> Self {
        let mut m = [[S::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        Mat3 { m }
    }

    pub fn transpose(&self) -> Self {
        let mut m = self.m;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.m[j][i];
            }
        }
        Mat3 { m }
    }

    /// Largest deviation of `RᵀR` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose().matmul(self);
        let mut e: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let t = if i == j { 1.0 } else { 0.0 };
                e = e.max((p.m[i][j].val() - t).abs());
            }
        }
        e
    }
}

/// Rigid transform mapping local coordinates to the parent frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<S = f64> {
    pub rotation: Mat3<S>,
    pub translation: Vec3<S>,
}

impl<S: Real> Pose<S> {
    pub fn identity() -> Self {
        Pose { rotation: Mat3::identity(), translation: Vec3::zero() }
    }

    pub fn translation(t: Vec3<S>) -> Self {
        Pose { rotation: Mat3::identity(), translation: t }
    }

    pub fn point_to_parent(&self, p: Vec3<S>) -> Vec3<S> {
        self.rotation.apply(p) + self.translation
    }

    pub fn point_to_local(&self, p: Vec3<S>) -> Vec3<S> {
        self.rotation.apply_t(p - self.translation)
    }

    pub fn dir_to_parent(&self, d: Vec3<S>) -> Vec3<S> {
        self.rotation.apply(d)
    }

    pub fn dir_to_local(&self, d: Vec3<S>) -> Vec3<S> {
        self.rotation.apply_t(d)
    }

    /// `self ∘ inner`: first `inner`, then `self`.
    pub fn compose(&self, inner: &Pose<S>) -> Pose<S> {
        Pose {
            rotation: self.rotation.matmul(&inner.rotation),
            translation: self.point_to_parent(inner.translation),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<S = f64> {
    pub origin: Vec3<S>,
    pub direction: Vec3<S>,
    pub wavelength: f64,
    pub alive: bool,
}

impl<S: Real> Ray<S> {
    /// Builds a live ray; `direction` is normalized.
    pub fn new(origin: Vec3<S>, direction: Vec3<S>, wavelength: f64) -> Self {
        Ray { origin, direction: direction.normalized(), wavelength, alive: true }
    }

    pub fn killed(mut self) -> Self {
        self.alive = false;
        self
    }
}

/// Optical medium between surfaces.
#[derive(Clone, Debug, PartialEq)]
pub enum Medium<S = f64> {
    Vacuum,
    Sellmeier(Arc<Sellmeier>),
    /// `n(λ) = a + b / λ²`, λ in nm.
    Cauchy { a: S, b: S },
}

impl<S: Real> Medium<S> {
    pub fn from_glass(glass: &GlassModel) -> Self {
        match &glass.kind {
            GlassKind::Catalog(s) => Medium::Sellmeier(Arc::new(*s)),
            GlassKind::Relaxed { nd, vd } => {
                let (a, b) = relaxed_coefficients(S::cst(*nd), S::cst(*vd));
                Medium::Cauchy { a, b }
            }
        }
    }

    /// Relaxed glass whose `(n_d, V_d)` may carry derivatives.
    pub fn relaxed(nd: S, vd: S) -> Self {
        let (a, b) = relaxed_coefficients(nd, vd);
        Medium::Cauchy { a, b }
    }

    pub fn index(&self, wavelength_nm: f64) -> S {
        match self {
            Medium::Vacuum => S::one(),
            Medium::Sellmeier(s) => S::cst(s.index(wavelength_nm)),
            Medium::Cauchy { a, b } => *a + *b / (wavelength_nm * wavelength_nm),
        }
    }
}

/// Clear aperture in the surface's local xy plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Aperture {
    Unbounded,
    Circular { radius: f64 },
    Rectangular { half_x: f64, half_y: f64 },
}

impl Aperture {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Aperture::Unbounded => true,
            Aperture::Circular { radius } => x * x + y * y <= radius * radius,
            Aperture::Rectangular { half_x, half_y } => x.abs() <= half_x && y.abs() <= half_y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SurfaceKind<S = f64> {
    Plane,
    /// Signed radius; the centre sits at `(0, 0, radius)` in local coordinates.
    Sphere { radius: S },
    /// Ideal, aberration-free and achromatic thin lens lying in the local z = 0 plane.
    IdealLens { focal: S },
}

/// A surface in the local frame `z = 0` (vertex at the origin, axis +z), posed in the system frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Surface<S = f64> {
    pub kind: SurfaceKind<S>,
    pub pose: Pose<S>,
    pub aperture: Aperture,
    pub before: Medium<S>,
    pub after: Medium<S>,
}

impl<S: Real> Surface<S> {
    pub fn plane(pose: Pose<S>, aperture: Aperture, before: Medium<S>, after: Medium<S>) -> Self {
        Surface { kind: SurfaceKind::Plane, pose, aperture, before, after }
    }

    /// Same surface traversed in the opposite direction.
    pub fn reversed(&self) -> Self {
        Surface { before: self.after.clone(), after: self.before.clone(), ..self.clone() }
    }
}

/// Intersection record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit<S = f64> {
    pub point: Vec3<S>,
    /// Unit normal facing the incoming ray.
    pub normal: Vec3<S>,
    pub path_length: S,
}

/// Intersects a live ray with a surface; `None` on a miss.
pub fn intersect<S: Real>(ray: &Ray<S>, surface: &Surface<S>) -> Option<Hit<S>> {
    if !ray.alive {
        return None;
    }
    let pose = &surface.pose;
    let o = pose.point_to_local(ray.origin);
    let d = pose.dir_to_local(ray.direction);
    let (t, normal_local) = match surface.kind {
        SurfaceKind::Plane | SurfaceKind::IdealLens { .. } => {
            if d.z.val() == 0.0 {
                return None;
            }
            let t = -o.z / d.z;
            (t, Vec3::cst(0.0, 0.0, 1.0))
        }
        SurfaceKind::Sphere { radius } => {
            let c = Vec3::new(S::zero(), S::zero(), radius);
            let oc = o - c;
            let b = oc.dot(d);
            let cc = oc.dot(oc) - radius * radius;
            let disc = b * b - cc;
            if disc.val() < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let roots = [-b - sq, -b + sq];
            // Smallest root past the tolerance, restricted to the cap on the vertex side of the centre.
            let mut chosen = None;
            for t in roots {
                if t.val() <= TAU_INT {
                    continue;
                }
                let z = o.z + d.z * t;
                if z.val() / radius.val() > 1.0 {
                    continue;
                }
                chosen = Some(t);
                break;
            }
            let t = chosen?;
            let p = o + d * t;
            (t, (p - c) * radius.recip())
        }
    };
    if t.val() <= TAU_INT || !t.is_finite() {
        return None;
    }
    let p = o + d * t;
    if !surface.aperture.contains(p.x.val(), p.y.val()) {
        return None;
    }
    let mut n = normal_local.normalized();
    if n.dot(d).val() > 0.0 {
        n = -n;
    }
    Some(Hit {
        point: pose.point_to_parent(p),
        normal: pose.dir_to_parent(n),
        path_length: t,
    })
}

/// Vector Snell refraction. `normal` must face the incoming ray; TIR kills the ray.
pub fn refract<S: Real>(ray: &Ray<S>, normal: Vec3<S>, n1: S, n2: S) -> Ray<S> {
    let d = ray.direction;
    let cos_i = -(normal.dot(d));
    let eta = n1 / n2;
    let k = S::one() - eta * eta * (S::one() - cos_i * cos_i);
    if k.val() < 0.0 {
        return ray.killed();
    }
    let dir = d * eta + normal * (eta * cos_i - k.sqrt());
    Ray { direction: dir.normalized(), ..*ray }
}

/// Ideal thin lens: the exit ray heads for the focal-plane image of the incoming direction.
///
/// The ray origin must already sit on the lens plane; `pose` is the lens frame.
pub fn thin_lens_refract<S: Real>(ray: &Ray<S>, pose: &Pose<S>, focal: S) -> Ray<S> {
    let d = pose.dir_to_local(ray.direction);
    if d.z.val() == 0.0 {
        return ray.killed();
    }
    let p = pose.point_to_local(ray.origin);
    let dz = d.z.abs();
    let side = if d.z.val() < 0.0 { -1.0 } else { 1.0 };
    let q = Vec3::new(focal * d.x / dz, focal * d.y / dz, focal * side);
    let mut out = q - Vec3::new(p.x, p.y, S::zero());
    if focal.val() < 0.0 {
        out = -out;
    }
    Ray { direction: pose.dir_to_parent(out.normalized()), ..*ray }
}

/// Applies one surface; the origin moves to the hit point.
pub fn step<S: Real>(ray: &Ray<S>, surface: &Surface<S>) -> (Ray<S>, Option<Hit<S>>) {
    let Some(hit) = intersect(ray, surface) else {
        return (ray.killed(), None);
    };
    let moved = Ray { origin: hit.point, ..*ray };
    let out = match surface.kind {
        SurfaceKind::IdealLens { focal } => thin_lens_refract(&moved, &surface.pose, focal),
        _ => {
            let n1 = surface.before.index(ray.wavelength);
            let n2 = surface.after.index(ray.wavelength);
            refract(&moved, hit.normal, n1, n2)
        }
    };
    (out, Some(hit))
}

/// Result of [`trace_sequential`].
#[derive(Clone, Debug)]
pub struct Trace<S = f64> {
    pub ray: Ray<S>,
    pub hits: Vec<Hit<S>>,
}

/// Traces through surfaces in order. A miss or TIR kills the ray and truncates the log
/// (a TIR hit is still logged).
pub fn trace_sequential<S: Real>(ray: Ray<S>, surfaces: &[Surface<S>]) -> Trace<S> {
    let mut hits = Vec::with_capacity(surfaces.len());
    let mut r = ray;
    for s in surfaces {
        if !r.alive {
            break;
        }
        let (next, hit) = step(&r, s);
        if let Some(h) = hit {
            hits.push(h);
        }
        r = next;
    }
    Trace { ray: r, hits }
}

/// Allocation-free variant of [`trace_sequential`].
pub fn propagate<S: Real>(ray: Ray<S>, surfaces: &[Surface<S>]) -> Ray<S> {
    let mut r = ray;
    for s in surfaces {
        if !r.alive {
            break;
        }
        r = step(&r, s).0;
    }
    r
}

/// Surfaces in reverse order with swapped media.
pub fn reversed_surfaces<S: Real>(surfaces: &[Surface<S>]) -> Vec<Surface<S>> {
    surfaces.iter().rev().map(|s| s.reversed()).collect()
}
