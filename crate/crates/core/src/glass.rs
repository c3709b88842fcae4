//! Glass dispersion models and the embedded catalog.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::autodiff::Real;

/// Fraunhofer d line (helium), nm.
pub const LAMBDA_D: f64 = 587.5618;
/// Fraunhofer F line (hydrogen), nm.
pub const LAMBDA_F: f64 = 486.1327;
/// Fraunhofer C line (hydrogen), nm.
pub const LAMBDA_C: f64 = 656.2725;

const CATALOG_TEXT: &str = include_str!("../data/glass_catalog.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlassError {
    #[error("wavelength must be positive, got {0} nm")]
    Wavelength(f64),
    #[error("catalog line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown glass `{0}`")]
    Unknown(String),
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("cannot read catalog: {0}")]
    Io(String),
}

/// Three-term Sellmeier coefficients (wavelength in µm, `c` in µm²).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sellmeier {
    pub b: [f64; 3],
    pub c: [f64; 3],
}

impl Sellmeier {
    pub fn index(&self, wavelength_nm: f64) -> f64 {
        let l2 = (wavelength_nm * 1e-3).powi(2);
        let mut n2 = 1.0;
        for i in 0..3 {
            n2 += self.b[i] * l2 / (l2 - self.c[i]);
        }
        n2.sqrt()
    }
}

/// Coefficients `(a, b)` of `n(λ) = a + b / λ²` (λ in nm) reproducing `n_d` and `V_d`.
pub fn relaxed_coefficients<S: Real>(nd: S, vd: S) -> (S, S) {
    let k = 1.0 / (LAMBDA_F * LAMBDA_F) - 1.0 / (LAMBDA_C * LAMBDA_C);
    let b = (nd - 1.0) / (vd * k);
    let a = nd - b / (LAMBDA_D * LAMBDA_D);
    (a, b)
}

#[derive(Clone, Debug, PartialEq)]
pub enum GlassKind {
    Catalog(Sellmeier),
    Relaxed { nd: f64, vd: f64 },
}

/// A named glass.
#[derive(Clone, Debug, PartialEq)]
pub struct GlassModel {
    pub name: String,
    pub kind: GlassKind,
}

impl GlassModel {
    pub fn relaxed(name: impl Into<String>, nd: f64, vd: f64) -> Self {
        GlassModel { name: name.into(), kind: GlassKind::Relaxed { nd, vd } }
    }

    /// Unchecked index evaluation; see [`refractive_index`] for the checked form.
    pub fn index(&self, wavelength_nm: f64) -> f64 {
        match &self.kind {
            GlassKind::Catalog(s) => s.index(wavelength_nm),
            GlassKind::Relaxed { nd, vd } => {
                let (a, b) = relaxed_coefficients(*nd, *vd);
                a + b / (wavelength_nm * wavelength_nm)
            }
        }
    }
}

pub fn refractive_index(glass: &GlassModel, wavelength_nm: f64) -> Result<f64, GlassError> {
    if !(wavelength_nm > 0.0) {
        return Err(GlassError::Wavelength(wavelength_nm));
    }
    Ok(glass.index(wavelength_nm))
}

/// Catalog record with its nominal `n_d` and `V_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct CatalogGlass {
    pub name: String,
    pub nd: f64,
    pub vd: f64,
    pub sellmeier: Sellmeier,
}

impl CatalogGlass {
    pub fn model(&self) -> GlassModel {
        GlassModel { name: self.name.clone(), kind: GlassKind::Catalog(self.sellmeier) }
    }
}

/// Extent of the catalog in the `(n_d, V_d)` plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CatalogRanges {
    pub nd_min: f64,
    pub nd_span: f64,
    pub vd_min: f64,
    pub vd_span: f64,
}

#[derive(Clone, Debug)]
pub struct GlassCatalog {
    glasses: Vec<CatalogGlass>,
}

impl GlassCatalog {
    /// Parses the whitespace catalog format; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, GlassError> {
        let mut glasses = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| GlassError::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 9 {
                return Err(err(format!("expected 9 fields, found {}", fields.len())));
            }
            let mut nums = [0.0; 8];
            for (k, f) in fields[1..].iter().enumerate() {
                nums[k] = f.parse().map_err(|_| err(format!("invalid number `{f}`")))?;
                if !nums[k].is_finite() {
                    return Err(err(format!("non-finite value `{f}`")));
                }
            }
            if nums[0] <= 1.0 {
                return Err(err(format!("n_d must exceed 1, got {}", nums[0])));
            }
            if nums[1] <= 0.0 {
                return Err(err(format!("V_d must be positive, got {}", nums[1])));
            }
            glasses.push(CatalogGlass {
                name: fields[0].to_string(),
                nd: nums[0],
                vd: nums[1],
                sellmeier: Sellmeier { b: [nums[2], nums[3], nums[4]], c: [nums[5], nums[6], nums[7]] },
            });
        }
        if glasses.is_empty() {
            return Err(GlassError::EmptyCatalog);
        }
        Ok(GlassCatalog { glasses })
    }

    pub fn load(path: &Path) -> Result<Self, GlassError> {
        let text = std::fs::read_to_string(path).map_err(|e| GlassError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    /// The catalog shipped with the crate.
    pub fn embedded() -> Arc<GlassCatalog> {
        static CATALOG: OnceLock<Arc<GlassCatalog>> = OnceLock::new();
        CATALOG
            .get_or_init(|| Arc::new(GlassCatalog::parse(CATALOG_TEXT).expect("embedded catalog is valid")))
            .clone()
    }

    pub fn glasses(&self) -> &[CatalogGlass] {
        &self.glasses
    }

    pub fn get(&self, name: &str) -> Result<&CatalogGlass, GlassError> {
        self.glasses
            .iter()
            .find(|g| g.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| GlassError::Unknown(name.to_string()))
    }

    pub fn ranges(&self) -> CatalogRanges {
        let mut r = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for g in &self.glasses {
            r.0 = r.0.min(g.nd);
            r.1 = r.1.max(g.nd);
            r.2 = r.2.min(g.vd);
            r.3 = r.3.max(g.vd);
        }
        CatalogRanges { nd_min: r.0, nd_span: r.1 - r.0, vd_min: r.2, vd_span: r.3 - r.2 }
    }

    /// Normalized squared distance of `(nd, vd)` to every entry; returns the closest.
    /// Ties keep the earlier record.
    pub fn nearest(&self, nd: f64, vd: f64) -> (&CatalogGlass, f64) {
        let r = self.ranges();
        let mut best = (&self.glasses[0], f64::INFINITY);
        for g in &self.glasses {
            let d = ((nd - g.nd) / r.nd_span).powi(2) + ((vd - g.vd) / r.vd_span).powi(2);
            if d < best.1 {
                best = (g, d);
            }
        }
        best
    }
}
