//! Seeded synthetic hyperspectral scenes with values in `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::renderer::SpectralCube;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenePattern {
    /// Constant-spectrum rectangles on a dim background.
    Blocks,
    /// Vertical bars of alternating spectra.
    Slits,
    /// Smooth spatial blobs with smooth spectra.
    Smooth,
}

impl ScenePattern {
    pub const ALL: [ScenePattern; 3] = [ScenePattern::Blocks, ScenePattern::Slits, ScenePattern::Smooth];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "blocks" => Some(ScenePattern::Blocks),
            "slits" => Some(ScenePattern::Slits),
            "smooth" => Some(ScenePattern::Smooth),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenePattern::Blocks => "blocks",
            ScenePattern::Slits => "slits",
            ScenePattern::Smooth => "smooth",
        }
    }
}

/// Smooth spectrum: a floor plus one or two Gaussian bumps, peak at most 1.
pub fn random_spectrum<R: Rng>(rng: &mut R, wavelengths: &[f64]) -> Vec<f64> {
    let lo = wavelengths[0];
    let hi = *wavelengths.last().unwrap();
    let span = (hi - lo).max(1.0);
    let floor = rng.gen_range(0.05..0.3);
    let bumps: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..=2))
        .map(|_| (lo + rng.gen::<f64>() * span, span * rng.gen_range(0.1..0.4), rng.gen_range(0.4..1.0)))
        .collect();
    let s: Vec<f64> = wavelengths
        .iter()
        .map(|&l| floor + bumps.iter().map(|(c, w, a)| a * (-((l - c) / w).powi(2) / 2.0).exp()).sum::<f64>())
        .collect();
    let m = s.iter().cloned().fold(0.0, f64::max);
    s.iter().map(|v| v / m.max(1.0)).collect()
}

pub fn synthetic_scene(
    pattern: ScenePattern,
    height: usize,
    width: usize,
    wavelengths: &[f64],
    pitch_um: f64,
    seed: u64,
) -> SpectralCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cube = SpectralCube::zeros(height, width, wavelengths.to_vec(), pitch_um);
    let nb = wavelengths.len();
    let fill = |cube: &mut SpectralCube, i: usize, j: usize, s: &[f64], scale: f64| {
        for k in 0..nb {
            cube.set(i, j, k, s[k] * scale);
        }
    };
    match pattern {
        ScenePattern::Blocks => {
            let bg: Vec<f64> = random_spectrum(&mut rng, wavelengths).iter().map(|v| v * 0.2).collect();
            for i in 0..height {
                for j in 0..width {
                    fill(&mut cube, i, j, &bg, 1.0);
                }
            }
            for _ in 0..6 {
                let s = random_spectrum(&mut rng, wavelengths);
                let (h0, w0) = (rng.gen_range(0..height), rng.gen_range(0..width));
                let (dh, dw) = (rng.gen_range(height / 8..=height / 3).max(1), rng.gen_range(width / 8..=width / 3).max(1));
                for i in h0..(h0 + dh).min(height) {
                    for j in w0..(w0 + dw).min(width) {
                        fill(&mut cube, i, j, &s, 1.0);
                    }
                }
            }
        }
        ScenePattern::Slits => {
            let spectra: Vec<Vec<f64>> = (0..3).map(|_| random_spectrum(&mut rng, wavelengths)).collect();
            let period = (width / 8).max(2);
            for i in 0..height {
                for j in 0..width {
                    let bar = j / period;
                    if bar % 2 == 0 {
                        fill(&mut cube, i, j, &spectra[(bar / 2) % 3], 1.0);
                    }
                }
            }
        }
        ScenePattern::Smooth => {
            let blobs: Vec<(f64, f64, f64, Vec<f64>)> = (0..5)
                .map(|_| {
                    (
                        rng.gen::<f64>() * height as f64,
                        rng.gen::<f64>() * width as f64,
                        rng.gen_range(0.1..0.3) * height.max(width) as f64,
                        random_spectrum(&mut rng, wavelengths),
                    )
                })
                .collect();
            for i in 0..height {
                for j in 0..width {
                    for k in 0..nb {
                        let v: f64 = blobs
                            .iter()
                            .map(|(ci, cj, r, s)| {
                                let d2 = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)) / (r * r);
                                s[k] * (-d2 / 2.0).exp()
                            })
                            .sum();
                        cube.set(i, j, k, v);
                    }
                }
            }
            let m = cube.data.iter().cloned().fold(0.0, f64::max);
            if m > 1.0 {
                cube.data.iter_mut().for_each(|v| *v /= m);
            }
        }
    }
    cube
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::linspace;

    #[test]
    fn scenes_are_bounded_and_seeded() {
        let wl = linspace(450.0, 650.0, 28);
        for p in ScenePattern::ALL {
            let a = synthetic_scene(p, 32, 32, &wl, 10.0, 5);
            assert!(a.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(a.total() > 0.0);
            assert_eq!(a, synthetic_scene(p, 32, 32, &wl, 10.0, 5));
            assert_ne!(a, synthetic_scene(p, 32, 32, &wl, 10.0, 6));
            assert_eq!(ScenePattern::parse(p.name()), Some(p));
        }
    }
}
