//! Pupil and pixel sampling patterns.

use rand::seq::SliceRandom;
use rand::Rng;

/// Hexapolar pattern on the unit disc: the centre plus `6k` points on ring `k` of `rings`.
pub fn hexapolar(rings: usize) -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, 0.0)];
    for k in 1..=rings {
        let r = k as f64 / rings as f64;
        let n = 6 * k;
        for j in 0..n {
            let a = std::f64::consts::TAU * j as f64 / n as f64;
            pts.push((r * a.cos(), r * a.sin()));
        }
    }
    pts
}

/// Number of points in a hexapolar pattern with `rings` rings.
pub fn hexapolar_count(rings: usize) -> usize {
    1 + 3 * rings * (rings + 1)
}

/// Smallest ring count whose pattern holds at least `n` points.
pub fn hexapolar_rings_for(n: usize) -> usize {
    let mut r = 0;
    while hexapolar_count(r) < n {
        r += 1;
    }
    r
}

/// `n` Latin-hypercube jittered points in the unit square.
pub fn latin_hypercube<R: Rng>(rng: &mut R, n: usize) -> Vec<(f64, f64)> {
    let mut cols: Vec<usize> = (0..n).collect();
    cols.shuffle(rng);
    (0..n)
        .map(|i| {
            let x = (i as f64 + rng.gen::<f64>()) / n as f64;
            let y = (cols[i] as f64 + rng.gen::<f64>()) / n as f64;
            (x, y)
        })
        .collect()
}
