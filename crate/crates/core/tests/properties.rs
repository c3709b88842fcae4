//! Cross-module properties and frozen fixtures.

use cassi::designer::{DesignRunConfig, PrismDesignParams};
use cassi::mapping::build_mapping;
use cassi::recon::{metrics, reconstruct_tv, ForwardOperator, TvConfig};
use cassi::renderer::{acquisition_window, default_margin, render, Acquisition, Mask, RenderConfig, SpectralCube};
use cassi::scenes::{synthetic_scene, ScenePattern};
use cassi::system::{build_reference_system, SystemConfig, SystemName};

fn shipped(name: SystemName) -> SystemConfig {
    SystemConfig::shipped(name).unwrap()
}

#[test]
fn shipped_configs_match_the_builder() {
    for name in SystemName::REFERENCE {
        let built = build_reference_system(name, &PrismDesignParams::rebuilt()).unwrap();
        assert_eq!(shipped(name), built, "{name}");
    }
}

#[test]
fn shipped_design_config_is_the_default() {
    let text = include_str!("../data/design_default.toml");
    assert_eq!(DesignRunConfig::from_toml_str(text).unwrap(), DesignRunConfig::default());
    let err = DesignRunConfig::from_toml_str("grid_n = 7\nbogus = 1\n").unwrap_err();
    assert!(err.contains("bogus"), "{err}");
}

#[test]
fn flat_field_within_binomial_noise() {
    let cfg = shipped(SystemName::AP);
    let sys = cfg.build().unwrap();
    let wl = cfg.spectral.wavelengths();
    // Wider than the 83 px spread so that some columns receive every band.
    let (h, n) = (32, 112);
    let cube = SpectralCube { data: vec![1.0; h * n * wl.len()], ..SpectralCube::zeros(h, n, wl.clone(), cfg.sensor.pitch_um) };
    let config = RenderConfig::default();
    let acq = render(&cube, &sys, &config, None).unwrap();
    // Rows clear of the scene edge; columns lit by every band.
    let m = build_mapping(&sys, h, n, &wl);
    let (c, _) = m.get(h / 2, 0, wl.len() - 1).unwrap();
    let (c_end, _) = m.get(h / 2, n - 1, 0).unwrap();
    let (_, r_top) = m.get(0, n / 2, 0).unwrap();
    let (_, r_bot) = m.get(h - 1, n / 2, 0).unwrap();
    let w = acq.window;
    let (r0, r1) = ((r_top.min(r_bot) + 4.0) as i64, (r_top.max(r_bot) - 4.0) as i64);
    let (c0, c1) = ((c + 4.0) as i64, (c_end - 4.0) as i64);
    assert!(c1 - c0 > 8 && r1 - r0 > 8, "crop {c0}..{c1} × {r0}..{r1}");
    let mut v = Vec::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            v.push(acq.at((r - w.row0) as usize, (c - w.col0) as usize));
        }
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    // A voxel of value 1/s per sub-band sends its N rays into at most four pixels; each
    // share is binomial with p(1 − p) ≤ 1/4, over four voxels per sub-band.
    let subs = (wl.len() * config.oversampling) as f64;
    let share = 1.0 / config.oversampling as f64;
    let sigma = (subs * 4.0 * share * share * 0.25 / config.rays_per_pixel as f64).sqrt();
    let worst = v.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
    assert!((mean - wl.len() as f64).abs() < 3.0 * sigma, "mean {mean}");
    assert!(worst <= 3.0 * sigma, "worst deviation {worst} vs 3σ = {}", 3.0 * sigma);
}

#[test]
fn rendering_is_linear_under_a_shared_seed() {
    let cfg = shipped(SystemName::MSP);
    let sys = cfg.build().unwrap();
    let wl = cfg.spectral.wavelengths();
    let a = synthetic_scene(ScenePattern::Blocks, 24, 24, &wl, 10.0, 1);
    let b = synthetic_scene(ScenePattern::Smooth, 24, 24, &wl, 10.0, 2);
    let (ka, kb) = (0.75, 2.5);
    let sum = SpectralCube { data: a.data.iter().zip(&b.data).map(|(x, y)| ka * x + kb * y).collect(), ..a.clone() };
    let config = RenderConfig { rays_per_pixel: 8, ..RenderConfig::default() };
    let window = acquisition_window(&sys, 24, 24, &wl, default_margin(&config, cfg.spectral.max_nm)).unwrap();
    let ra = render(&a, &sys, &config, Some(window)).unwrap();
    let rb = render(&b, &sys, &config, Some(window)).unwrap();
    let rs = render(&sum, &sys, &config, Some(window)).unwrap();
    for ((x, y), s) in ra.data.iter().zip(&rb.data).zip(&rs.data) {
        assert!((ka * x + kb * y - s).abs() <= 1e-12 * s.abs().max(1.0));
    }
}

#[test]
fn misalignment_vanishes_continuously() {
    let base = shipped(SystemName::SP);
    let wl = base.spectral.wavelengths();
    let m0 = build_mapping(&base.build().unwrap(), 32, 32, &wl);
    let displacement = |theta: f64| {
        let mut cfg = base.clone();
        cfg.dispersive_element_mut().unwrap().placement.rotation_deg[0] += theta;
        let m = build_mapping(&cfg.build().unwrap(), 32, 32, &wl);
        m.entries
            .iter()
            .zip(&m0.entries)
            .map(|(a, b)| {
                let (a, b) = (a.unwrap(), b.unwrap());
                (a.0 - b.0).hypot(a.1 - b.1)
            })
            .fold(0.0, f64::max)
    };
    let (d1, d01, d001) = (displacement(1.0), displacement(0.1), displacement(0.01));
    assert!(d1 > d01 && d01 > d001, "{d1} {d01} {d001}");
    // Close to linear for small angles.
    assert!((d1 / d01 - 10.0).abs() < 2.0 && (d01 / d001 - 10.0).abs() < 1.0, "{d1} {d01} {d001}");
}

/// Solver fixture: noiseless, operator-consistent blocks acquisition through (AP).
#[test]
fn noiseless_blocks_fixture() {
    // Measured 22.08 dB.
    const FROZEN_PSNR_DB: f64 = 21.5;
    let cfg = shipped(SystemName::AP);
    let sys = cfg.build().unwrap();
    let wl = cfg.spectral.wavelengths();
    let scene = synthetic_scene(ScenePattern::Blocks, 64, 64, &wl, cfg.sensor.pitch_um, 7);
    let mask = Mask::random(64, 64, 0.5, 1).unwrap();
    let window = acquisition_window(&sys, 64, 64, &wl, 2).unwrap();
    let op = ForwardOperator::new(build_mapping(&sys, 64, 64, &wl), mask, window).unwrap();
    let acq = Acquisition { data: op.forward(&scene.data), ..Acquisition::zeros(window, cfg.sensor.pitch_um) };
    let r = reconstruct_tv(&acq, &op, &TvConfig::default()).unwrap();
    let q = metrics(&scene, &r.cube).unwrap();
    println!("noiseless blocks PSNR {:.2} dB, SSIM {:.3}", q.psnr_db, q.ssim);
    assert!(q.psnr_db > FROZEN_PSNR_DB, "{}", q.psnr_db);
}
