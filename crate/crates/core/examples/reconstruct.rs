//! Render, then reconstruct with the TV solver through the sub-band mapping operator.
//!
//! `cargo run --release --example reconstruct [SP|AP|mSP|mAP] [blocks|slits|smooth]`

use cassi::mapping::build_mapping;
use cassi::recon::{metrics, reconstruct_tv, ForwardOperator, TvConfig};
use cassi::renderer::{code_scene, render, sub_band_wavelengths, Mask, RenderConfig};
use cassi::scenes::{synthetic_scene, ScenePattern};
use cassi::system::{SystemConfig, SystemName};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let name = SystemName::parse(args.get(1).map_or("mSP", String::as_str))?;
    let pattern = ScenePattern::parse(args.get(2).map_or("smooth", String::as_str)).ok_or("unknown scene")?;
    let cfg = SystemConfig::shipped(name)?;
    let sys = cfg.build()?;
    let wl = cfg.spectral.wavelengths();
    let scene = synthetic_scene(pattern, 64, 64, &wl, cfg.sensor.pitch_um, 7);
    let mask = Mask::random(64, 64, 0.5, 1)?;
    let config = RenderConfig::default();
    let acq = render(&code_scene(&scene, &mask)?, &sys, &config, None)?;
    let n = config.oversampling;
    let mapping = build_mapping(&sys, 64, 64, &sub_band_wavelengths(&wl, n));
    let op = ForwardOperator::integrating_for(mapping, n, mask, &acq)?;
    let start = metrics(&scene, &reconstruct_tv(&acq, &op, &TvConfig { iterations: 0, ..TvConfig::default() })?.cube)?;
    let r = reconstruct_tv(&acq, &op, &TvConfig::default())?;
    let q = metrics(&scene, &r.cube)?;
    println!("{name} {}: initial PSNR {:.2} dB", pattern.name(), start.psnr_db);
    println!(
        "after {} iterations (best {}): PSNR {:.2} dB, SSIM {:.3}, SAM {:.3} rad ({:.3} normalized), RMSE {:.4}",
        r.residuals.len() - 1,
        r.best_iteration,
        q.psnr_db,
        q.ssim,
        q.sam_rad,
        q.sam_normalized,
        q.rmse
    );
    Ok(())
}
