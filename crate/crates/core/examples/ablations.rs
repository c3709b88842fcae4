//! Desk-scale ablations on (mSP): the full mapping against the x-shift rule, and the
//! (AP) operator applied to an (mSP) acquisition.

use cassi::mapping::build_mapping;
use cassi::recon::{metrics, reconstruct_tv, ForwardOperator, TvConfig};
use cassi::renderer::{code_scene, render, sub_band_wavelengths, Mask, RenderConfig};
use cassi::scenes::{synthetic_scene, ScenePattern};
use cassi::system::{SystemConfig, SystemName};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let msp = SystemConfig::shipped(SystemName::MSP)?.build()?;
    let ap = SystemConfig::shipped(SystemName::AP)?.build()?;
    let wl = msp.config.spectral.wavelengths();
    let config = RenderConfig::default();
    let n = config.oversampling;
    let sub = sub_band_wavelengths(&wl, n);
    let mask = Mask::random(64, 64, 0.5, 1)?;
    let full = build_mapping(&msp, 64, 64, &sub);
    let shift = full.x_shift_only()?;
    let foreign = build_mapping(&ap, 64, 64, &sub).aligned_to(&full)?;
    println!("{:<8} {:>9} {:>9} {:>9}", "scene", "mapping", "x-shift", "AP op");
    for p in ScenePattern::ALL {
        let scene = synthetic_scene(p, 64, 64, &wl, 10.0, 7);
        let acq = render(&code_scene(&scene, &mask)?, &msp, &config, None)?;
        let mut row = Vec::new();
        for m in [&full, &shift, &foreign] {
            let op = ForwardOperator::integrating_for(m.clone(), n, mask.clone(), &acq)?;
            let r = reconstruct_tv(&acq, &op, &TvConfig::default())?;
            row.push(metrics(&scene, &r.cube)?.psnr_db);
        }
        println!("{:<8} {:>7.2}dB {:>7.2}dB {:>7.2}dB", p.name(), row[0], row[1], row[2]);
    }
    Ok(())
}
