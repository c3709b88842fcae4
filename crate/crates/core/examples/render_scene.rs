//! Renders a coded synthetic scene through a reference system and writes the acquisition
//! as a graymap.
//!
//! `cargo run --release --example render_scene [SP|AP|mSP|mAP] [blocks|slits|smooth]`

use cassi::io::write_pgm;
use cassi::renderer::{code_scene, render, Mask, RenderConfig};
use cassi::scenes::{synthetic_scene, ScenePattern};
use cassi::system::{SystemConfig, SystemName};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let name = SystemName::parse(args.get(1).map_or("AP", String::as_str))?;
    let pattern = ScenePattern::parse(args.get(2).map_or("blocks", String::as_str)).ok_or("unknown scene")?;
    let cfg = SystemConfig::shipped(name)?;
    let sys = cfg.build()?;
    let scene = synthetic_scene(pattern, 64, 64, &cfg.spectral.wavelengths(), cfg.sensor.pitch_um, 7);
    let mask = Mask::random(64, 64, 0.5, 1)?;
    let acq = render(&code_scene(&scene, &mask)?, &sys, &RenderConfig::default(), None)?;
    let w = acq.window;
    println!("{name} {}: window {}×{} at ({}, {}), {} rays, flux {:.2} of {:.2}", pattern.name(), w.rows, w.cols, w.row0, w.col0, acq.stats.rays, acq.total(), code_scene(&scene, &mask)?.total());
    let peak = acq.data.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let pixels: Vec<u8> = acq.data.iter().map(|v| (255.0 * v / peak).round() as u8).collect();
    let path = std::env::temp_dir().join(format!("acquisition_{}_{}.pgm", name.label(), pattern.name()));
    write_pgm(&path, w.cols, w.rows, &pixels)?;
    println!("wrote {}", path.display());
    Ok(())
}
