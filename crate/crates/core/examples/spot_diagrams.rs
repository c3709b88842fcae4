//! RMS spot radii over field and wavelength for each reference system.

use cassi::mapping::psf;
use cassi::system::{SystemConfig, SystemName};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in SystemName::REFERENCE {
        let cfg = SystemConfig::shipped(name)?;
        let sys = cfg.build()?;
        let (fx, fy) = cfg.field_of_view_mm();
        println!("{name}");
        for field in [(0.0, 0.0), (0.45 * fx, 0.0), (0.0, 0.45 * fy), (0.45 * fx, 0.45 * fy)] {
            let radii: Vec<String> = [450.0, 520.0, 650.0]
                .iter()
                .map(|&l| psf(&sys, field, l, 217).map(|s| format!("{l} nm {:5.2} µm", s.rms_radius)))
                .collect::<Result<_, _>>()?;
            println!("  field ({:+.2}, {:+.2}) mm: {}", field.0, field.1, radii.join(", "));
        }
    }
    Ok(())
}
