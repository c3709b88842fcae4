//! Single-slit spectrometer through (SP): rendered region spectra against ground truth.

use cassi::fidelity::{default_region_spectra, slit_spectrometer, SlitConfig};
use cassi::system::{SystemConfig, SystemName};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let system = SystemConfig::shipped(SystemName::SP)?.build()?;
    let wavelengths = system.config.spectral.wavelengths();
    let spectra = default_region_spectra(&wavelengths);
    let regions = slit_spectrometer(&system, &wavelengths, &spectra, &SlitConfig::default())?;
    for (i, r) in regions.iter().enumerate() {
        println!("region {i} rows {}..{}: relative RMSE {:.4}", r.rows.0, r.rows.1, r.relative_rmse);
    }
    let r = &regions[1];
    println!("column,measured,truth");
    for (c, (m, t)) in r.measured.iter().zip(&r.truth).enumerate() {
        if *t > 1e-3 || *m > 1e-3 {
            println!("{},{m:.4},{t:.4}", r.col0 + c as i64);
        }
    }
    Ok(())
}
