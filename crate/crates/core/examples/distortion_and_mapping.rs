//! Distortion summaries and mapping extents of the four reference systems; writes the
//! distortion vectors of each as CSV into the directory given as argument (default: temp dir).

use cassi::fidelity::{max_y_spread, x_monotone};
use cassi::mapping::{build_mapping, distortion_map};
use cassi::system::{spectral_spread_at, SystemConfig, SystemName};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(std::env::temp_dir);
    for name in SystemName::REFERENCE {
        let cfg = SystemConfig::shipped(name)?;
        let sys = cfg.build()?;
        let d = distortion_map(&sys, 21, &[450.0, 520.0, 650.0])?;
        let path = dir.join(format!("distortion_{}.csv", name.label()));
        d.write_csv(&path)?;
        let s = spectral_spread_at(&sys, (0.0, 0.0), &[450.0, 650.0])?;
        let m = build_mapping(&sys, 64, 64, &cfg.spectral.wavelengths());
        println!(
            "{:>4}: distortion max {:>7.2} µm mean {:>6.2} µm | spread {:.1} µm | y spread {:.2} px | x monotone {} | {}",
            name.label(),
            d.max_um(),
            d.mean_um(),
            s[1].dx_um.hypot(s[1].dy_um),
            max_y_spread(&m),
            x_monotone(&m),
            path.display()
        );
    }
    Ok(())
}
