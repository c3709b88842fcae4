//! Runs the built-in oracles (minimum deviation, mapping/renderer consistency, flux,
//! adjoint) on every reference system.

use cassi::cli::validation_table;
use cassi::system::{SystemConfig, SystemName};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for name in SystemName::REFERENCE {
        let cfg = SystemConfig::shipped(name)?;
        println!("{name}");
        for row in validation_table(&cfg, 20, 64, 0).map_err(|e| e.message)? {
            println!("  {} {:<48} {:>11.3e} {}", if row.pass { "PASS" } else { "FAIL" }, row.name, row.value, row.threshold);
        }
    }
    Ok(())
}
