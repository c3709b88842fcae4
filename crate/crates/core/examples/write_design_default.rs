//! Writes the shipped design run config to `data/design_default.toml`.

use cassi::designer::DesignRunConfig;

fn main() -> std::io::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/design_default.toml");
    std::fs::write(path, DesignRunConfig::default().to_toml_string())?;
    println!("wrote {path}");
    Ok(())
}
