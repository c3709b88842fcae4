//! Regenerates the shipped system configurations in `data/systems/`.

use cassi::designer::PrismDesignParams;
use cassi::system::{build_reference_system, SystemName};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/systems");
    for name in SystemName::REFERENCE {
        let cfg = build_reference_system(name, &PrismDesignParams::rebuilt())?;
        let path = dir.join(format!("{}.toml", name.label().to_ascii_lowercase()));
        std::fs::write(&path, cfg.to_toml_string())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
