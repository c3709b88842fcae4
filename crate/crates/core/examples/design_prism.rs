//! Optimizes the double-Amici prism from the shipped start point and prints the design.
//!
//! `cargo run --release --example design_prism [iterations]`

use cassi::designer::{optimize_prism, DesignContext, DesignRunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = DesignRunConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.adam.iterations = n.parse()?;
        cfg.adam.refine_iterations = cfg.adam.iterations;
    }
    let ctx = DesignContext::reference(cfg.grid_n)?;
    let out = optimize_prism(&ctx, &cfg.initial, &cfg.weights, &cfg.adam)?;
    let trace = &out.loss_trace;
    for i in (0..trace.len()).step_by((trace.len() / 8).max(1)) {
        println!("iteration {i:>5}: loss {:.6e}", trace[i]);
    }
    let p = &out.snapped;
    println!("glasses {} / {}", out.glass_names[0], out.glass_names[1]);
    println!("A1 {:.4}°, A2 {:.4}°, αc {:.4}°", p.a1_deg, p.a2_deg, p.alpha_c_deg);
    let m = &out.metrics;
    println!("dispersion {:.4}°, deviation {:.4} mrad", m.dispersion_deg, m.deviation_mrad);
    println!("distortion max {:.2} µm, mean {:.2} µm, spread {:.1} µm", m.max_distortion_um, m.mean_distortion_um, m.spread_um);
    Ok(())
}
