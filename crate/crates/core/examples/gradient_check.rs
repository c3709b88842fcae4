//! Dual-number gradients of the six design losses against central finite differences.

use cassi::autodiff::gradient_check;
use cassi::designer::{DesignContext, LossTerm, PrismDesignParams, TermFunction};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ctx = DesignContext::reference(7)?;
    let x = PrismDesignParams::rebuilt().to_vector(&ctx.ranges);
    for term in LossTerm::ALL {
        let step = if term == LossTerm::Distortion { 1e-5 } else { 1e-6 };
        let g = gradient_check(&TermFunction { ctx: &ctx, term }, &x, step)?;
        println!("{:<11} max relative error {:.2e}", term.name(), g.max_rel_error);
        let dual: Vec<String> = g.dual.iter().map(|v| format!("{v:+.4e}")).collect();
        println!("            gradient [{}]", dual.join(", "));
    }
    Ok(())
}
