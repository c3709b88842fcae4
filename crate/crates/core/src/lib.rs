//! Differentiable optical simulation for coded-aperture snapshot spectral imagers.

pub mod autodiff;
pub mod designer;
pub mod geometry;
pub mod glass;
pub mod sampling;
pub mod system;
pub mod io;
pub mod mapping;
pub mod recon;
pub mod renderer;
pub mod scenes;
pub mod fidelity;
pub mod cli;
