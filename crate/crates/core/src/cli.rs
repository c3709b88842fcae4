//! Command-line front end: design, render, map, analyze, reconstruct and validate runs
//! driven by config files, each leaving a manifest next to its outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::designer::{optimize_prism, DesignContext, DesignError, DesignRunConfig};
use crate::fidelity::{adjoint_check, flux_check, impulse_probes, max_y_spread, min_deviation_check, x_monotone};
use crate::io::{read_pgm, write_pgm, Container, IoError};
use crate::mapping::{build_mapping, distortion_map, psf, MappingError, MappingTable};
use crate::recon::{metrics, reconstruct_tv, ForwardOperator, ReconError, TvConfig};
use crate::renderer::{
    acquisition_window, code_scene, default_margin, render, sub_band_wavelengths, Acquisition, Mask, RenderConfig,
    RenderError, SpectralCube,
};
use crate::scenes::{synthetic_scene, ScenePattern};
use crate::system::{build_reference_system, spectral_spread_at, SystemConfig, SystemError, SystemName, CENTRAL_WAVELENGTH};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GEOMETRY: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "cassi", version, about = "Optical design, rendering and reconstruction for snapshot spectral imagers")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, short = 'o', global = true, env = "CASSI_OUTPUT_DIR", default_value = "cassi-out")]
    pub output_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Optimize the double-Amici prism and write a report, loss trace and system config.
    Design(DesignArgs),
    /// Render a coded scene through a system into an acquisition.
    Render(RenderArgs),
    /// Build the spatio-spectral mapping of a system.
    Map(MapArgs),
    /// Distortion map, spot diagrams and spread of a system.
    Analyze(AnalyzeArgs),
    /// Reconstruct a cube from an acquisition, a mapping and a mask.
    Reconstruct(ReconstructArgs),
    /// Run the built-in oracles on a system.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    /// Design config (TOML); defaults to the shipped run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the relaxed-glass iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Override the catalog-glass refinement iteration count.
    #[arg(long)]
    pub refine_iterations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Reference system name (SP, AP, mSP, mAP) or system config path.
    #[arg(long, default_value = "AP")]
    pub system: String,
    /// Synthetic scene (blocks, slits, smooth) or a cube container path.
    #[arg(long, default_value = "blocks")]
    pub scene: String,
    /// Scene side length in pixels for synthetic scenes.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Mask: random, slit, open or a graymap path.
    #[arg(long, default_value = "random")]
    pub mask: String,
    #[arg(long, default_value_t = 0.5)]
    pub open_ratio: f64,
    /// Seed of the scene, the mask and the rays.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub rays: usize,
    #[arg(long, default_value_t = 4)]
    pub oversampling: usize,
    /// Airy first-zero diameter at 520 nm, pixels.
    #[arg(long, default_value_t = 2.5)]
    pub airy_px: f64,
}

#[derive(Args, Debug)]
pub struct MapArgs {
    #[arg(long, default_value = "AP")]
    pub system: String,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Sub-band samples per native band (match the render oversampling for reconstruction).
    #[arg(long, default_value_t = 1)]
    pub subsamples: usize,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long, default_value = "AP")]
    pub system: String,
    /// Chief-ray grid per side of the distortion map.
    #[arg(long, default_value_t = 21)]
    pub grid: usize,
    /// Rays per spot diagram.
    #[arg(long, default_value_t = 127)]
    pub rays: usize,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub acquisition: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    /// Mask graymap.
    #[arg(long)]
    pub mask: PathBuf,
    /// Reference cube for the quality report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Mapping entries per cube band (the render oversampling the mapping was built with).
    #[arg(long, default_value_t = 1)]
    pub subsamples: usize,
    #[arg(long, default_value_t = TvConfig::default().iterations)]
    pub iterations: usize,
    #[arg(long, default_value_t = TvConfig::default().tv_weight)]
    pub tv_weight: f64,
    #[arg(long, default_value_t = TvConfig::default().spectral_weight)]
    pub spectral_weight: f64,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Reference system name or system config path.
    pub system: String,
    #[arg(long, default_value_t = 20)]
    pub probes: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn runtime(m: impl Into<String>) -> Self {
        CliError { code: EXIT_RUNTIME, message: m.into() }
    }
    pub fn config(m: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, message: m.into() }
    }
    pub fn geometry(m: impl Into<String>) -> Self {
        CliError { code: EXIT_GEOMETRY, message: m.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        match e {
            SystemError::UnknownName(_) | SystemError::Parse(_) | SystemError::Invalid(_) | SystemError::Glass(_) => {
                CliError::config(e.to_string())
            }
            _ => CliError::runtime(e.to_string()),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::Shape(_) | RenderError::Domain(_) => CliError::geometry(e.to_string()),
            RenderError::Io(e) => e.into(),
        }
    }
}

impl From<MappingError> for CliError {
    fn from(e: MappingError) -> Self {
        match e {
            MappingError::Domain(_) => CliError::geometry(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

impl From<ReconError> for CliError {
    fn from(e: ReconError) -> Self {
        match e {
            ReconError::Geometry(_) => CliError::geometry(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

impl From<DesignError> for CliError {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::InvalidParams(_) => CliError::config(e.to_string()),
            DesignError::Diverged { iteration, last_valid } => CliError::runtime(format!(
                "design diverged at iteration {iteration}; last valid parameters: {last_valid:?}"
            )),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

/// Record of one run, written as `manifest.toml` next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub config_paths: Vec<String>,
    pub rng_seed: u64,
    pub output_dir: String,
    pub tool_version: String,
    pub outputs: Vec<String>,
    /// Wall-clock milliseconds per phase.
    pub timings_ms: BTreeMap<String, f64>,
}

struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl Run {
    fn new(dir: &Path, command: &str, arguments: Vec<String>) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
        Ok(Run {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                arguments,
                config_paths: Vec::new(),
                rng_seed: 0,
                output_dir: dir.display().to_string(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                outputs: Vec::new(),
                timings_ms: BTreeMap::new(),
            },
            clock: Instant::now(),
        })
    }

    /// Marks the end of a phase.
    fn lap(&mut self, phase: &str) {
        self.manifest.timings_ms.insert(phase.into(), self.clock.elapsed().as_secs_f64() * 1e3);
        self.clock = Instant::now();
    }

    /// Path of a new output; outputs are write-once.
    fn output(&mut self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.dir.join(name);
        if p.exists() {
            return Err(CliError::runtime(format!("{} exists; outputs are never overwritten", p.display())));
        }
        self.manifest.outputs.push(name.into());
        Ok(p)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let p = self.output(name)?;
        std::fs::write(&p, text)?;
        Ok(p)
    }

    fn finish(mut self) -> Result<RunManifest, CliError> {
        let text = toml::to_string(&self.manifest).map_err(|e| CliError::runtime(e.to_string()))?;
        self.write_text("manifest.toml", &text)?;
        Ok(self.manifest)
    }
}

fn to_toml<T: Serialize>(v: &T) -> Result<String, CliError> {
    toml::to_string(v).map_err(|e| CliError::runtime(e.to_string()))
}

/// A reference name (`SP`, `AP`, `mSP`, `mAP`) or the path of a system config.
pub fn resolve_system(spec: &str) -> Result<SystemConfig, CliError> {
    let path = Path::new(spec);
    if spec.ends_with(".toml") || path.exists() {
        return Ok(SystemConfig::load(path)?);
    }
    Ok(SystemConfig::shipped(SystemName::parse(spec)?)?)
}

fn load_container(path: &Path) -> Result<Container, CliError> {
    Container::load(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Parses the arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let dir = cli.output_dir.clone();
    match cli.command {
        Command::Design(a) => cmd_design(&dir, &a, argv).map(|_| ()),
        Command::Render(a) => cmd_render(&dir, &a, argv).map(|_| ()),
        Command::Map(a) => cmd_map(&dir, &a, argv).map(|_| ()),
        Command::Analyze(a) => cmd_analyze(&dir, &a, argv).map(|_| ()),
        Command::Reconstruct(a) => cmd_reconstruct(&dir, &a, argv).map(|_| ()),
        Command::Validate(a) => cmd_validate(&dir, &a, argv).map(|_| ()),
    }
}

pub fn cmd_design(dir: &Path, a: &DesignArgs, argv: Vec<String>) -> Result<RunManifest, CliError> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            DesignRunConfig::from_toml_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => DesignRunConfig::default(),
    };
    if let Some(n) = a.iterations {
        cfg.adam.iterations = n;
    }
    if let Some(n) = a.refine_iterations {
        cfg.adam.refine_iterations = n;
    }
    let mut run = Run::new(dir, "design", argv)?;
    run.manifest.config_paths = a.config.iter().map(|p| p.display().to_string()).collect();
    let ctx = DesignContext::reference(cfg.grid_n)?;
    run.lap("setup");
    let out = optimize_prism(&ctx, &cfg.initial, &cfg.weights, &cfg.adam)?;
    run.lap("optimize");
    let mut trace = String::from("iteration,loss\n");
    for (i, l) in out.loss_trace.iter().enumerate() {
        let _ = writeln!(trace, "{i},{l:e}");
    }
    run.write_text("loss_trace.csv", &trace)?;
    run.write_text("design_report.toml", &to_toml(&out)?)?;
    let system = build_reference_system(SystemName::AP, &out.snapped)?;
    run.write_text("design_system.toml", &system.to_toml_string())?;
    let m = &out.metrics;
    println!(
        "glasses {} / {}; A1 {:.4}°, A2 {:.4}°, αc {:.4}°",
        out.glass_names[0], out.glass_names[1], out.snapped.a1_deg, out.snapped.a2_deg, out.snapped.alpha_c_deg
    );
    println!(
        "dispersion {:.4}°, deviation {:.3} mrad, distortion max {:.2} µm mean {:.2} µm, spread {:.1} µm",
        m.dispersion_deg, m.deviation_mrad, m.max_distortion_um, m.mean_distortion_um, m.spread_um
    );
    run.lap("write");
    run.finish()
}

#[derive(Serialize)]
struct RenderReport<'a> {
    system: String,
    window: crate::renderer::Window,
    stats: &'a crate::renderer::RenderStats,
    warnings: &'a [String],
    config: &'a RenderConfig,
}

pub fn cmd_render(dir: &Path, a: &RenderArgs, argv: Vec<String>) -> Result<RunManifest, CliError> {
    let mut run = Run::new(dir, "render", argv)?;
    run.manifest.rng_seed = a.seed;
    let cfg = resolve_system(&a.system)?;
    if Path::new(&a.system).exists() {
        run.manifest.config_paths.push(a.system.clone());
    }
    let system = cfg.build()?;
    let wl = cfg.spectral.wavelengths();
    let scene = match ScenePattern::parse(&a.scene) {
        Some(p) => {
            let s = synthetic_scene(p, a.size, a.size, &wl, cfg.sensor.pitch_um, a.seed);
            s.to_container().save(&run.output("scene.cssi")?)?;
            s
        }
        None => {
            run.manifest.config_paths.push(a.scene.clone());
            SpectralCube::from_container(&load_container(Path::new(&a.scene))?)?
        }
    };
    let (h, w) = (scene.height, scene.width);
    let mask = match a.mask.as_str() {
        "random" => Mask::random(h, w, a.open_ratio, a.seed)?,
        "slit" => Mask::slit(h, w, w / 2),
        "open" => Mask::ones(h, w),
        path => {
            run.manifest.config_paths.push(path.into());
            let (mw, mh, px) = read_pgm(Path::new(path))?;
            Mask::from_pgm_pixels(mw, mh, &px)
        }
    };
    write_pgm(&run.output("mask.pgm")?, w, h, &mask.to_pgm_pixels())?;
    run.lap("scene");
    let config = RenderConfig {
        oversampling: a.oversampling,
        rays_per_pixel: a.rays,
        airy_diameter_at_520: a.airy_px,
        rng_seed: a.seed,
    };
    let acq = render(&code_scene(&scene, &mask)?, &system, &config, None)?;
    run.lap("render");
    for warning in &acq.warnings {
        eprintln!("warning: {warning}");
    }
    acq.to_container().save(&run.output("acquisition.cssi")?)?;
    let report = RenderReport {
        system: cfg.name.to_string(),
        window: acq.window,
        stats: &acq.stats,
        warnings: &acq.warnings,
        config: &config,
    };
    run.write_text("render_report.toml", &to_toml(&report)?)?;
    println!(
        "acquisition {}×{} at detector ({}, {}); {} rays, {} lost",
        acq.window.rows, acq.window.cols, acq.window.row0, acq.window.col0, acq.stats.rays, acq.stats.dead
    );
    run.lap("write");
    run.finish()
}

pub fn cmd_map(dir: &Path, a: &MapArgs, argv: Vec<String>) -> Result<RunManifest, CliError> {
    let mut run = Run::new(dir, "map", argv)?;
    let cfg = resolve_system(&a.system)?;
    let system = cfg.build()?;
    if a.subsamples == 0 {
        return Err(CliError::config("subsamples must be at least 1"));
    }
    let wl = sub_band_wavelengths(&cfg.spectral.wavelengths(), a.subsamples);
    let m = build_mapping(&system, a.size, a.size, &wl);
    run.lap("map");
    m.to_container().save(&run.output("mapping.cssi")?)?;
    let missing = m.missing();
    println!("mapping {}×{}×{}; {missing} missing entries", m.height, m.width, m.bands());
    if let Some(((c0, r0), (c1, r1))) = m.bounds() {
        println!("detector columns {c0:.2}..{c1:.2}, rows {r0:.2}..{r1:.2}");
    }
    run.lap("write");
    run.finish()
}

#[derive(Serialize)]
struct SpotSummary {
    field_mm: (f64, f64),
    wavelength_nm: f64,
    rms_radius_um: f64,
    centroid_um: (f64, f64),
    lost: usize,
}

#[derive(Serialize)]
struct Analysis {
    system: String,
    spread_um: f64,
    distortion_max_um: f64,
    distortion_mean_um: f64,
    spots: Vec<SpotSummary>,
}

pub fn cmd_analyze(dir: &Path, a: &AnalyzeArgs, argv: Vec<String>) -> Result<RunManifest, CliError> {
    let mut run = Run::new(dir, "analyze", argv)?;
    let cfg = resolve_system(&a.system)?;
    let system = cfg.build()?;
    let lam = [cfg.spectral.min_nm, CENTRAL_WAVELENGTH, cfg.spectral.max_nm];
    let spread = spectral_spread_at(&system, (0.0, 0.0), &[lam[0], lam[2]])?
        .last()
        .map_or(0.0, |p| p.dx_um.hypot(p.dy_um));
    let d = distortion_map(&system, a.grid, &lam)?;
    run.lap("distortion");
    d.write_csv(&run.output("distortion.csv")?)?;
    let (fx, fy) = cfg.field_of_view_mm();
    let fields = [(0.0, 0.0), (0.4 * fx, 0.0), (0.4 * fx, 0.4 * fy)];
    let mut spots = Vec::new();
    let mut csv = String::from("field_x_mm,field_y_mm,wavelength_nm,x_um,y_um\n");
    for f in fields {
        for l in lam {
            let s = psf(&system, f, l, a.rays)?;
            for (x, y) in &s.points {
                let _ = writeln!(csv, "{},{},{l},{x},{y}", f.0, f.1);
            }
            spots.push(SpotSummary {
                field_mm: f,
                wavelength_nm: l,
                rms_radius_um: s.rms_radius,
                centroid_um: s.centroid,
                lost: s.lost,
            });
        }
    }
    run.lap("spots");
    run.write_text("spots.csv", &csv)?;
    let analysis = Analysis {
        system: cfg.name.to_string(),
        spread_um: spread,
        distortion_max_um: d.max_um(),
        distortion_mean_um: d.mean_um(),
        spots,
    };
    run.write_text("analysis.toml", &to_toml(&analysis)?)?;
    println!(
        "spread {:.1} µm; distortion max {:.2} µm, mean {:.2} µm",
        analysis.spread_um, analysis.distortion_max_um, analysis.distortion_mean_um
    );
    run.lap("write");
    run.finish()
}

#[derive(Serialize)]
struct ReconReport {
    best_iteration: usize,
    final_residual: f64,
    missing_mapping_entries: usize,
    note: String,
    quality: Option<crate::recon::QualityReport>,
}

pub fn cmd_reconstruct(dir: &Path, a: &ReconstructArgs, argv: Vec<String>) -> Result<RunManifest, CliError> {
    let acq = Acquisition::from_container(&load_container(&a.acquisition)?)?;
    let mapping = MappingTable::from_container(&load_container(&a.mapping)?, "file")?;
    let (mw, mh, px) = read_pgm(&a.mask)?;
    let mask = Mask::from_pgm_pixels(mw, mh, &px);
    let truth = match &a.truth {
        Some(p) => Some(SpectralCube::from_container(&load_container(p)?)?),
        None => None,
    };
    let mut run = Run::new(dir, "reconstruct", argv)?;
    run.manifest.config_paths =
        [&a.acquisition, &a.mapping, &a.mask].iter().map(|p| p.display().to_string()).collect();
    let op = ForwardOperator::integrating_for(mapping, a.subsamples, mask, &acq)?;
    if let Some(t) = &truth {
        if (t.height, t.width, t.bands()) != (op.mapping.height, op.mapping.width, op.bands()) {
            return Err(CliError::geometry(format!(
                "truth {}×{}×{} vs mapping {}×{}×{}",
                t.height,
                t.width,
                t.bands(),
                op.mapping.height,
                op.mapping.width,
                op.bands()
            )));
        }
    }
    run.lap("load");
    let cfg = TvConfig {
        iterations: a.iterations,
        tv_weight: a.tv_weight,
        spectral_weight: a.spectral_weight,
        ..TvConfig::default()
    };
    let r = reconstruct_tv(&acq, &op, &cfg)?;
    run.lap("reconstruct");
    r.cube.to_container().save(&run.output("reconstruction.cssi")?)?;
    let quality = match &truth {
        Some(t) => Some(metrics(t, &r.cube)?),
        None => None,
    };
    if let Some(q) = &quality {
        println!(
            "PSNR {:.2} dB, SSIM {:.4}, SAM {:.4} rad ({:.4} normalized), RMSE {:.4}",
            q.psnr_db, q.ssim, q.sam_rad, q.sam_normalized, q.rmse
        );
    }
    let report = ReconReport {
        best_iteration: r.best_iteration,
        final_residual: r.residuals[r.best_iteration],
        missing_mapping_entries: op.mapping.missing(),
        note: "the forward operator splats along the mapping and omits the Airy blur of the renderer".into(),
        quality,
    };
    run.write_text("quality.toml", &to_toml(&report)?)?;
    run.lap("write");
    run.finish()
}

/// One row of the validation table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleRow {
    pub name: String,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

/// Runs the module oracles on one system.
pub fn validation_table(cfg: &SystemConfig, probes: usize, size: usize, seed: u64) -> Result<Vec<OracleRow>, CliError> {
    let system = cfg.build()?;
    let mut rows = Vec::new();
    let mut push = |name: &str, value: f64, threshold: &str, pass: bool| {
        rows.push(OracleRow { name: name.into(), value, threshold: threshold.into(), pass });
    };
    let (traced, closed) = min_deviation_check("N-BK7", 60.0, CENTRAL_WAVELENGTH)?;
    push("minimum deviation |traced − closed form| (rad)", (traced - closed).abs(), "< 1e-9", (traced - closed).abs() < 1e-9);

    let wl = cfg.spectral.wavelengths();
    let m = build_mapping(&system, size, size, &wl);
    push("missing mapping entries", m.missing() as f64, "= 0", m.missing() == 0);
    if cfg.name.is_misaligned() {
        let s = max_y_spread(&m);
        push("y spread across the spectrum (px)", s, "> 1", s > 1.0);
    } else {
        let c = m.centre().0;
        let mut worst: f64 = 0.0;
        for j in 0..size {
            let ys: Vec<f64> = (0..wl.len()).filter_map(|k| m.get(c, j, k).map(|e| e.1)).collect();
            let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            worst = worst.max(hi - lo);
        }
        push("centre-row y variation along λ (px)", worst, "< 0.1", worst < 0.1);
        let mono = x_monotone(&m);
        push("x_d increasing with λ everywhere", f64::from(u8::from(mono)), "= 1", mono);
    }

    let config = RenderConfig { rng_seed: seed, ..RenderConfig::default() };
    let p = impulse_probes(&system, size, size, probes, seed, &config)?;
    let worst = p.iter().map(|q| q.error_px).fold(0.0, f64::max);
    push("impulse centroid vs mapping, worst (px)", worst, "< 0.5", worst < 0.5);

    let flat = SpectralCube { data: vec![1.0; size * size * wl.len()], ..SpectralCube::zeros(size, size, wl.clone(), cfg.sensor.pitch_um) };
    let f = flux_check(&system, &flat, &config)?;
    let z = (f.acquisition_total - f.cube_total).abs() / f.standard_error.max(f64::MIN_POSITIVE);
    push("flux |acquired − emitted| in standard errors", z, "≤ 4", f.within(4.0));

    let window = acquisition_window(&system, size, size, &wl, default_margin(&config, cfg.spectral.max_nm))?;
    let op = ForwardOperator::new(m, Mask::random(size, size, 0.5, seed)?, window)?;
    let gap = adjoint_check(&op, 10, seed);
    push("adjoint identity, worst relative gap", gap, "< 1e-10", gap < 1e-10);
    Ok(rows)
}

pub fn cmd_validate(dir: &Path, a: &ValidateArgs, argv: Vec<String>) -> Result<RunManifest, CliError> {
    let cfg = resolve_system(&a.system)?;
    let mut run = Run::new(dir, "validate", argv)?;
    run.manifest.rng_seed = a.seed;
    let rows = validation_table(&cfg, a.probes, a.size, a.seed)?;
    run.lap("oracles");
    let mut table = format!("oracles for {}\n", cfg.name);
    for r in &rows {
        let _ = writeln!(table, "{:<4} {:<48} {:>12.4e}  {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.value, r.threshold);
    }
    print!("{table}");
    run.write_text("validate.txt", &table)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    run.lap("write");
    let manifest = run.finish()?;
    if failed > 0 {
        return Err(CliError::runtime(format!("{failed} oracle(s) failed")));
    }
    Ok(manifest)
}
