//! `homsim`: command-line driver for virtual two-photon interference experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hom_core::analysis::curve::{read_grid, write_atomic, write_grid, GridSidecar};
use hom_core::analysis::snr::{
    measured_binning_gains, peak_pixels, REFERENCE_NOISE_GAIN, REFERENCE_SIGNAL_GAIN,
};
use hom_core::analysis::{analyze_point, analyze_reference, snr_budget, SnrBudget};
use hom_core::detector::read_stack;
use hom_core::experiment::{
    derive_seed, load_reference, parse_config, run_quality_map, run_reference, run_scan,
    ExperimentConfig, OutputLayout, ScanPlan, ScanVariable,
};
use hom_core::map::{CorrelationMap, Lattice, Normalization};
use hom_core::{Error, Result};

/// Exit codes other than 0 (success).
mod exit {
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const FIT: u8 = 4;
    pub const MISSING_REFERENCE: u8 = 5;
}

#[derive(Parser)]
#[command(
    name = "homsim",
    version,
    about = "Simulate and analyze multimode two-photon interference on photon-counting cameras"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; defaults apply when absent.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Frames per acquisition (overrides the configuration).
    #[arg(long, value_name = "N")]
    frames: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads; affects speed only.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Calibration run with the beamsplitter removed.
    Reference {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep one control variable against the stored reference.
    Scan {
        #[command(flatten)]
        common: Common,
        /// delta_t, pol_angle, delta_nu_x or delta_nu_y.
        #[arg(long, value_name = "NAME")]
        variable: String,
        /// Comma-separated control values; the default grid when absent.
        #[arg(long, value_name = "CSV-list")]
        points: Option<String>,
    },
    /// Spatial covariance maps of cross- and co-polarized runs.
    Qualitymap {
        #[command(flatten)]
        common: Common,
        /// Configuration of the cross-polarized run; by default the main
        /// configuration with a 90° polarization angle.
        #[arg(long, value_name = "PATH")]
        hv_config: Option<PathBuf>,
    },
    /// Noise budget of the covariance estimator.
    Snr {
        #[command(flatten)]
        common: Common,
        /// Mean occupancy per pixel per frame.
        #[arg(long, default_value_t = 0.12)]
        m: f64,
        /// Pixels per resolution cell.
        #[arg(long, default_value_t = 529.0)]
        pixels: f64,
        /// Peak integral in pixels.
        #[arg(long, default_value_t = 27.0)]
        peak_pixels: f64,
        /// Detected pairs per detected photon.
        #[arg(long, default_value_t = 0.13)]
        ratio: f64,
    },
    /// Analyze existing HOMF stacks.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        cam1: PathBuf,
        #[arg(long, value_name = "PATH")]
        cam2: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ConfigSyntax(_) => exit::USAGE,
        Error::Io { .. } | Error::Format { .. } => exit::IO,
        Error::Fit { .. } => exit::FIT,
        Error::MissingReference(_) => exit::MISSING_REFERENCE,
        Error::ScanPoint { source, .. } => exit_code(source),
        _ => exit::OTHER,
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    load_config_from(common.config.as_deref(), common)
}

fn load_config_from(path: Option<&Path>, common: &Common) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(frames) = common.frames {
        config.frames = frames;
    }
    config.validate()?;
    Ok(config)
}

fn set_workers(common: &Common) -> Result<()> {
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(Error::Config(vec![hom_core::error::ConfigIssue {
                key: "workers".into(),
                expected: "at least 1".into(),
                found: "0".into(),
            }]));
        }
        // fails only if a pool already exists, which keeps its own size
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn parse_points(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| {
                Error::Config(vec![hom_core::error::ConfigIssue {
                    key: "points".into(),
                    expected: "comma-separated numbers".into(),
                    found: v.into(),
                }])
            })
        })
        .collect()
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn reference(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let run = run_reference(&config, &common.out)?;
    let s = &run.stats;
    println!(
        "reference: {} frames, {:.1} pairs/frame",
        s.frames, run.pairs_per_frame
    );
    println!(
        "  occupancy         {:.4} / {:.4}",
        s.occupancy[0], s.occupancy[1]
    );
    println!(
        "  C0 integral       {:.3} ± {:.3} pairs/frame",
        s.integral, s.integral_err
    );
    println!(
        "  C0 width (σx, σy) {:.3}, {:.3} mm^-1",
        s.c0.sigma_x, s.c0.sigma_y
    );
    println!("  pair ratio        {:.4}", s.pair_detection_ratio);
    println!(
        "  written to        {}",
        OutputLayout::new(&common.out).reference_dir().display()
    );
    s.ensure_usable()
}

fn scan(common: &Common, variable: &str, points: Option<&str>) -> Result<()> {
    let config = load_config(common)?;
    let variable = ScanVariable::parse(variable)?;
    let points = match points {
        Some(list) => parse_points(list)?,
        None => variable.default_points(),
    };
    let plan = ScanPlan::new(variable, points, config.frames)?;
    let report = run_scan(&config, &plan, &common.out)?;
    println!(
        "scan {} ({} points × {} frames)",
        variable.name(),
        plan.points.len(),
        plan.frames
    );
    print!("{}", report.curve().to_csv());
    for (name, outcome) in [("R12", &report.fit_r12), ("R11+R22", &report.fit_r11p22)] {
        match outcome.fit() {
            Some(f) => {
                let sigma = f.sigma.map_or(String::new(), |s| {
                    format!(
                        ", σ = {s:.3} ± {:.3} {}",
                        f.sigma_err.unwrap_or(0.0),
                        report.unit
                    )
                });
                println!(
                    "fit {name}: V = {:.3} ± {:.3}{sigma}",
                    f.visibility, f.visibility_err
                );
            }
            None => println!("fit {name}: failed"),
        }
    }
    println!(
        "written to {}",
        OutputLayout::new(&common.out).scan_dir(variable).display()
    );
    match report.fit_error() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn qualitymap(common: &Common, hv_config: Option<&Path>) -> Result<()> {
    let vv = load_config(common)?;
    let hv = match hv_config {
        Some(p) => load_config_from(Some(p), common)?,
        None => {
            let mut c = vv.clone();
            c.setting.pol_angle = vv.setting.pol_angle + 90.0;
            c
        }
    };
    let maps = run_quality_map(&hv, &vv, &common.out)?;
    let radius = 0.25 * maps.hv.width.min(maps.hv.height) as f64;
    for (name, m) in [
        ("hv", &maps.hv),
        ("vv", &maps.vv),
        ("independent", &maps.independent),
        ("vv_minus_hv", &maps.vv_minus_hv),
        ("independent_minus_hv", &maps.independent_minus_hv),
    ] {
        println!(
            "{name:<22} mean {:+.3e}  centre {:+.3e}  edge {:+.3e}",
            m.mean(),
            m.mean_within(radius, false),
            m.mean_within(radius, true)
        );
    }
    println!(
        "written to {}",
        OutputLayout::new(&common.out).maps_dir().display()
    );
    Ok(())
}

/// Budget from the stored reference, when there is one for this configuration.
fn measured_budget(
    config: &ExperimentConfig,
    out: &Path,
    pixels: f64,
) -> Result<Option<SnrBudget>> {
    let stats = match load_reference(config, out) {
        Ok(s) => s,
        Err(Error::MissingReference(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let cam = config.camera1;
    let data = read_grid(&OutputLayout::new(out).reference_dir().join("c0.bin"))?;
    let lattice = Lattice::for_offsets(cam.width, cam.height, cam.nu_per_pixel);
    if data.len() != lattice.len() {
        return Err(Error::Dimension(
            "stored C0 map does not match the camera".into(),
        ));
    }
    let c0 = CorrelationMap {
        lattice,
        data,
        normalization: Normalization::Covariance,
        frames: stats.frames,
    };
    let m = 0.5 * (stats.occupancy[0] + stats.occupancy[1]);
    let p_prime = peak_pixels(&c0, stats.half_x.max(stats.half_y))?;
    let bin = config.analysis.map.bin;
    let (signal, noise) = measured_binning_gains(&c0, bin)?;
    Ok(Some(
        snr_budget(
            m,
            stats.frames as f64,
            pixels,
            p_prime,
            stats.pair_detection_ratio,
        )?
        .with_binning(signal, noise),
    ))
}

fn snr(common: &Common, m: f64, pixels: f64, p_prime: f64, ratio: f64) -> Result<()> {
    let config = load_config(common)?;
    let frames = common.frames.unwrap_or(config.frames) as f64;
    let quoted = snr_budget(m, frames, pixels, p_prime, ratio)?
        .with_binning(REFERENCE_SIGNAL_GAIN, REFERENCE_NOISE_GAIN);
    let measured = measured_budget(&config, &common.out, pixels)?;
    print_json(&serde_json::json!({ "quoted": quoted, "measured": measured }))
}

fn analyze(common: &Common, cam1: &Path, cam2: &Path) -> Result<()> {
    let config = load_config(common)?;
    let s1 = read_stack(cam1)?;
    let s2 = read_stack(cam2)?;
    let dir = common.out.join("analysis");
    let opts = config.analysis_options(derive_seed(config.seed, "bootstrap/analyze", 0, 0));
    match s1.meta.setting {
        None => {
            let (map, stats) = analyze_reference(&s1, &s2, &opts)?;
            let side = GridSidecar {
                width: map.lattice.nx,
                height: map.lattice.ny,
                bin_x: map.lattice.step_x,
                bin_y: map.lattice.step_y,
                units: format!(
                    "{} per offset bin; offsets in mm^-1",
                    map.normalization.as_str()
                ),
                origin: "center".into(),
                extra: vec![("frames".into(), stats.frames.to_string())],
            };
            write_grid(&dir.join("c0"), &map.data, &side)?;
            write_atomic(
                &dir.join("reference.json"),
                &serde_json::to_vec_pretty(&stats)?,
            )?;
            println!(
                "reference stacks: C0 integral {:.3} ± {:.3}",
                stats.integral, stats.integral_err
            );
        }
        Some(setting) => {
            let reference = load_reference(&config, &common.out)?;
            let (point, maps) = analyze_point(&s1, &s2, &reference, &setting, &opts)?;
            for (name, m) in [("c12", &maps.c12), ("c11", &maps.c11), ("c22", &maps.c22)] {
                let side = GridSidecar {
                    width: m.lattice.nx,
                    height: m.lattice.ny,
                    bin_x: m.lattice.step_x,
                    bin_y: m.lattice.step_y,
                    units: format!(
                        "{} per offset bin; offsets in mm^-1",
                        m.normalization.as_str()
                    ),
                    origin: "center".into(),
                    extra: vec![("frames".into(), m.frames.to_string())],
                };
                write_grid(&dir.join(name), &m.data, &side)?;
            }
            write_atomic(&dir.join("point.json"), &serde_json::to_vec_pretty(&point)?)?;
            println!(
                "R12 = {:.4} ± {:.4}, R11+R22 = {:.4} ± {:.4}, sum = {:.4} ± {:.4}",
                point.r12,
                point.r12_err,
                point.r11p22,
                point.r11p22_err,
                point.r_sum,
                point.r_sum_err
            );
        }
    }
    println!("written to {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Reference { common } => {
            set_workers(common)?;
            reference(common)
        }
        Command::Scan {
            common,
            variable,
            points,
        } => {
            set_workers(common)?;
            scan(common, variable, points.as_deref())
        }
        Command::Qualitymap { common, hv_config } => {
            set_workers(common)?;
            qualitymap(common, hv_config.as_deref())
        }
        Command::Snr {
            common,
            m,
            pixels,
            peak_pixels,
            ratio,
        } => snr(common, *m, *pixels, *peak_pixels, *ratio),
        Command::Analyze { common, cam1, cam2 } => {
            set_workers(common)?;
            analyze(common, cam1, cam2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
