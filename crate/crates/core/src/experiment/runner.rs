//! Virtual acquisitions and the on-disk experiment layout.
//!
//! ```text
//! <out>/config.toml                 snapshot of the last configuration used
//! <out>/reference/cam{1,2}.homf     no-beamsplitter stacks
//! <out>/reference/c0.{bin,txt}      reference correlation map
//! <out>/reference/stats.json
//! <out>/scans/<variable>/points/point_NNN.json
//! <out>/scans/<variable>/curve.csv
//! <out>/scans/<variable>/report.json
//! <out>/maps/*.{bin,txt}, maps/summary.json
//! ```

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::seed::{derive_seed, fnv1a64};
use crate::analysis::curve::{write_atomic, write_grid, GridSidecar};
use crate::analysis::{
    analyze_point, analyze_reference, covariance_map_2d_with, fit_dip, map_difference, FitResult,
    FitShape, PointAnalysis, PointMaps, ReferenceAnalysis, ScanCurve, SpatialMap,
};
use crate::detector::{expose_frame, write_stack, AcquisitionMeta, Frame, FrameStack};
use crate::error::{ConfigIssue, Error, Result};
use crate::map::CorrelationMap;
use crate::model::{analytic_ratios, overlap, InterferometerSetting};
use crate::sampler::{pair_overlap, route_identity, route_pair_with_overlap, sample_pair};

/// How photons reach the cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Routing {
    /// Beamsplitter removed: signal to camera 1, idler to camera 2.
    Reference,
    Interferometer(InterferometerSetting),
}

/// Simulates `frames` frame pairs. Frame `k` depends only on
/// `(config.seed, stream, point, k)`, so the result does not depend on the
/// number of worker threads.
pub fn simulate_stacks(
    config: &ExperimentConfig,
    routing: Routing,
    stream: &str,
    point: u64,
    frames: usize,
) -> Result<[FrameStack; 2]> {
    config.validate()?;
    let lambda = config.pairs_per_frame();
    let poisson = if lambda > 0.0 {
        Some(
            Poisson::new(lambda)
                .map_err(|e| Error::domain(format!("pairs per frame {lambda}: {e}")))?,
        )
    } else {
        None
    };
    let field = config.aberration_field()?;
    let cams = config.cameras();
    let pairs: Vec<[Frame; 2]> = (0..frames as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream, point, k));
            let n = poisson.map_or(0, |p| p.sample(&mut rng) as usize);
            let mut photons = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let sample = sample_pair(&mut rng, &config.joint, &config.pump);
                let outcome = match routing {
                    Routing::Reference => route_identity(&sample),
                    Routing::Interferometer(setting) => {
                        let degradation =
                            field.as_ref().map_or(1.0, |f| f.at(sample.nu_s, &cams[0]));
                        let o = pair_overlap(&sample, &setting, &config.overlap, degradation);
                        route_pair_with_overlap(
                            &mut rng,
                            &sample,
                            &setting,
                            &config.beamsplitter,
                            o,
                        )
                    }
                };
                photons.extend(outcome.photons);
            }
            expose_frame(&photons, &cams, k, &mut rng)
        })
        .collect();
    let (f1, f2): (Vec<Frame>, Vec<Frame>) = pairs.into_iter().map(|[a, b]| (a, b)).unzip();
    let meta = AcquisitionMeta {
        seed: config.seed,
        setting: match routing {
            Routing::Reference => None,
            Routing::Interferometer(s) => Some(s),
        },
        label: format!("{stream}/{point}"),
    };
    Ok([
        FrameStack::new(cams[0], f1, meta.clone())?,
        FrameStack::new(cams[1], f2, meta)?,
    ])
}

/// Paths of the fixed output layout under one root.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn reference_dir(&self) -> PathBuf {
        self.root.join("reference")
    }

    pub fn reference_stats(&self) -> PathBuf {
        self.reference_dir().join("stats.json")
    }

    pub fn scan_dir(&self, variable: ScanVariable) -> PathBuf {
        self.root.join("scans").join(variable.name())
    }

    pub fn maps_dir(&self) -> PathBuf {
        self.root.join("maps")
    }

    pub fn write_snapshot(&self, config: &ExperimentConfig) -> Result<()> {
        write_atomic(&self.config_snapshot(), config.to_toml().as_bytes())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn correlation_sidecar(map: &CorrelationMap, extra: Vec<(String, String)>) -> GridSidecar {
    GridSidecar {
        width: map.lattice.nx,
        height: map.lattice.ny,
        bin_x: map.lattice.step_x,
        bin_y: map.lattice.step_y,
        units: format!(
            "{} per offset bin; offsets in mm^-1",
            map.normalization.as_str()
        ),
        origin: "center".into(),
        extra,
    }
}

/// A reference acquisition and its analysis.
#[derive(Debug, Clone)]
pub struct ReferenceRun {
    pub stacks: [FrameStack; 2],
    pub map: CorrelationMap,
    pub stats: ReferenceAnalysis,
    pub pairs_per_frame: f64,
}

/// What `reference/stats.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub physics_fingerprint: u64,
    pub pairs_per_frame: f64,
    pub normalization: String,
    pub stats: ReferenceAnalysis,
}

pub fn simulate_reference(config: &ExperimentConfig) -> Result<ReferenceRun> {
    let stacks = simulate_stacks(config, Routing::Reference, "reference", 0, config.frames)?;
    let (map, stats) = analyze_reference(&stacks[0], &stacks[1], &config.analysis_options(0))?;
    Ok(ReferenceRun {
        stacks,
        map,
        stats,
        pairs_per_frame: config.pairs_per_frame(),
    })
}

/// Simulates and analyzes the reference, then writes stacks, map and statistics.
pub fn run_reference(config: &ExperimentConfig, out: &Path) -> Result<ReferenceRun> {
    let layout = OutputLayout::new(out);
    let run = simulate_reference(config)?;
    layout.write_snapshot(config)?;
    let dir = layout.reference_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_stack(&run.stacks[0], dir.join("cam1.homf"))?;
    write_stack(&run.stacks[1], dir.join("cam2.homf"))?;
    let extra = vec![("frames".into(), run.stats.frames.to_string())];
    write_grid(
        &dir.join("c0"),
        &run.map.data,
        &correlation_sidecar(&run.map, extra),
    )?;
    write_json(
        &layout.reference_stats(),
        &ReferenceRecord {
            physics_fingerprint: config.physics_fingerprint(),
            pairs_per_frame: run.pairs_per_frame,
            normalization: run.map.normalization.as_str().into(),
            stats: run.stats.clone(),
        },
    )?;
    Ok(run)
}

/// Loads the reference statistics written by [`run_reference`] for `config`.
pub fn load_reference(config: &ExperimentConfig, out: &Path) -> Result<ReferenceAnalysis> {
    let path = OutputLayout::new(out).reference_stats();
    if !path.exists() {
        return Err(Error::MissingReference(format!(
            "{} not found; run the reference first",
            path.display()
        )));
    }
    let record: ReferenceRecord = read_json(&path)?;
    if record.physics_fingerprint != config.physics_fingerprint() {
        return Err(Error::MissingReference(format!(
            "{} was produced with a different configuration",
            path.display()
        )));
    }
    record.stats.ensure_usable()?;
    Ok(record.stats)
}

/// Control variable of a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanVariable {
    DeltaT,
    PolAngle,
    DeltaNuX,
    DeltaNuY,
}

impl ScanVariable {
    pub const ALL: [ScanVariable; 4] = [
        ScanVariable::DeltaT,
        ScanVariable::PolAngle,
        ScanVariable::DeltaNuX,
        ScanVariable::DeltaNuY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanVariable::DeltaT => "delta_t",
            ScanVariable::PolAngle => "pol_angle",
            ScanVariable::DeltaNuX => "delta_nu_x",
            ScanVariable::DeltaNuY => "delta_nu_y",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| {
                Error::Config(vec![ConfigIssue {
                    key: "variable".into(),
                    expected: "one of delta_t, pol_angle, delta_nu_x, delta_nu_y".into(),
                    found: name.into(),
                }])
            })
    }

    pub fn unit(self) -> &'static str {
        match self {
            ScanVariable::DeltaT => "fs",
            ScanVariable::PolAngle => "deg",
            ScanVariable::DeltaNuX | ScanVariable::DeltaNuY => "mm^-1",
        }
    }

    pub fn default_points(self) -> Vec<f64> {
        let grid =
            |start: f64, step: f64, n: usize| (0..n).map(|i| start + step * i as f64).collect();
        match self {
            ScanVariable::DeltaT => grid(-400.0, 50.0, 17),
            ScanVariable::PolAngle => grid(0.0, 10.0, 10),
            ScanVariable::DeltaNuX => grid(-2.5, 0.5, 11),
            ScanVariable::DeltaNuY => grid(-5.0, 1.0, 10),
        }
    }

    /// `base` with this variable set to `value`. A beamsplitter tilt, if
    /// any, is dropped since the shifts no longer derive from it.
    pub fn apply(self, base: &InterferometerSetting, value: f64) -> InterferometerSetting {
        let mut s = *base;
        match self {
            ScanVariable::DeltaT => s.delta_t = value,
            ScanVariable::PolAngle => s.pol_angle = value,
            ScanVariable::DeltaNuX => {
                s.delta_nu_x = value;
                s.tilt = None;
            }
            ScanVariable::DeltaNuY => {
                s.delta_nu_y = value;
                s.tilt = None;
            }
        }
        s
    }

    /// Fit shapes for `(R12, R11 + R22)`.
    pub fn fit_shapes(self) -> (FitShape, FitShape) {
        match self {
            ScanVariable::PolAngle => (FitShape::Cos2, FitShape::Cos2Peak),
            _ => (FitShape::GaussianDip, FitShape::GaussianPeak),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub variable: ScanVariable,
    pub points: Vec<f64>,
    pub frames: usize,
}

impl ScanPlan {
    pub fn new(variable: ScanVariable, points: Vec<f64>, frames: usize) -> Result<Self> {
        let mut issues = Vec::new();
        let mut issue = |key: &str, expected: &str, found: String| {
            issues.push(ConfigIssue {
                key: key.into(),
                expected: expected.into(),
                found,
            })
        };
        if points.len() < 5 {
            issue("points", "at least 5 points", points.len().to_string());
        }
        if points.iter().any(|p| !p.is_finite()) {
            issue("points", "finite values", format!("{points:?}"));
        }
        let up = points.windows(2).all(|w| w[1] > w[0]);
        let down = points.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            issue("points", "strictly monotone values", format!("{points:?}"));
        }
        if frames < 2 {
            issue("frames", "at least 2", frames.to_string());
        }
        if issues.is_empty() {
            Ok(Self {
                variable,
                points,
                frames,
            })
        } else {
            Err(Error::Config(issues))
        }
    }

    pub fn default_for(variable: ScanVariable, frames: usize) -> Result<Self> {
        Self::new(variable, variable.default_points(), frames)
    }
}

/// Simulates and analyzes point `index` of `plan`.
pub fn simulate_point(
    config: &ExperimentConfig,
    reference: &ReferenceAnalysis,
    plan: &ScanPlan,
    index: usize,
) -> Result<(PointAnalysis, PointMaps)> {
    let run = || -> Result<(PointAnalysis, PointMaps)> {
        let value = *plan
            .points
            .get(index)
            .ok_or_else(|| Error::domain(format!("plan has no point {index}")))?;
        let setting = plan.variable.apply(&config.setting, value);
        setting.validate()?;
        let name = plan.variable.name();
        let stacks = simulate_stacks(
            config,
            Routing::Interferometer(setting),
            name,
            index as u64,
            plan.frames,
        )?;
        let bootstrap_seed =
            derive_seed(config.seed, &format!("bootstrap/{name}"), index as u64, 0);
        analyze_point(
            &stacks[0],
            &stacks[1],
            reference,
            &setting,
            &config.analysis_options(bootstrap_seed),
        )
    };
    run().map_err(|e| Error::ScanPoint {
        index,
        source: Box::new(e),
    })
}

/// Outcome of one curve fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FitOutcome {
    Converged {
        fit: FitResult,
    },
    Failed {
        iterations: usize,
        best_residual: f64,
        reason: String,
    },
}

impl FitOutcome {
    fn from_result(r: Result<FitResult>) -> Self {
        match r {
            Ok(fit) => FitOutcome::Converged { fit },
            Err(Error::Fit {
                iterations,
                best_residual,
            }) => FitOutcome::Failed {
                iterations,
                best_residual,
                reason: "did not converge".into(),
            },
            Err(e) => FitOutcome::Failed {
                iterations: 0,
                best_residual: f64::NAN,
                reason: e.to_string(),
            },
        }
    }

    pub fn fit(&self) -> Option<&FitResult> {
        match self {
            FitOutcome::Converged { fit } => Some(fit),
            FitOutcome::Failed { .. } => None,
        }
    }

    /// The failure as an error, `None` when converged.
    pub fn error(&self) -> Option<Error> {
        match self {
            FitOutcome::Converged { .. } => None,
            FitOutcome::Failed {
                iterations,
                best_residual,
                ..
            } => Some(Error::Fit {
                iterations: *iterations,
                best_residual: *best_residual,
            }),
        }
    }
}

/// Everything written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub variable: ScanVariable,
    pub unit: String,
    pub frames_per_point: usize,
    pub pairs_per_frame: f64,
    pub normalization: String,
    pub points: Vec<PointAnalysis>,
    /// `(R12, R11 + R22)` predicted from the overlap at each point.
    pub analytic: Vec<(f64, f64)>,
    pub fit_r12: FitOutcome,
    pub fit_r11p22: FitOutcome,
}

impl ScanReport {
    pub fn curve(&self) -> ScanCurve {
        let mut c = ScanCurve::new(self.variable.name(), self.variable.unit());
        for p in &self.points {
            let v = match self.variable {
                ScanVariable::DeltaT => p.setting.delta_t,
                ScanVariable::PolAngle => p.setting.pol_angle,
                ScanVariable::DeltaNuX => p.setting.delta_nu_x,
                ScanVariable::DeltaNuY => p.setting.delta_nu_y,
            };
            c.push(v, p.r12, p.r12_err, p.r11p22, p.r11p22_err);
        }
        c
    }

    /// First fit failure, if any.
    pub fn fit_error(&self) -> Option<Error> {
        self.fit_r12.error().or_else(|| self.fit_r11p22.error())
    }
}

/// Builds the curve, fits and analytic predictions from analyzed points.
pub fn assemble_report(
    config: &ExperimentConfig,
    plan: &ScanPlan,
    points: Vec<PointAnalysis>,
) -> ScanReport {
    let analytic = points
        .iter()
        .map(|p| analytic_ratios(overlap(&p.setting, &config.overlap), &config.beamsplitter))
        .collect();
    let mut report = ScanReport {
        variable: plan.variable,
        unit: plan.variable.unit().into(),
        frames_per_point: plan.frames,
        pairs_per_frame: config.pairs_per_frame(),
        normalization: config.analysis.correlation.normalization.as_str().into(),
        points,
        analytic,
        fit_r12: FitOutcome::Failed {
            iterations: 0,
            best_residual: f64::NAN,
            reason: "not run".into(),
        },
        fit_r11p22: FitOutcome::Failed {
            iterations: 0,
            best_residual: f64::NAN,
            reason: "not run".into(),
        },
    };
    let curve = report.curve();
    let (dip, peak) = plan.variable.fit_shapes();
    report.fit_r12 = FitOutcome::from_result(fit_dip(&curve, dip));
    report.fit_r11p22 = FitOutcome::from_result(fit_dip(&curve, peak));
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PointRecord {
    key: u64,
    analysis: PointAnalysis,
}

fn point_key(
    config: &ExperimentConfig,
    reference: &ReferenceAnalysis,
    plan: &ScanPlan,
    index: usize,
) -> u64 {
    let text = format!(
        "{}|{}|{}|{}|{}|{}|{}",
        config.fingerprint(),
        plan.variable.name(),
        index,
        plan.points[index].to_bits(),
        plan.frames,
        reference.integral.to_bits(),
        reference.split_integral.to_bits()
    );
    fnv1a64(text.as_bytes())
}

/// Runs a scan against the stored reference and writes points, curve and report.
///
/// Points already on disk for the same configuration, reference and plan are
/// reused, so an interrupted scan resumes where it stopped. Fit failures are
/// recorded in the report rather than returned; see [`ScanReport::fit_error`].
pub fn run_scan(config: &ExperimentConfig, plan: &ScanPlan, out: &Path) -> Result<ScanReport> {
    config.validate()?;
    let layout = OutputLayout::new(out);
    let reference = load_reference(config, out)?;
    let dir = layout.scan_dir(plan.variable);
    let mut points = Vec::with_capacity(plan.points.len());
    for index in 0..plan.points.len() {
        let path = dir.join("points").join(format!("point_{index:03}.json"));
        let key = point_key(config, &reference, plan, index);
        if let Ok(record) = read_json::<PointRecord>(&path) {
            if record.key == key {
                points.push(record.analysis);
                continue;
            }
        }
        let (analysis, _) = simulate_point(config, &reference, plan, index)?;
        write_json(
            &path,
            &PointRecord {
                key,
                analysis: analysis.clone(),
            },
        )?;
        points.push(analysis);
    }
    let report = assemble_report(config, plan, points);
    layout.write_snapshot(config)?;
    write_atomic(&dir.join("curve.csv"), report.curve().to_csv().as_bytes())?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

/// Spatial maps comparing cross-polarized (HV) and co-polarized (VV) runs.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityMaps {
    pub hv: SpatialMap,
    pub vv: SpatialMap,
    /// HV camera 1 against HV camera 2 shifted by one frame.
    pub independent: SpatialMap,
    /// `VV − HV`: negative where interference removes coincidences across images.
    pub vv_minus_hv: SpatialMap,
    /// `independent − HV`: minus the twin-photon signal.
    pub independent_minus_hv: SpatialMap,
}

/// Top-level keys in which two configurations differ, ignoring `setting.pol_angle`.
fn differences_beyond_polarization(
    a: &ExperimentConfig,
    b: &ExperimentConfig,
) -> Result<Vec<String>> {
    let strip = |c: &ExperimentConfig| -> Result<toml::Table> {
        let mut c = c.clone();
        c.setting.pol_angle = 0.0;
        toml::Table::try_from(&c).map_err(|e| Error::ConfigSyntax(e.to_string()))
    };
    let (ta, tb) = (strip(a)?, strip(b)?);
    let mut keys: Vec<String> = ta.keys().chain(tb.keys()).cloned().collect();
    keys.sort();
    keys.dedup();
    Ok(keys
        .into_iter()
        .filter(|k| ta.get(k) != tb.get(k))
        .collect())
}

pub fn quality_maps(
    config_hv: &ExperimentConfig,
    config_vv: &ExperimentConfig,
) -> Result<QualityMaps> {
    let diff = differences_beyond_polarization(config_hv, config_vv)?;
    if !diff.is_empty() {
        return Err(Error::Config(
            diff.into_iter()
                .map(|k| ConfigIssue {
                    key: k,
                    expected: "identical HV and VV values (only setting.pol_angle may differ)"
                        .into(),
                    found: "different values".into(),
                })
                .collect(),
        ));
    }
    let opts = config_hv.analysis.map.options();
    let hv = simulate_stacks(
        config_hv,
        Routing::Interferometer(config_hv.setting),
        "map/hv",
        0,
        config_hv.frames,
    )?;
    let vv = simulate_stacks(
        config_vv,
        Routing::Interferometer(config_vv.setting),
        "map/vv",
        0,
        config_vv.frames,
    )?;
    let hv_map = covariance_map_2d_with(&hv[0], &hv[1], &opts)?;
    let vv_map = covariance_map_2d_with(&vv[0], &vv[1], &opts)?;
    let independent = covariance_map_2d_with(&hv[0], &hv[1].rotated(1), &opts)?;
    Ok(QualityMaps {
        vv_minus_hv: map_difference(&vv_map, &hv_map)?,
        independent_minus_hv: map_difference(&independent, &hv_map)?,
        hv: hv_map,
        vv: vv_map,
        independent,
    })
}

/// Computes the quality maps and writes them as grids under `maps/`.
pub fn run_quality_map(
    config_hv: &ExperimentConfig,
    config_vv: &ExperimentConfig,
    out: &Path,
) -> Result<QualityMaps> {
    let maps = quality_maps(config_hv, config_vv)?;
    let layout = OutputLayout::new(out);
    layout.write_snapshot(config_vv)?;
    let dir = layout.maps_dir();
    let opts = config_hv.analysis.map.options();
    let mut summary = serde_json::Map::new();
    for (name, m) in [
        ("hv", &maps.hv),
        ("vv", &maps.vv),
        ("independent", &maps.independent),
        ("vv_minus_hv", &maps.vv_minus_hv),
        ("independent_minus_hv", &maps.independent_minus_hv),
    ] {
        let side = GridSidecar {
            width: m.width,
            height: m.height,
            bin_x: m.step,
            bin_y: m.step,
            units: "covariance per original pixel; cell size in mm^-1".into(),
            origin: "corner".into(),
            extra: vec![
                ("frames".into(), m.frames.to_string()),
                ("bin".into(), opts.bin.to_string()),
                (
                    "kernel_area".into(),
                    opts.kernel_area.map_or("none".into(), |a| a.to_string()),
                ),
            ],
        };
        write_grid(&dir.join(name), &m.data, &side)?;
        let radius = 0.25 * m.width.min(m.height) as f64;
        summary.insert(
            name.into(),
            serde_json::json!({
                "mean": m.mean(),
                "center_mean": m.mean_within(radius, false),
                "edge_mean": m.mean_within(radius, true),
            }),
        );
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(maps)
}
