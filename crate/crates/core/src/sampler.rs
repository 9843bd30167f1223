//! Photon-pair generation and stochastic routing through the lossy beamsplitter.
//!
//! A pair is drawn from a Gaussian joint distribution in which the sum of
//! the transverse spatial frequencies is narrow (the pair is nearly
//! anticorrelated) and the difference is broad (the far-field beam). The
//! beamsplitter is modelled at the level of outcome probabilities: both
//! photons survive independently with probability `R + T`, and a surviving
//! pair leaves through opposite ports or bunches in one port with the
//! weights of the two-photon interference law for the current overlap.

use std::ops::{Add, Neg, Sub};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{overlap, BeamSplitterSpec, InterferometerSetting, OverlapParams, PumpSpec};

/// Transverse spatial frequency (mm⁻¹).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpatialFreq {
    pub x: f64,
    pub y: f64,
}

impl SpatialFreq {
    pub const ZERO: SpatialFreq = SpatialFreq { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl Add for SpatialFreq {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for SpatialFreq {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for SpatialFreq {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Joint spatial-frequency statistics of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointMomentumSpec {
    /// Standard deviation of `ν_s + ν_i` along x (mm⁻¹).
    pub sigma_sum_x: f64,
    pub sigma_sum_y: f64,
    /// Standard deviation of `ν_s − ν_i` along x (mm⁻¹).
    pub sigma_diff_x: f64,
    pub sigma_diff_y: f64,
    /// Mean position of the signal beam (mm⁻¹).
    pub offset_signal: SpatialFreq,
    /// Mean position of the idler beam (mm⁻¹).
    pub offset_idler: SpatialFreq,
}

impl Default for JointMomentumSpec {
    fn default() -> Self {
        // The marginal standard deviation of each beam is ½·sqrt(σ_sum² + σ_diff²),
        // so σ_diff = 2 × 34 mm⁻¹ reproduces the far-field beam width.
        Self {
            sigma_sum_x: 0.8,
            sigma_sum_y: 0.6,
            sigma_diff_x: 68.0,
            sigma_diff_y: 68.0,
            offset_signal: SpatialFreq::ZERO,
            offset_idler: SpatialFreq::ZERO,
        }
    }
}

impl JointMomentumSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_sum_x", self.sigma_sum_x),
            ("sigma_sum_y", self.sigma_sum_y),
            ("sigma_diff_x", self.sigma_diff_x),
            ("sigma_diff_y", self.sigma_diff_y),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::domain(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.sigma_diff_x <= self.sigma_sum_x || self.sigma_diff_y <= self.sigma_sum_y {
            return Err(Error::domain("sigma_diff must exceed sigma_sum"));
        }
        Ok(())
    }

    /// Marginal standard deviation of a single beam along (x, y).
    pub fn marginal_sigma(&self) -> (f64, f64) {
        (
            0.5 * self.sigma_sum_x.hypot(self.sigma_diff_x),
            0.5 * self.sigma_sum_y.hypot(self.sigma_diff_y),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiphotonSample {
    pub nu_s: SpatialFreq,
    pub nu_i: SpatialFreq,
    /// Emission time within the pump pulse (ps).
    pub emission_time: f64,
    /// Polarization angles (degrees) before the interferometer's own rotation.
    pub pol_s: f64,
    pub pol_i: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CameraId {
    One,
    Two,
}

impl CameraId {
    pub fn index(self) -> usize {
        match self {
            CameraId::One => 0,
            CameraId::Two => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Path {
    Transmitted,
    Reflected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutedPhoton {
    pub camera: CameraId,
    pub path: Path,
    pub nu: SpatialFreq,
    pub alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    CoincidenceAcross,
    BunchedPort1,
    BunchedPort2,
    OneLost,
    BothLost,
}

/// Routed pair; `photons[0]` is the signal, `photons[1]` the idler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub kind: OutcomeKind,
    pub photons: [RoutedPhoton; 2],
}

impl PairOutcome {
    pub fn alive(&self) -> impl Iterator<Item = &RoutedPhoton> {
        self.photons.iter().filter(|p| p.alive)
    }
}

/// Conditional outcome probabilities `(across, bunched port 1, bunched port 2)`
/// given that both photons survive the splitter.
pub fn outcome_probabilities(o: f64, bs: &BeamSplitterSpec) -> (f64, f64, f64) {
    let (r, t) = (bs.reflectance, bs.transmittance);
    let norm = (r + t) * (r + t);
    if norm == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let across = (r * r + t * t - 2.0 * r * t * o) / norm;
    let bunch = r * t * (1.0 + o) / norm;
    (across, bunch, bunch)
}

pub fn sample_pair<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &JointMomentumSpec,
    pump: &PumpSpec,
) -> BiphotonSample {
    let mut axis = |sigma_sum: f64, sigma_diff: f64| {
        let s: f64 = sigma_sum * rng.sample::<f64, _>(StandardNormal);
        let d: f64 = sigma_diff * rng.sample::<f64, _>(StandardNormal);
        (0.5 * (s + d), 0.5 * (s - d))
    };
    let (sx, ix) = axis(spec.sigma_sum_x, spec.sigma_diff_x);
    let (sy, iy) = axis(spec.sigma_sum_y, spec.sigma_diff_y);
    let emission_time = pump.sigma_t * rng.sample::<f64, _>(StandardNormal);
    BiphotonSample {
        nu_s: SpatialFreq::new(sx, sy) + spec.offset_signal,
        nu_i: SpatialFreq::new(ix, iy) + spec.offset_idler,
        emission_time,
        pol_s: 0.0,
        pol_i: 0.0,
    }
}

/// Where a photon lands in the far field of a camera.
///
/// Transmitted photons are unchanged. Reflected photons are mirrored
/// left-right, then shifted by the beamsplitter tilt; the vertical shift has
/// opposite sign on the two cameras.
pub fn apply_camera_mapping(
    nu: SpatialFreq,
    path: Path,
    camera: CameraId,
    setting: &InterferometerSetting,
) -> SpatialFreq {
    match path {
        Path::Transmitted => nu,
        Path::Reflected => {
            let dy = match camera {
                CameraId::One => setting.delta_nu_y,
                CameraId::Two => -setting.delta_nu_y,
            };
            SpatialFreq::new(-nu.x + setting.delta_nu_x, nu.y + dy)
        }
    }
}

/// Output camera of the signal (`is_signal`) or idler photon taking `path`.
/// Camera 1 collects the transmitted signal and the reflected idler.
fn camera_for(is_signal: bool, path: Path) -> CameraId {
    match (is_signal, path) {
        (true, Path::Transmitted) | (false, Path::Reflected) => CameraId::One,
        _ => CameraId::Two,
    }
}

fn routed(
    nu: SpatialFreq,
    is_signal: bool,
    path: Path,
    setting: &InterferometerSetting,
) -> RoutedPhoton {
    let camera = camera_for(is_signal, path);
    RoutedPhoton {
        camera,
        path,
        nu: apply_camera_mapping(nu, path, camera, setting),
        alive: true,
    }
}

fn lost(nu: SpatialFreq, is_signal: bool) -> RoutedPhoton {
    RoutedPhoton {
        camera: camera_for(is_signal, Path::Transmitted),
        path: Path::Transmitted,
        nu,
        alive: false,
    }
}

/// Overlap seen by this pair: the setting's overlap with the pair's own
/// polarization difference added, scaled by `degradation ∈ [0, 1]`.
pub fn pair_overlap(
    sample: &BiphotonSample,
    setting: &InterferometerSetting,
    params: &OverlapParams,
    degradation: f64,
) -> f64 {
    let effective = InterferometerSetting {
        pol_angle: setting.pol_angle + (sample.pol_i - sample.pol_s),
        ..*setting
    };
    overlap(&effective, params) * degradation.clamp(0.0, 1.0)
}

/// Routes a pair through the beamsplitter with overlap `o`.
pub fn route_pair_with_overlap<R: Rng + ?Sized>(
    rng: &mut R,
    sample: &BiphotonSample,
    setting: &InterferometerSetting,
    bs: &BeamSplitterSpec,
    o: f64,
) -> PairOutcome {
    let survive = bs.survival();
    let s_alive = rng.random::<f64>() < survive;
    let i_alive = rng.random::<f64>() < survive;
    let (r, t) = (bs.reflectance, bs.transmittance);
    let single_path = |u: f64| {
        if u * survive < t {
            Path::Transmitted
        } else {
            Path::Reflected
        }
    };
    match (s_alive, i_alive) {
        (false, false) => PairOutcome {
            kind: OutcomeKind::BothLost,
            photons: [lost(sample.nu_s, true), lost(sample.nu_i, false)],
        },
        (true, false) => PairOutcome {
            kind: OutcomeKind::OneLost,
            photons: [
                routed(sample.nu_s, true, single_path(rng.random()), setting),
                lost(sample.nu_i, false),
            ],
        },
        (false, true) => PairOutcome {
            kind: OutcomeKind::OneLost,
            photons: [
                lost(sample.nu_s, true),
                routed(sample.nu_i, false, single_path(rng.random()), setting),
            ],
        },
        (true, true) => {
            let (across, bunch1, _) = outcome_probabilities(o, bs);
            let u: f64 = rng.random();
            let (kind, ps, pi) = if u < across {
                // tt vs rr split in proportion T² : R²
                let v: f64 = rng.random();
                if v * (r * r + t * t) < t * t {
                    (
                        OutcomeKind::CoincidenceAcross,
                        Path::Transmitted,
                        Path::Transmitted,
                    )
                } else {
                    (
                        OutcomeKind::CoincidenceAcross,
                        Path::Reflected,
                        Path::Reflected,
                    )
                }
            } else if u < across + bunch1 {
                (
                    OutcomeKind::BunchedPort1,
                    Path::Transmitted,
                    Path::Reflected,
                )
            } else {
                (
                    OutcomeKind::BunchedPort2,
                    Path::Reflected,
                    Path::Transmitted,
                )
            };
            PairOutcome {
                kind,
                photons: [
                    routed(sample.nu_s, true, ps, setting),
                    routed(sample.nu_i, false, pi, setting),
                ],
            }
        }
    }
}

pub fn route_pair<R: Rng + ?Sized>(
    rng: &mut R,
    sample: &BiphotonSample,
    setting: &InterferometerSetting,
    bs: &BeamSplitterSpec,
    params: &OverlapParams,
) -> PairOutcome {
    let o = pair_overlap(sample, setting, params, 1.0);
    route_pair_with_overlap(rng, sample, setting, bs, o)
}

/// Routing with the beamsplitter removed: signal to camera 1, idler to camera 2.
pub fn route_identity(sample: &BiphotonSample) -> PairOutcome {
    PairOutcome {
        kind: OutcomeKind::CoincidenceAcross,
        photons: [
            RoutedPhoton {
                camera: CameraId::One,
                path: Path::Transmitted,
                nu: sample.nu_s,
                alive: true,
            },
            RoutedPhoton {
                camera: CameraId::Two,
                path: Path::Transmitted,
                nu: sample.nu_i,
                alive: true,
            },
        ],
    }
}
