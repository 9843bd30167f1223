//! Experiment parameters and the closed-form physics of the interferometer.
//!
//! Everything here is a pure function of value types. The Monte Carlo in
//! [`crate::sampler`] and the measurement chain in [`crate::analysis`] are
//! checked against these expressions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{CorrelationMap, Normalization};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const BS_SUM_TOLERANCE: f64 = 1e-9;

fn require_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}

/// Pump beam: waist standard deviations (mm), pulse standard deviation (ps), wavelength (nm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpSpec {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_t: f64,
    pub wavelength: f64,
}

impl Default for PumpSpec {
    fn default() -> Self {
        Self {
            sigma_x: 0.35,
            sigma_y: 0.37,
            sigma_t: 400.0,
            wavelength: 355.0,
        }
    }
}

/// Interference filter: centre wavelength (nm) and optical-frequency standard deviation (THz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSpec {
    pub center_wavelength: f64,
    pub sigma_nu_t: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            center_wavelength: 709.0,
            sigma_nu_t: 1.8,
        }
    }
}

/// Far-field spatial-frequency standard deviations of the down-converted beams (mm⁻¹).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseMatchingSpec {
    pub sigma_nu_x: f64,
    pub sigma_nu_y: f64,
}

impl Default for PhaseMatchingSpec {
    fn default() -> Self {
        Self {
            sigma_nu_x: 34.0,
            sigma_nu_y: 34.0,
        }
    }
}

/// Lossy beamsplitter. `reflectance + transmittance + loss == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamSplitterSpec {
    pub reflectance: f64,
    pub transmittance: f64,
    pub loss: f64,
}

impl Default for BeamSplitterSpec {
    fn default() -> Self {
        Self {
            reflectance: 0.5,
            transmittance: 0.4,
            loss: 0.1,
        }
    }
}

impl BeamSplitterSpec {
    pub fn new(reflectance: f64, transmittance: f64, loss: f64) -> Result<Self> {
        let bs = Self {
            reflectance,
            transmittance,
            loss,
        };
        bs.validate()?;
        Ok(bs)
    }

    /// Lossless splitter with the given reflectance.
    pub fn lossless(reflectance: f64) -> Result<Self> {
        Self::new(reflectance, 1.0 - reflectance, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let (r, t, l) = (self.reflectance, self.transmittance, self.loss);
        if [r, t, l].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain(
                "beamsplitter coefficients must be non-negative",
            ));
        }
        if (r + t + l - 1.0).abs() > BS_SUM_TOLERANCE {
            return Err(Error::domain(format!(
                "beamsplitter R + T + L must equal 1, got {}",
                r + t + l
            )));
        }
        Ok(())
    }

    /// Probability that a single photon is not lost in the splitter.
    pub fn survival(&self) -> f64 {
        self.reflectance + self.transmittance
    }
}

/// Beamsplitter tilt producing the reflected-beam shifts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsTilt {
    /// Focal length of the last lens before the cameras (mm).
    pub focal_f: f64,
    pub theta_bs: f64,
    pub phi_bs: f64,
}

impl BsTilt {
    /// `(δνx, δνy) = 2f·(δθ, δφ)`.
    pub fn shifts(&self) -> (f64, f64) {
        (
            2.0 * self.focal_f * self.theta_bs,
            2.0 * self.focal_f * self.phi_bs,
        )
    }
}

/// Controllable state of the interferometer for one acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterferometerSetting {
    /// Optical path delay (fs).
    pub delta_t: f64,
    /// Horizontal tilt shift of the reflected beams (mm⁻¹).
    pub delta_nu_x: f64,
    /// Vertical tilt shift of the reflected beams (mm⁻¹).
    pub delta_nu_y: f64,
    /// Angle between signal and idler polarizations (degrees).
    pub pol_angle: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tilt: Option<BsTilt>,
}

impl InterferometerSetting {
    /// Setting whose spatial shifts come from a beamsplitter tilt.
    pub fn from_tilt(tilt: BsTilt, delta_t: f64, pol_angle: f64) -> Self {
        let (delta_nu_x, delta_nu_y) = tilt.shifts();
        Self {
            delta_t,
            delta_nu_x,
            delta_nu_y,
            pol_angle,
            tilt: Some(tilt),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta_t", self.delta_t),
            ("delta_nu_x", self.delta_nu_x),
            ("delta_nu_y", self.delta_nu_y),
            ("pol_angle", self.pol_angle),
        ] {
            if !v.is_finite() {
                return Err(Error::domain(format!("{name} must be finite")));
            }
        }
        if let Some(tilt) = self.tilt {
            let (sx, sy) = tilt.shifts();
            let tol = 1e-9 * (1.0 + sx.abs().max(sy.abs()));
            if (sx - self.delta_nu_x).abs() > tol || (sy - self.delta_nu_y).abs() > tol {
                return Err(Error::domain(format!(
                    "tilt implies shifts ({sx}, {sy}) but setting has ({}, {})",
                    self.delta_nu_x, self.delta_nu_y
                )));
            }
        }
        Ok(())
    }
}

/// Widths of the three Gaussian indistinguishability factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlapParams {
    /// Horizontal biphoton coherence width (mm⁻¹).
    pub sigma_q: f64,
    /// Vertical phase-matching bandwidth (mm⁻¹).
    pub sigma_spdc: f64,
    /// Standard deviation of the temporal dip (fs).
    pub sigma_t: f64,
    /// Defocus reduction of the vertical width, in (0, 1].
    pub defocus_factor: f64,
}

/// Measured vertical dip width the default defocus factor reproduces (mm⁻¹).
pub const MEASURED_VERTICAL_DIP_WIDTH: f64 = 2.7;

impl Default for OverlapParams {
    fn default() -> Self {
        Self {
            sigma_q: 0.7,
            sigma_spdc: 34.0,
            sigma_t: 133.1,
            defocus_factor: MEASURED_VERTICAL_DIP_WIDTH / 34.0,
        }
    }
}

impl OverlapParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("sigma_q", self.sigma_q)?;
        require_positive("sigma_spdc", self.sigma_spdc)?;
        require_positive("sigma_t", self.sigma_t)?;
        require_positive("defocus_factor", self.defocus_factor)?;
        if self.defocus_factor > 1.0 {
            return Err(Error::domain("defocus_factor must not exceed 1"));
        }
        Ok(())
    }

    /// Effective vertical dip width `defocus_factor · sigma_spdc`.
    pub fn vertical_width(&self) -> f64 {
        self.defocus_factor * self.sigma_spdc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchmidtReport {
    pub k_x: f64,
    pub k_y: f64,
    pub k_t: f64,
    pub total: f64,
}

impl SchmidtReport {
    pub fn new(k_x: f64, k_y: f64, k_t: f64) -> Result<Self> {
        for (name, k) in [("k_x", k_x), ("k_y", k_y), ("k_t", k_t)] {
            if !(k >= 1.0) || !k.is_finite() {
                return Err(Error::domain(format!("{name} must be at least 1, got {k}")));
            }
        }
        Ok(Self {
            k_x,
            k_y,
            k_t,
            total: k_x * k_y * k_t,
        })
    }

    /// Schmidt numbers along x, y and t from the source parameters.
    pub fn from_source(
        pump: &PumpSpec,
        pm: &PhaseMatchingSpec,
        filter: &FilterSpec,
    ) -> Result<Self> {
        Self::new(
            schmidt_number(pump.sigma_x, pm.sigma_nu_x)?,
            schmidt_number(pump.sigma_y, pm.sigma_nu_y)?,
            // ps × THz is dimensionless
            schmidt_number(pump.sigma_t, filter.sigma_nu_t)?,
        )
    }
}

/// `K = ½(u + 1/u)` with `u = 2π·σ_pump·σ_ν`. Arguments must be in conjugate
/// units (mm and mm⁻¹, or ps and THz).
pub fn schmidt_number(sigma_pump: f64, sigma_nu: f64) -> Result<f64> {
    require_positive("sigma_pump", sigma_pump)?;
    require_positive("sigma_nu", sigma_nu)?;
    let u = 2.0 * PI * sigma_pump * sigma_nu;
    Ok(0.5 * (u + 1.0 / u))
}

pub fn total_dimensionality(report: &SchmidtReport) -> f64 {
    report.k_x * report.k_y * report.k_t
}

/// Indistinguishability of the two photons at the beamsplitter, in [0, 1].
pub fn overlap(setting: &InterferometerSetting, params: &OverlapParams) -> f64 {
    let sx = setting.delta_nu_x / params.sigma_q;
    let sy = setting.delta_nu_y / params.vertical_width();
    let st = setting.delta_t / params.sigma_t;
    let pol = setting.pol_angle.to_radians().cos();
    let o = (-(sx * sx) - sy * sy - st * st).exp() * pol * pol;
    o.clamp(0.0, 1.0)
}

/// Relative coincidence ratios `(R12, R11 + R22)` for overlap `o`.
pub fn analytic_ratios(o: f64, bs: &BeamSplitterSpec) -> (f64, f64) {
    let (r, t) = (bs.reflectance, bs.transmittance);
    (r * r + t * t - 2.0 * r * t * o, 2.0 * r * t * (1.0 + o))
}

/// Dip and maximum visibilities `(V12, V11+22)`.
pub fn analytic_visibilities(bs: &BeamSplitterSpec) -> Result<(f64, f64)> {
    require_positive("reflectance", bs.reflectance)?;
    require_positive("transmittance", bs.transmittance)?;
    let (r12_max, s_min) = analytic_ratios(0.0, bs);
    let (r12_min, s_max) = analytic_ratios(1.0, bs);
    Ok(((r12_max - r12_min) / r12_max, (s_max - s_min) / s_max))
}

/// Predicted `(C12, C11 + C22)` maps given the no-beamsplitter distribution `c0`.
pub fn analytic_correlation_map(
    c0: &CorrelationMap,
    setting: &InterferometerSetting,
    bs: &BeamSplitterSpec,
    params: &OverlapParams,
) -> Result<(CorrelationMap, CorrelationMap)> {
    let o = overlap(setting, params);
    let (r, t) = (bs.reflectance, bs.transmittance);
    let plus = c0.shifted_x(setting.delta_nu_x)?;
    let minus = c0.shifted_x(-setting.delta_nu_x)?;
    let v12 = if r * r + t * t > 0.0 {
        2.0 * r * t / (r * r + t * t)
    } else {
        0.0
    };
    let cross_factor = 1.0 - v12 * o;
    let intra_factor = 1.0 + o;
    let mut c12 = CorrelationMap::zeros(c0.lattice, c0.normalization);
    let mut c_intra = CorrelationMap::zeros(c0.lattice, c0.normalization);
    for i in 0..c0.data.len() {
        c12.data[i] = (r * r * plus.data[i] + t * t * minus.data[i]) * cross_factor;
        c_intra.data[i] = r * t * (plus.data[i] + minus.data[i]) * intra_factor;
    }
    c12.frames = c0.frames;
    c_intra.frames = c0.frames;
    Ok((c12, c_intra))
}

/// Unit-integral 2D Gaussian on `lattice`, a convenient stand-in for C0.
pub fn gaussian_c0(lattice: crate::map::Lattice, sigma_x: f64, sigma_y: f64) -> CorrelationMap {
    let norm = 1.0 / (2.0 * PI * sigma_x * sigma_y);
    CorrelationMap::from_fn(lattice, Normalization::Covariance, |x, y| {
        norm * (-0.5 * (x * x / (sigma_x * sigma_x) + y * y / (sigma_y * sigma_y))).exp()
    })
}

/// Wavelength standard deviation (nm) matching a coherence time (fs) at `lambda` (nm).
pub fn coherence_time_to_bandwidth(sigma_t_fs: f64, lambda_nm: f64) -> Result<f64> {
    require_positive("sigma_t", sigma_t_fs)?;
    require_positive("lambda", lambda_nm)?;
    let lambda = lambda_nm * 1e-9;
    let sigma_t = sigma_t_fs * 1e-15;
    Ok(lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT * sigma_t) * 1e9)
}

/// Temporal Schmidt number from the dip width: `½·σ_pump/σ_t` (ps and fs).
pub fn temporal_schmidt(sigma_t_pump_ps: f64, sigma_t_coh_fs: f64) -> Result<f64> {
    require_positive("sigma_t_pump", sigma_t_pump_ps)?;
    require_positive("sigma_t_coh", sigma_t_coh_fs)?;
    Ok(0.5 * sigma_t_pump_ps * 1e3 / sigma_t_coh_fs)
}

/// Spatial mode count from the ratio of beam widths to correlation-peak widths.
pub fn spatial_dimensionality(
    pm: &PhaseMatchingSpec,
    peak_sigma_x: f64,
    peak_sigma_y: f64,
) -> Result<f64> {
    require_positive("sigma_nu_x", pm.sigma_nu_x)?;
    require_positive("sigma_nu_y", pm.sigma_nu_y)?;
    require_positive("peak_sigma_x", peak_sigma_x)?;
    require_positive("peak_sigma_y", peak_sigma_y)?;
    Ok(pm.sigma_nu_x * pm.sigma_nu_y / (peak_sigma_x * peak_sigma_y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Lattice;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn paper_bs() -> BeamSplitterSpec {
        BeamSplitterSpec::default()
    }

    #[test]
    fn schmidt_paper_values() {
        let kx = schmidt_number(0.35, 34.0).unwrap();
        assert!((kx - 37.0).abs() < 1.0, "{kx}");
        let ky = schmidt_number(0.37, 34.0).unwrap();
        assert!((ky - 40.0).abs() < 1.0, "{ky}");
        let kt = schmidt_number(400.0, 1.8).unwrap();
        assert!((kt - 2300.0).abs() < 100.0, "{kt}");
    }

    #[test]
    fn schmidt_minimum_is_one() {
        let sigma = 1.0 / (2.0 * PI);
        assert_relative_eq!(schmidt_number(sigma, 1.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn schmidt_rejects_nonpositive() {
        assert!(schmidt_number(0.0, 1.0).is_err());
        assert!(schmidt_number(1.0, -2.0).is_err());
    }

    #[test]
    fn dimensionality_products() {
        let r = SchmidtReport::new(37.0, 40.0, 2300.0).unwrap();
        assert!((total_dimensionality(&r) / 3.4e6 - 1.0).abs() < 0.05);
        let unit = SchmidtReport::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(total_dimensionality(&unit), 1.0);
        let revised = SchmidtReport::new(37.0, 40.0, 1500.0).unwrap();
        assert_relative_eq!(total_dimensionality(&revised), 2.22e6, max_relative = 1e-12);
        assert!(SchmidtReport::new(0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn overlap_examples() {
        let p = OverlapParams::default();
        assert_eq!(overlap(&InterferometerSetting::default(), &p), 1.0);
        let s = InterferometerSetting {
            delta_t: p.sigma_t,
            ..Default::default()
        };
        assert_relative_eq!(overlap(&s, &p), (-1.0f64).exp(), epsilon = 1e-15);
        let hv = InterferometerSetting {
            pol_angle: 90.0,
            ..Default::default()
        };
        assert!(overlap(&hv, &p) < 1e-30);
    }

    #[test]
    fn ratio_examples() {
        let (r12, s) = analytic_ratios(1.0, &paper_bs());
        assert_relative_eq!(r12, 0.01, epsilon = 1e-15);
        assert_relative_eq!(s, 0.80, epsilon = 1e-15);
        let (r12, s) = analytic_ratios(0.0, &paper_bs());
        assert_relative_eq!(r12, 0.41, epsilon = 1e-15);
        assert_relative_eq!(s, 0.40, epsilon = 1e-15);
        let balanced = BeamSplitterSpec::lossless(0.5).unwrap();
        assert_eq!(analytic_ratios(1.0, &balanced).0, 0.0);
    }

    #[test]
    fn ratio_sum_is_conserved_on_grid() {
        let bs = paper_bs();
        let total = bs.survival().powi(2);
        for i in 0..1000 {
            let o = i as f64 / 999.0;
            let (a, b) = analytic_ratios(o, &bs);
            assert!((a + b - total).abs() < 1e-12);
        }
    }

    #[test]
    fn visibility_examples() {
        let (v12, vmax) = analytic_visibilities(&paper_bs()).unwrap();
        assert!((v12 - 0.9756).abs() < 1e-4);
        assert_eq!(vmax, 0.5);
        let (v12, _) = analytic_visibilities(&BeamSplitterSpec::lossless(0.5).unwrap()).unwrap();
        assert_relative_eq!(v12, 1.0, epsilon = 1e-15);
        let (v12, _) = analytic_visibilities(&BeamSplitterSpec::lossless(0.9).unwrap()).unwrap();
        assert_relative_eq!(v12, 0.18 / 0.82, epsilon = 1e-12);
    }

    #[test]
    fn bandwidth_conversion() {
        let s = coherence_time_to_bandwidth(133.1, 709.0).unwrap();
        assert!((s - 2.0).abs() < 0.05, "{s}");
        let half = coherence_time_to_bandwidth(266.2, 709.0).unwrap();
        assert_relative_eq!(half, s / 2.0, max_relative = 1e-12);
        assert!(coherence_time_to_bandwidth(1e30, 709.0).unwrap() < 1e-20);
    }

    #[test]
    fn temporal_schmidt_examples() {
        assert!((temporal_schmidt(400.0, 133.0).unwrap() - 1500.0).abs() < 10.0);
        assert_relative_eq!(temporal_schmidt(0.2, 100.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(
            temporal_schmidt(400.0, 200.0).unwrap(),
            1000.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn spatial_dimensionality_examples() {
        let pm = PhaseMatchingSpec::default();
        assert!((spatial_dimensionality(&pm, 0.8, 0.6).unwrap() - 2408.3).abs() < 0.1);
        assert_eq!(spatial_dimensionality(&pm, 34.0, 34.0).unwrap(), 1.0);
        assert_relative_eq!(spatial_dimensionality(&pm, 1.0, 1.0).unwrap(), 1156.0);
    }

    #[test]
    fn tilt_consistency() {
        let tilt = BsTilt {
            focal_f: 100.0,
            theta_bs: 0.01,
            phi_bs: -0.005,
        };
        let s = InterferometerSetting::from_tilt(tilt, 0.0, 0.0);
        assert_relative_eq!(s.delta_nu_x, 2.0);
        assert_relative_eq!(s.delta_nu_y, -1.0);
        s.validate().unwrap();
        let bad = InterferometerSetting {
            delta_nu_x: 3.0,
            ..s
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn correlation_map_centered_case() {
        let lattice = Lattice::new(81, 61, 0.1, 0.1).unwrap();
        let c0 = gaussian_c0(lattice, 0.8, 0.6);
        let bs = paper_bs();
        let p = OverlapParams::default();
        let (c12, intra) =
            analytic_correlation_map(&c0, &InterferometerSetting::default(), &bs, &p).unwrap();
        for i in 0..c0.data.len() {
            assert_relative_eq!(c12.data[i], 0.01 * c0.data[i], epsilon = 1e-15);
            assert_relative_eq!(intra.data[i], 0.8 * c0.data[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn correlation_map_horizontal_split() {
        let lattice = Lattice::new(161, 41, 0.05, 0.1).unwrap();
        let c0 = gaussian_c0(lattice, 0.3, 0.6);
        let s = InterferometerSetting {
            delta_nu_x: 2.0,
            ..Default::default()
        };
        let (c12, _) =
            analytic_correlation_map(&c0, &s, &paper_bs(), &OverlapParams::default()).unwrap();
        // C0(Δ+δ) peaks at -δ with weight R², C0(Δ-δ) at +δ with weight T².
        let left = c12.at_offset(-40, 0);
        let right = c12.at_offset(40, 0);
        assert_relative_eq!(left / right, 25.0 / 16.0, max_relative = 1e-9);
        let centre = c12.at_offset(0, 0);
        assert!(centre < 1e-6 * left);
    }

    #[test]
    fn correlation_map_of_zero_is_zero() {
        let lattice = Lattice::new(11, 11, 0.5, 0.5).unwrap();
        let c0 = CorrelationMap::zeros(lattice, Normalization::Covariance);
        let s = InterferometerSetting {
            delta_nu_x: 1.0,
            ..Default::default()
        };
        let (a, b) =
            analytic_correlation_map(&c0, &s, &paper_bs(), &OverlapParams::default()).unwrap();
        assert!(a.data.iter().chain(b.data.iter()).all(|v| *v == 0.0));
        let far = InterferometerSetting {
            delta_nu_x: 10.0,
            ..Default::default()
        };
        assert!(
            analytic_correlation_map(&c0, &far, &paper_bs(), &OverlapParams::default()).is_err()
        );
    }

    proptest! {
        #[test]
        fn ratios_are_monotone(o1 in 0.0f64..1.0, o2 in 0.0f64..1.0) {
            prop_assume!((o1 - o2).abs() > 1e-9);
            let bs = paper_bs();
            let (lo, hi) = if o1 < o2 { (o1, o2) } else { (o2, o1) };
            let (a_lo, b_lo) = analytic_ratios(lo, &bs);
            let (a_hi, b_hi) = analytic_ratios(hi, &bs);
            prop_assert!(a_hi < a_lo);
            prop_assert!(b_hi > b_lo);
        }

        #[test]
        fn overlap_symmetries(dt in -500.0f64..500.0, dx in -3.0f64..3.0, dy in -8.0f64..8.0, pol in -180.0f64..180.0) {
            let p = OverlapParams::default();
            let s = InterferometerSetting { delta_t: dt, delta_nu_x: dx, delta_nu_y: dy, pol_angle: pol, tilt: None };
            let o = overlap(&s, &p);
            prop_assert!((0.0..=1.0).contains(&o));
            for flipped in [
                InterferometerSetting { delta_t: -dt, ..s },
                InterferometerSetting { delta_nu_x: -dx, ..s },
                InterferometerSetting { delta_nu_y: -dy, ..s },
                InterferometerSetting { pol_angle: -pol, ..s },
                InterferometerSetting { pol_angle: 180.0 - pol, ..s },
            ] {
                prop_assert!((overlap(&flipped, &p) - o).abs() < 1e-12);
            }
        }

        #[test]
        fn schmidt_is_symmetric_under_inversion(u in 1e-3f64..1e3) {
            let sigma = u / (2.0 * PI);
            let k = schmidt_number(sigma, 1.0).unwrap();
            let k_inv = schmidt_number(1.0 / (2.0 * PI * u), 1.0).unwrap();
            prop_assert!((k - k_inv).abs() <= 1e-9 * k);
            prop_assert!(k >= 1.0 - 1e-12);
        }

        #[test]
        fn map_integral_matches_ratios(dx in -2.0f64..2.0, dt in -300.0f64..300.0, pol in 0.0f64..90.0) {
            let lattice = Lattice::new(201, 61, 0.05, 0.1).unwrap();
            let c0 = gaussian_c0(lattice, 0.4, 0.6);
            let s = InterferometerSetting { delta_t: dt, delta_nu_x: dx, delta_nu_y: 0.0, pol_angle: pol, tilt: None };
            let bs = paper_bs();
            let p = OverlapParams::default();
            let (c12, intra) = analytic_correlation_map(&c0, &s, &bs, &p).unwrap();
            let (r12, r_intra) = analytic_ratios(overlap(&s, &p), &bs);
            let norm = c0.sum();
            prop_assert!((c12.sum() / norm - r12).abs() < 1e-6);
            prop_assert!((intra.sum() / norm - r_intra).abs() < 1e-6);
        }
    }
}
