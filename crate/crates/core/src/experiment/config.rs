//! Experiment configuration: TOML file, defaults and cross-field validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisOptions, CorrelationOptions, CovMapOptions, MeanModel};
use crate::detector::{AberrationField, CameraSpec};
use crate::error::{ConfigIssue, Error, Result};
use crate::model::{
    BeamSplitterSpec, FilterSpec, InterferometerSetting, OverlapParams, PhaseMatchingSpec, PumpSpec,
};
use crate::sampler::JointMomentumSpec;

/// Spatial structure of the overlap degradation across the field.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AberrationSpec {
    #[default]
    None,
    /// `exp(-(r/scale_px)²)` around the camera-1 centre.
    Radial { scale_px: f64 },
}

/// Options of the spatial covariance maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub bin: usize,
    /// Smoothing kernel area in binned pixels; `0` disables smoothing.
    pub kernel_area: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        let d = CovMapOptions::default();
        Self {
            bin: d.bin,
            kernel_area: d.kernel_area.unwrap_or(0.0),
        }
    }
}

impl MapConfig {
    pub fn options(&self) -> CovMapOptions {
        CovMapOptions {
            bin: self.bin,
            kernel_area: (self.kernel_area > 0.0).then_some(self.kernel_area),
            mean: MeanModel::PerPixel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub correlation: CorrelationOptions,
    pub bootstrap_replicates: usize,
    pub map: MapConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            correlation: CorrelationOptions::default(),
            bootstrap_replicates: AnalysisOptions::default().bootstrap_replicates,
            map: MapConfig::default(),
        }
    }
}

/// Everything needed to reproduce a virtual experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Frames per acquisition (reference, scan point or map).
    pub frames: usize,
    /// Mean pairs per frame; back-solved from `target_occupancy` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs_per_frame: Option<f64>,
    /// Mean fraction of lit pixels on the reference cameras.
    pub target_occupancy: f64,
    /// Setting used for every variable a scan does not sweep.
    pub setting: InterferometerSetting,
    pub pump: PumpSpec,
    pub filter: FilterSpec,
    pub phase_matching: PhaseMatchingSpec,
    pub beamsplitter: BeamSplitterSpec,
    pub overlap: OverlapParams,
    pub joint: JointMomentumSpec,
    pub camera1: CameraSpec,
    pub camera2: CameraSpec,
    pub aberration: AberrationSpec,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            frames: 500,
            pairs_per_frame: None,
            target_occupancy: 0.12,
            setting: InterferometerSetting::default(),
            pump: PumpSpec::default(),
            filter: FilterSpec::default(),
            phase_matching: PhaseMatchingSpec::default(),
            beamsplitter: BeamSplitterSpec::default(),
            overlap: OverlapParams::default(),
            joint: JointMomentumSpec::default(),
            camera1: CameraSpec::default(),
            camera2: CameraSpec::default(),
            aberration: AberrationSpec::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn check(&mut self, ok: bool, key: &str, expected: &str, found: impl std::fmt::Display) {
        if !ok {
            self.0.push(ConfigIssue {
                key: key.into(),
                expected: expected.into(),
                found: found.to_string(),
            });
        }
    }

    fn positive(&mut self, key: &str, v: f64) {
        self.check(v > 0.0 && v.is_finite(), key, "a positive finite number", v);
    }

    fn non_negative(&mut self, key: &str, v: f64) {
        self.check(
            v >= 0.0 && v.is_finite(),
            key,
            "a non-negative finite number",
            v,
        );
    }

    fn finite(&mut self, key: &str, v: f64) {
        self.check(v.is_finite(), key, "a finite number", v);
    }
}

impl ExperimentConfig {
    /// Checks every field and cross-field constraint, reporting all offenders at once.
    pub fn validate(&self) -> Result<()> {
        let mut is = Issues(Vec::new());
        is.check(self.frames >= 2, "frames", "at least 2", self.frames);
        if let Some(p) = self.pairs_per_frame {
            is.non_negative("pairs_per_frame", p);
        }
        is.check(
            self.target_occupancy > 0.0 && self.target_occupancy < 1.0,
            "target_occupancy",
            "a value in (0, 1)",
            self.target_occupancy,
        );

        let s = &self.setting;
        is.finite("setting.delta_t", s.delta_t);
        is.finite("setting.delta_nu_x", s.delta_nu_x);
        is.finite("setting.delta_nu_y", s.delta_nu_y);
        is.finite("setting.pol_angle", s.pol_angle);
        if let Err(e) = s.validate() {
            if s.tilt.is_some() {
                is.check(
                    false,
                    "setting.tilt",
                    "shifts consistent with delta_nu_x/y",
                    e,
                );
            }
        }

        is.positive("pump.sigma_x", self.pump.sigma_x);
        is.positive("pump.sigma_y", self.pump.sigma_y);
        is.positive("pump.sigma_t", self.pump.sigma_t);
        is.positive("pump.wavelength", self.pump.wavelength);
        is.positive("filter.center_wavelength", self.filter.center_wavelength);
        is.positive("filter.sigma_nu_t", self.filter.sigma_nu_t);
        is.positive("phase_matching.sigma_nu_x", self.phase_matching.sigma_nu_x);
        is.positive("phase_matching.sigma_nu_y", self.phase_matching.sigma_nu_y);

        let bs = &self.beamsplitter;
        is.non_negative("beamsplitter.reflectance", bs.reflectance);
        is.non_negative("beamsplitter.transmittance", bs.transmittance);
        is.non_negative("beamsplitter.loss", bs.loss);
        let total = bs.reflectance + bs.transmittance + bs.loss;
        is.check(
            (total - 1.0).abs() <= 1e-9,
            "beamsplitter",
            "reflectance + transmittance + loss = 1",
            format!("sum {total}"),
        );
        is.check(
            bs.reflectance + bs.transmittance > 0.0,
            "beamsplitter",
            "reflectance + transmittance > 0",
            bs.reflectance + bs.transmittance,
        );

        let o = &self.overlap;
        is.positive("overlap.sigma_q", o.sigma_q);
        is.positive("overlap.sigma_spdc", o.sigma_spdc);
        is.positive("overlap.sigma_t", o.sigma_t);
        is.check(
            o.defocus_factor > 0.0 && o.defocus_factor <= 1.0,
            "overlap.defocus_factor",
            "a value in (0, 1]",
            o.defocus_factor,
        );

        let j = &self.joint;
        is.non_negative("joint.sigma_sum_x", j.sigma_sum_x);
        is.non_negative("joint.sigma_sum_y", j.sigma_sum_y);
        is.check(
            j.sigma_diff_x > j.sigma_sum_x,
            "joint.sigma_diff_x",
            "a value above joint.sigma_sum_x",
            j.sigma_diff_x,
        );
        is.check(
            j.sigma_diff_y > j.sigma_sum_y,
            "joint.sigma_diff_y",
            "a value above joint.sigma_sum_y",
            j.sigma_diff_y,
        );
        for (key, v) in [
            ("joint.offset_signal.x", j.offset_signal.x),
            ("joint.offset_signal.y", j.offset_signal.y),
            ("joint.offset_idler.x", j.offset_idler.x),
            ("joint.offset_idler.y", j.offset_idler.y),
        ] {
            is.finite(key, v);
        }

        for (name, cam) in [("camera1", &self.camera1), ("camera2", &self.camera2)] {
            let key = |f: &str| format!("{name}.{f}");
            is.check(
                (1..=u16::MAX as usize).contains(&cam.width),
                &key("width"),
                "an integer in [1, 65535]",
                cam.width,
            );
            is.check(
                (2..=u16::MAX as usize).contains(&cam.height) && cam.height % 2 == 0,
                &key("height"),
                "an even integer in [2, 65534]",
                cam.height,
            );
            is.positive(&key("nu_per_pixel"), cam.nu_per_pixel);
            is.check(
                (0.0..=1.0).contains(&cam.qe),
                &key("qe"),
                "a value in [0, 1]",
                cam.qe,
            );
            is.check(
                (0.0..1.0).contains(&cam.noise_prob),
                &key("noise_prob"),
                "a value in [0, 1)",
                cam.noise_prob,
            );
            if let Some((cx, cy)) = cam.center {
                is.check(
                    cx < cam.width && cy < cam.height,
                    &key("center"),
                    "a pixel on the sensor",
                    format!("({cx}, {cy})"),
                );
            }
        }
        let (c1, c2) = (&self.camera1, &self.camera2);
        is.check(
            c1.width == c2.width && c1.height == c2.height,
            "camera2",
            "the same dimensions as camera1",
            format!("{}x{} vs {}x{}", c2.width, c2.height, c1.width, c1.height),
        );
        is.check(
            c1.nu_per_pixel == c2.nu_per_pixel,
            "camera2.nu_per_pixel",
            "the same calibration as camera1",
            c2.nu_per_pixel,
        );

        if let AberrationSpec::Radial { scale_px } = self.aberration {
            is.positive("aberration.scale_px", scale_px);
        }

        let a = &self.analysis;
        is.check(
            a.bootstrap_replicates >= 10,
            "analysis.bootstrap_replicates",
            "at least 10",
            a.bootstrap_replicates,
        );
        let bin = a.map.bin;
        is.check(
            bin >= 1 && c1.width % bin.max(1) == 0 && c1.height % bin.max(1) == 0,
            "analysis.map.bin",
            "a positive divisor of the camera width and height",
            bin,
        );
        is.non_negative("analysis.map.kernel_area", a.map.kernel_area);

        if is.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(is.0))
        }
    }

    /// Parses TOML text; absent keys take their defaults and unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::ConfigSyntax(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn analysis_options(&self, bootstrap_seed: u64) -> AnalysisOptions {
        AnalysisOptions {
            correlation: self.analysis.correlation,
            bootstrap_replicates: self.analysis.bootstrap_replicates,
            bootstrap_seed,
        }
    }

    pub fn cameras(&self) -> [CameraSpec; 2] {
        [self.camera1, self.camera2]
    }

    pub fn aberration_field(&self) -> Result<Option<AberrationField>> {
        match self.aberration {
            AberrationSpec::None => Ok(None),
            AberrationSpec::Radial { scale_px } => {
                AberrationField::radial(&self.camera1, scale_px).map(Some)
            }
        }
    }

    /// Mean pairs per frame: the configured value, or the one giving
    /// `target_occupancy` on the reference cameras.
    pub fn pairs_per_frame(&self) -> f64 {
        self.pairs_per_frame
            .unwrap_or_else(|| self.solve_pairs_per_frame())
    }

    /// Mean reference occupancy, averaged over both cameras, for `lambda` pairs per frame.
    pub fn expected_occupancy(&self, lambda: f64) -> f64 {
        let (sx, sy) = self.joint.marginal_sigma();
        let beams = [
            (&self.camera1, self.joint.offset_signal),
            (&self.camera2, self.joint.offset_idler),
        ];
        let mut total = 0.0;
        for (cam, off) in beams {
            let (cx, cy) = cam.center();
            let d = cam.nu_per_pixel;
            let density = |v: f64, s: f64| {
                (-0.5 * v * v / (s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
            };
            let px: Vec<f64> = (0..cam.width)
                .map(|x| density((x as f64 - cx as f64) * d - off.x, sx) * d)
                .collect();
            let py: Vec<f64> = (0..cam.height)
                .map(|y| density((y as f64 - cy as f64) * d - off.y, sy) * d)
                .collect();
            let mut s = 0.0;
            for fy in &py {
                for fx in &px {
                    s += 1.0 - (1.0 - cam.noise_prob) * (-lambda * cam.qe * fx * fy).exp();
                }
            }
            total += s / cam.pixels() as f64;
        }
        0.5 * total
    }

    fn solve_pairs_per_frame(&self) -> f64 {
        let target = self.target_occupancy;
        if self.expected_occupancy(0.0) >= target {
            return 0.0;
        }
        let mut hi = 1.0;
        while self.expected_occupancy(hi) < target {
            hi *= 2.0;
            if hi > 1e12 {
                return hi;
            }
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.expected_occupancy(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Fingerprint of everything that shapes the simulated photons, excluding
    /// the number of frames.
    pub fn physics_fingerprint(&self) -> u64 {
        let mut c = self.clone();
        c.frames = 0;
        c.analysis = AnalysisConfig::default();
        super::seed::fnv1a64(c.to_toml().as_bytes())
    }

    /// Fingerprint of the whole configuration.
    pub fn fingerprint(&self) -> u64 {
        super::seed::fnv1a64(self.to_toml().as_bytes())
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml(&text)
}
