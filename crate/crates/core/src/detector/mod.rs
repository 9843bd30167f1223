//! Photon-counting cameras: pixel projection, thresholded exposure, and frame stacks.

mod homf;

pub use homf::{decode_stack, encode_stack, read_stack, write_stack, HOMF_MAGIC, HOMF_VERSION};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::InterferometerSetting;
use crate::sampler::{RoutedPhoton, SpatialFreq};

/// Pixel geometry and detection statistics of one camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    /// Spatial-frequency calibration (mm⁻¹ per pixel).
    pub nu_per_pixel: f64,
    /// Probability that a photon reaching the sensor is counted.
    pub qe: f64,
    /// Per-pixel, per-frame probability of a spurious count.
    pub noise_prob: f64,
    /// Pixel coordinates `(x, y)` of ν = 0. Defaults to `(width/2, height/2)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<(usize, usize)>,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            nu_per_pixel: 0.37,
            qe: 0.25,
            noise_prob: 0.002,
            center: None,
        }
    }
}

impl CameraSpec {
    pub fn center(&self) -> (usize, usize) {
        self.center.unwrap_or((self.width / 2, self.height / 2))
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::domain("camera dimensions must be positive"));
        }
        if self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return Err(Error::domain("camera dimensions must fit in 16 bits"));
        }
        if !(self.nu_per_pixel > 0.0) || !self.nu_per_pixel.is_finite() {
            return Err(Error::domain("nu_per_pixel must be positive"));
        }
        if !(0.0..=1.0).contains(&self.qe) {
            return Err(Error::domain("qe must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.noise_prob) {
            return Err(Error::domain("noise_prob must lie in [0, 1)"));
        }
        let (cx, cy) = self.center();
        if cx >= self.width || cy >= self.height {
            return Err(Error::domain("camera center must lie on the sensor"));
        }
        Ok(())
    }
}

/// Pixel `(x, y)` hit by spatial frequency `nu`, or `None` when outside the sensor.
pub fn project_to_pixel(nu: SpatialFreq, cam: &CameraSpec) -> Option<(usize, usize)> {
    let (cx, cy) = cam.center();
    let px = cx as f64 + (nu.x / cam.nu_per_pixel).round();
    let py = cy as f64 + (nu.y / cam.nu_per_pixel).round();
    if px < 0.0 || py < 0.0 || px >= cam.width as f64 || py >= cam.height as f64 {
        return None;
    }
    Some((px as usize, py as usize))
}

/// Binary image, bit-packed row-major in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    pub index: u64,
    bits: Vec<u64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, index: u64) -> Self {
        Self {
            width,
            height,
            index,
            bits: vec![0; (width * height).div_ceil(64)],
        }
    }

    /// Builds a frame from 0/1 values in row-major order.
    pub fn from_values(width: usize, height: usize, index: u64, values: &[u8]) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} frame",
                values.len()
            )));
        }
        let mut f = Self::new(width, height, index);
        for (i, &v) in values.iter().enumerate() {
            match v {
                0 => {}
                1 => f.bits[i / 64] |= 1 << (i % 64),
                other => return Err(Error::domain(format!("frame value {other} is not binary"))),
            }
        }
        Ok(f)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        let i = y * self.width + x;
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize) {
        let i = y * self.width + x;
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn occupancy(&self) -> f64 {
        self.count_ones() as f64 / (self.width * self.height) as f64
    }

    /// Row-major pixel values as `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        let n = self.width * self.height;
        (0..n)
            .map(|i| (self.bits[i / 64] >> (i % 64) & 1) as f64)
            .collect()
    }

    /// Indices `y * width + x` of lit pixels.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(w, &word)| {
            let mut word = word;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let b = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(w * 64 + b)
            })
        })
    }
}

/// What produced a stack; embedded in the HOMF header.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionMeta {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<InterferometerSetting>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

/// `N` frames from one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub camera: CameraSpec,
    pub frames: Vec<Frame>,
    pub meta: AcquisitionMeta,
}

impl FrameStack {
    pub fn new(camera: CameraSpec, frames: Vec<Frame>, meta: AcquisitionMeta) -> Result<Self> {
        for f in &frames {
            if f.width != camera.width || f.height != camera.height {
                return Err(Error::Dimension(format!(
                    "frame {} is {}x{}, camera is {}x{}",
                    f.index, f.width, f.height, camera.width, camera.height
                )));
            }
        }
        Ok(Self {
            camera,
            frames,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn mean_occupancy(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(Frame::occupancy).sum::<f64>() / self.frames.len() as f64
    }

    /// The same frames re-paired with a cyclic offset, as if taken on different shots.
    pub fn rotated(&self, offset: usize) -> Self {
        let n = self.frames.len();
        let frames = (0..n)
            .map(|k| {
                let mut f = self.frames[(k + offset) % n].clone();
                f.index = self.frames[k].index;
                f
            })
            .collect();
        Self {
            camera: self.camera,
            frames,
            meta: self.meta.clone(),
        }
    }

    pub fn ensure_compatible(&self, other: &FrameStack) -> Result<()> {
        if self.width() != other.width() || self.height() != other.height() {
            return Err(Error::Dimension(format!(
                "stacks are {}x{} and {}x{}",
                self.width(),
                self.height(),
                other.width(),
                other.height()
            )));
        }
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "stacks hold {} and {} frames",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }
}

/// Per-pixel multiplicative degradation of the overlap, in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AberrationField {
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
}

impl AberrationField {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![1.0; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension("aberration field size mismatch".into()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain("aberration field values must lie in [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// `exp(-(r/scale)²)` around the camera centre, with `r` in pixels.
    pub fn radial(cam: &CameraSpec, scale_px: f64) -> Result<Self> {
        if !(scale_px > 0.0) {
            return Err(Error::domain("radial aberration scale must be positive"));
        }
        let (cx, cy) = cam.center();
        let mut values = Vec::with_capacity(cam.pixels());
        for y in 0..cam.height {
            for x in 0..cam.width {
                let dx = x as f64 - cx as f64;
                let dy = y as f64 - cy as f64;
                values.push((-(dx * dx + dy * dy) / (scale_px * scale_px)).exp());
            }
        }
        Ok(Self {
            width: cam.width,
            height: cam.height,
            values,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.values.iter().all(|v| *v == 1.0)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Value at the pixel `nu` projects to, clamped to the nearest edge pixel.
    pub fn at(&self, nu: SpatialFreq, cam: &CameraSpec) -> f64 {
        let (cx, cy) = cam.center();
        let clamp = |c: usize, v: f64, n: usize| {
            (c as f64 + (v / cam.nu_per_pixel).round()).clamp(0.0, (n - 1) as f64) as usize
        };
        self.get(clamp(cx, nu.x, self.width), clamp(cy, nu.y, self.height))
    }
}

fn add_noise<R: Rng + ?Sized>(rng: &mut R, frame: &mut Frame, p: f64) {
    if p <= 0.0 {
        return;
    }
    // geometric gaps between noise events
    let n = frame.width * frame.height;
    let log_q = (1.0 - p).ln();
    let mut i = 0usize;
    loop {
        let u: f64 = rng.random();
        let gap = ((1.0 - u).ln() / log_q).floor();
        if gap >= (n - i) as f64 {
            break;
        }
        i += gap as usize;
        frame.bits[i / 64] |= 1 << (i % 64);
        i += 1;
        if i >= n {
            break;
        }
    }
}

/// Thresholded exposure of both cameras for one frame.
///
/// Each alive photon is counted with probability `qe` of its camera, then
/// every pixel independently fires with `noise_prob`. Pixels saturate at 1.
pub fn expose_frame<'a, R: Rng + ?Sized>(
    photons: impl IntoIterator<Item = &'a RoutedPhoton>,
    cams: &[CameraSpec; 2],
    index: u64,
    rng: &mut R,
) -> [Frame; 2] {
    let mut frames = [
        Frame::new(cams[0].width, cams[0].height, index),
        Frame::new(cams[1].width, cams[1].height, index),
    ];
    for p in photons {
        if !p.alive {
            continue;
        }
        let k = p.camera.index();
        if rng.random::<f64>() >= cams[k].qe {
            continue;
        }
        if let Some((x, y)) = project_to_pixel(p.nu, &cams[k]) {
            frames[k].set(x, y);
        }
    }
    for (frame, cam) in frames.iter_mut().zip(cams) {
        add_noise(rng, frame, cam.noise_prob);
    }
    frames
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{CameraId, Path};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn photon(camera: CameraId, nu: SpatialFreq) -> RoutedPhoton {
        RoutedPhoton {
            camera,
            path: Path::Transmitted,
            nu,
            alive: true,
        }
    }

    #[test]
    fn projection_examples() {
        let cam = CameraSpec {
            nu_per_pixel: 0.4,
            ..Default::default()
        };
        let (cx, cy) = cam.center();
        assert_eq!(project_to_pixel(SpatialFreq::ZERO, &cam), Some((cx, cy)));
        assert_eq!(
            project_to_pixel(SpatialFreq::new(0.8, 0.0), &cam),
            Some((cx + 2, cy))
        );
        assert_eq!(project_to_pixel(SpatialFreq::new(1000.0, 0.0), &cam), None);
        assert_eq!(project_to_pixel(SpatialFreq::new(0.0, -1000.0), &cam), None);
    }

    #[test]
    fn projection_is_mirror_symmetric_about_center() {
        let cam = CameraSpec::default();
        let (cx, cy) = cam.center();
        for k in -50..50 {
            let nu = SpatialFreq::new(0.113 * k as f64, -0.071 * k as f64);
            let (x1, y1) = project_to_pixel(nu, &cam).unwrap();
            let (x2, y2) = project_to_pixel(-nu, &cam).unwrap();
            assert_eq!(x1 + x2, 2 * cx);
            assert_eq!(y1 + y2, 2 * cy);
        }
    }

    #[test]
    fn no_photons_no_noise_gives_empty_frames() {
        let cam = CameraSpec {
            noise_prob: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frames = expose_frame(std::iter::empty(), &[cam, cam], 0, &mut rng);
        assert_eq!(frames[0].count_ones(), 0);
        assert_eq!(frames[1].count_ones(), 0);
    }

    #[test]
    fn coincident_photons_saturate() {
        let cam = CameraSpec {
            qe: 1.0,
            noise_prob: 0.0,
            ..Default::default()
        };
        let ps = [
            photon(CameraId::One, SpatialFreq::ZERO),
            photon(CameraId::One, SpatialFreq::ZERO),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frames = expose_frame(&ps, &[cam, cam], 0, &mut rng);
        assert_eq!(frames[0].count_ones(), 1);
        let (cx, cy) = cam.center();
        assert!(frames[0].get(cx, cy));
        assert_eq!(frames[1].count_ones(), 0);
    }

    #[test]
    fn lost_photons_are_never_detected() {
        let cam = CameraSpec {
            qe: 1.0,
            noise_prob: 0.0,
            ..Default::default()
        };
        let mut p = photon(CameraId::Two, SpatialFreq::ZERO);
        p.alive = false;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let frames = expose_frame([&p], &[cam, cam], 0, &mut rng);
        assert_eq!(frames[1].count_ones(), 0);
    }

    #[test]
    fn noise_occupancy_follows_bernoulli_statistics() {
        let m = 0.12;
        let cam = CameraSpec {
            width: 64,
            height: 64,
            noise_prob: m,
            ..Default::default()
        };
        let n_frames = 500;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut counts = vec![0u32; cam.pixels()];
        let mut total = 0usize;
        for k in 0..n_frames {
            let [f, _] = expose_frame(std::iter::empty(), &[cam, cam], k, &mut rng);
            total += f.count_ones();
            for i in f.iter_ones() {
                counts[i] += 1;
            }
        }
        let trials = (n_frames as usize * cam.pixels()) as f64;
        let mean = total as f64 / trials;
        assert!(
            (mean - m).abs() < 3.0 * (m * (1.0 - m) / trials).sqrt(),
            "{mean}"
        );
        // Per-pixel sample variance over frames; its average should be m(1-m).
        let n = n_frames as f64;
        let vars: Vec<f64> = counts
            .iter()
            .map(|&c| {
                let p = c as f64 / n;
                p * (1.0 - p) * n / (n - 1.0)
            })
            .collect();
        let avg_var = vars.iter().sum::<f64>() / vars.len() as f64;
        // sampling std of one Bernoulli sample variance ≈ sqrt(μ4 - σ⁴)/sqrt(n)
        let sigma2 = m * (1.0 - m);
        let mu4 = m * (1.0 - m) * (1.0 - 3.0 * m + 3.0 * m * m);
        let se = ((mu4 - sigma2 * sigma2) / n).sqrt() / (vars.len() as f64).sqrt();
        assert!((avg_var - sigma2).abs() < 4.0 * se, "{avg_var} vs {sigma2}");
    }

    #[test]
    fn frame_bit_accessors() {
        let f = Frame::from_values(3, 2, 0, &[1, 0, 0, 0, 0, 1]).unwrap();
        assert!(f.get(0, 0) && f.get(2, 1) && !f.get(1, 0));
        assert_eq!(f.iter_ones().collect::<Vec<_>>(), vec![0, 5]);
        assert_eq!(f.to_f64(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(Frame::from_values(3, 2, 0, &[2, 0, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn radial_field_is_one_at_center() {
        let cam = CameraSpec::default();
        let field = AberrationField::radial(&cam, 30.0).unwrap();
        assert_eq!(field.at(SpatialFreq::ZERO, &cam), 1.0);
        assert!(field.get(0, 0) < 0.2);
        assert!(AberrationField::identity(4, 4).is_identity());
        assert!(AberrationField::from_values(1, 1, vec![1.5]).is_err());
    }
}
