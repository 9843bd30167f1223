//! Spatial covariance maps between pixel `q` of image 1 and pixel `-q` of image 2.

use serde::{Deserialize, Serialize};

use crate::detector::{Frame, FrameStack};
use crate::error::{Error, Result};

/// Kernel area (binned pixels) used when none is given.
pub const DEFAULT_KERNEL_AREA: f64 = 44.0;
pub const DEFAULT_BIN: usize = 4;

/// How the mean product is removed from the frame-averaged product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanModel {
    /// Subtract the product of per-location means over frames. Removes any
    /// non-uniform illumination.
    PerPixel,
    /// Subtract the product of the global means over all locations and frames.
    /// Only meaningful for uniform illumination.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovMapOptions {
    /// Side of the square pixel bins (summed).
    pub bin: usize,
    /// Effective area `2πs²` of the Gaussian smoothing kernel in binned
    /// pixels; `None` disables smoothing.
    pub kernel_area: Option<f64>,
    pub mean: MeanModel,
}

impl Default for CovMapOptions {
    fn default() -> Self {
        Self {
            bin: DEFAULT_BIN,
            kernel_area: Some(DEFAULT_KERNEL_AREA),
            mean: MeanModel::PerPixel,
        }
    }
}

/// Map over binned image-1 locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialMap {
    pub width: usize,
    pub height: usize,
    /// mm⁻¹ per binned pixel.
    pub step: f64,
    pub data: Vec<f64>,
    pub frames: usize,
}

impl SpatialMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean over the cells within `radius` binned pixels of the map centre.
    pub fn mean_within(&self, radius: f64, outside: bool) -> f64 {
        let (cx, cy) = (
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        );
        let (mut s, mut n) = (0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                if (r <= radius) != outside {
                    s += self.get(x, y);
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

fn binned_image(frame: &Frame, bin: usize, flip: Option<(usize, usize)>) -> Vec<f64> {
    let (w, h) = (frame.width(), frame.height());
    let bw = w / bin;
    let mut out = vec![0.0; bw * (h / bin)];
    for i in frame.iter_ones() {
        let (mut x, mut y) = (i % w, i / w);
        if let Some((cx, cy)) = flip {
            match ((2 * cx).checked_sub(x), (2 * cy).checked_sub(y)) {
                (Some(fx), Some(fy)) if fx < w && fy < h => {
                    x = fx;
                    y = fy;
                }
                _ => continue,
            }
        }
        out[(y / bin) * bw + x / bin] += 1.0;
    }
    out
}

/// Truncated, unit-sum Gaussian of standard deviation `s` (pixels).
fn gaussian_kernel(s: f64) -> (Vec<f64>, usize) {
    let r = (3.0 * s).ceil() as usize;
    let k: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-0.5 * d * d / (s * s)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    (k.into_iter().map(|v| v / total).collect(), r)
}

/// Separable Gaussian smoothing, renormalized at the borders so a flat map stays flat.
fn smooth(data: &[f64], w: usize, h: usize, s: f64) -> Vec<f64> {
    let (k, r) = gaussian_kernel(s);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut wsum) = (0.0, 0.0);
                for (j, kv) in k.iter().enumerate() {
                    let off = j as isize - r as isize;
                    let (xx, yy) = if horizontal {
                        (x as isize + off, y as isize)
                    } else {
                        (x as isize, y as isize + off)
                    };
                    if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                        acc += kv * src[yy as usize * w + xx as usize];
                        wsum += kv;
                    }
                }
                out[y * w + x] = acc / wsum;
            }
        }
        out
    };
    pass(&pass(data, true), false)
}

/// Per-location covariance between image 1 and the both-axes mirror of image 2.
///
/// Image 2 is flipped about the camera centre at full resolution, both images
/// are binned by summing `bin × bin` blocks, the frame-averaged covariance is
/// divided by `bin²` (per original pixel), and the result is optionally
/// smoothed with a Gaussian of effective area `kernel_area` binned pixels.
pub fn covariance_map_2d(
    s1: &FrameStack,
    s2: &FrameStack,
    bin: usize,
    kernel_area: Option<f64>,
) -> Result<SpatialMap> {
    covariance_map_2d_with(
        s1,
        s2,
        &CovMapOptions {
            bin,
            kernel_area,
            ..Default::default()
        },
    )
}

pub fn covariance_map_2d_with(
    s1: &FrameStack,
    s2: &FrameStack,
    opts: &CovMapOptions,
) -> Result<SpatialMap> {
    s1.ensure_compatible(s2)?;
    let bin = opts.bin;
    if bin == 0 || s1.width() % bin != 0 || s1.height() % bin != 0 {
        return Err(Error::Dimension(format!(
            "{}x{} images cannot be binned by {bin}",
            s1.width(),
            s1.height()
        )));
    }
    if let Some(a) = opts.kernel_area {
        if !(a > 0.0) {
            return Err(Error::domain("kernel area must be positive"));
        }
    }
    let n = s1.len();
    if n < 2 {
        return Err(Error::domain("covariance needs at least two frames"));
    }
    let (bw, bh) = (s1.width() / bin, s1.height() / bin);
    let cells = bw * bh;
    let center = s2.camera.center();
    let mut sum_a = vec![0.0; cells];
    let mut sum_b = vec![0.0; cells];
    let mut sum_ab = vec![0.0; cells];
    for (fa, fb) in s1.frames.iter().zip(&s2.frames) {
        let a = binned_image(fa, bin, None);
        let b = binned_image(fb, bin, Some(center));
        for i in 0..cells {
            sum_a[i] += a[i];
            sum_b[i] += b[i];
            sum_ab[i] += a[i] * b[i];
        }
    }
    let nf = n as f64;
    let norm = 1.0 / (bin * bin) as f64;
    let data: Vec<f64> = match opts.mean {
        MeanModel::PerPixel => (0..cells)
            .map(|i| (sum_ab[i] - sum_a[i] * sum_b[i] / nf) / (nf - 1.0) * norm)
            .collect(),
        MeanModel::Global => {
            let ga = sum_a.iter().sum::<f64>() / (nf * cells as f64);
            let gb = sum_b.iter().sum::<f64>() / (nf * cells as f64);
            (0..cells)
                .map(|i| (sum_ab[i] / nf - ga * gb) * norm)
                .collect()
        }
    };
    let data = match opts.kernel_area {
        Some(area) => smooth(&data, bw, bh, (area / (2.0 * std::f64::consts::PI)).sqrt()),
        None => data,
    };
    Ok(SpatialMap {
        width: bw,
        height: bh,
        step: s1.camera.nu_per_pixel * bin as f64,
        data,
        frames: n,
    })
}

/// Elementwise `a - b`.
pub fn map_difference(a: &SpatialMap, b: &SpatialMap) -> Result<SpatialMap> {
    if a.width != b.width || a.height != b.height || a.step != b.step {
        return Err(Error::Dimension(format!(
            "maps are {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(SpatialMap {
        width: a.width,
        height: a.height,
        step: a.step,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect(),
        frames: a.frames.min(b.frames),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{AcquisitionMeta, CameraSpec};

    fn stack(w: usize, h: usize, frames: Vec<Frame>) -> FrameStack {
        let cam = CameraSpec {
            width: w,
            height: h,
            ..Default::default()
        };
        FrameStack::new(cam, frames, AcquisitionMeta::default()).unwrap()
    }

    #[test]
    fn zero_stacks_give_zero_map() {
        let frames: Vec<Frame> = (0..4).map(|k| Frame::new(8, 8, k)).collect();
        let s = stack(8, 8, frames);
        let m = covariance_map_2d(&s, &s, 4, Some(44.0)).unwrap();
        assert_eq!((m.width, m.height), (2, 2));
        assert!(m.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn indivisible_dimensions_are_rejected() {
        let frames: Vec<Frame> = (0..3).map(|k| Frame::new(10, 8, k)).collect();
        let s = stack(10, 8, frames);
        assert!(matches!(
            covariance_map_2d(&s, &s, 4, None),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn mirrored_pairs_light_the_first_image_location() {
        // pair at pixel q in image 1 and -q in image 2 on alternate frames
        let (w, h) = (8, 8);
        let mut f1 = Vec::new();
        let mut f2 = Vec::new();
        for k in 0..10u64 {
            let mut a = Frame::new(w, h, k);
            let mut b = Frame::new(w, h, k);
            if k % 2 == 0 {
                a.set(1, 2);
                b.set(8 - 1, 8 - 2);
            }
            f1.push(a);
            f2.push(b);
        }
        let m = covariance_map_2d(&stack(w, h, f1), &stack(w, h, f2), 1, None).unwrap();
        // Bernoulli(½) on both → covariance ¼·N/(N-1)
        assert!((m.get(1, 2) - 0.25 * 10.0 / 9.0).abs() < 1e-12);
        assert_eq!(m.data.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn smoothing_preserves_flat_maps() {
        let data = vec![2.0; 100];
        let out = smooth(&data, 10, 10, 2.65);
        assert!(out.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn difference_of_equal_maps_is_zero() {
        let m = SpatialMap {
            width: 2,
            height: 1,
            step: 1.0,
            data: vec![1.0, 2.0],
            frames: 3,
        };
        assert!(map_difference(&m, &m)
            .unwrap()
            .data
            .iter()
            .all(|v| *v == 0.0));
        let other = SpatialMap {
            width: 1,
            height: 2,
            ..m.clone()
        };
        assert!(map_difference(&m, &other).is_err());
    }
}
