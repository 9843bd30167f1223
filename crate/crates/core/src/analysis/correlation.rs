//! Fluctuation covariance between image stacks.
//!
//! For two channels `A_k`, `B_k` (frames after flipping and masking) the map is
//!
//! ```text
//! Cov(Δ) = 1/(N-1) · Σ_k Σ_p (A_k(p) - Ā(p)) · (B_k(p+Δ) - B̄(p+Δ))
//! ```
//!
//! with `Ā`, `B̄` the per-pixel means over frames. It is computed as a
//! zero-padded FFT cross-correlation accumulated in the frequency domain.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::Fft2;
use super::peaks::Window;
use crate::detector::{CameraSpec, Frame, FrameStack};
use crate::error::{Error, Result};
use crate::map::{CorrelationMap, Lattice, Normalization};

/// Frames per work unit. Partial sums are reduced in chunk order, so the
/// result does not depend on how many threads run.
pub const CHUNK_FRAMES: usize = 16;

/// Which original rows of a frame a channel keeps, relative to the centre row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSelect {
    All,
    /// Rows above the centre row.
    Upper,
    /// The centre row and below.
    Lower,
}

/// Row selection followed by mirror flips about the camera centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prep {
    pub flip_x: bool,
    pub flip_y: bool,
    pub rows: RowSelect,
}

impl Prep {
    pub const PLAIN: Prep = Prep {
        flip_x: false,
        flip_y: false,
        rows: RowSelect::All,
    };
    pub const FLIP_BOTH: Prep = Prep {
        flip_x: true,
        flip_y: true,
        rows: RowSelect::All,
    };
    pub const UPPER: Prep = Prep {
        flip_x: false,
        flip_y: false,
        rows: RowSelect::Upper,
    };
    pub const LOWER_FLIPPED: Prep = Prep {
        flip_x: false,
        flip_y: true,
        rows: RowSelect::Lower,
    };

    /// Destination index of source pixel `(x, y)`, if it is kept.
    #[inline]
    fn dest(&self, x: usize, y: usize, cam: &CameraSpec) -> Option<usize> {
        let (cx, cy) = cam.center();
        let keep = match self.rows {
            RowSelect::All => true,
            RowSelect::Upper => y < cy,
            RowSelect::Lower => y >= cy,
        };
        if !keep {
            return None;
        }
        let fx = if self.flip_x {
            (2 * cx).checked_sub(x)?
        } else {
            x
        };
        let fy = if self.flip_y {
            (2 * cy).checked_sub(y)?
        } else {
            y
        };
        (fx < cam.width && fy < cam.height).then_some(fy * cam.width + fx)
    }
}

/// A frame stack viewed through a [`Prep`].
#[derive(Debug, Clone, Copy)]
pub struct Channel<'a> {
    pub stack: &'a FrameStack,
    pub prep: Prep,
}

impl<'a> Channel<'a> {
    pub fn new(stack: &'a FrameStack, prep: Prep) -> Self {
        Self { stack, prep }
    }

    fn cam(&self) -> &CameraSpec {
        &self.stack.camera
    }

    fn image(&self, frame: &Frame) -> Vec<f64> {
        let cam = self.cam();
        let mut out = vec![0.0; cam.pixels()];
        for i in frame.iter_ones() {
            if let Some(d) = self.prep.dest(i % cam.width, i / cam.width, cam) {
                out[d] = 1.0;
            }
        }
        out
    }

    fn mask(&self) -> Vec<f64> {
        let cam = self.cam();
        let mut out = vec![0.0; cam.pixels()];
        for y in 0..cam.height {
            for x in 0..cam.width {
                if let Some(d) = self.prep.dest(x, y, cam) {
                    out[d] = 1.0;
                }
            }
        }
        out
    }

    fn mean(&self) -> Vec<f64> {
        let cam = self.cam();
        let mut counts = vec![0u32; cam.pixels()];
        for f in &self.stack.frames {
            for i in f.iter_ones() {
                if let Some(d) = self.prep.dest(i % cam.width, i / cam.width, cam) {
                    counts[d] += 1;
                }
            }
        }
        let n = self.stack.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}

/// Channels for the inter-image map: image 1 against image 2 flipped on both axes.
pub fn inter_channels<'a>(s1: &'a FrameStack, s2: &'a FrameStack) -> (Channel<'a>, Channel<'a>) {
    (
        Channel::new(s1, Prep::PLAIN),
        Channel::new(s2, Prep::FLIP_BOTH),
    )
}

/// Channels for the intra-image map: upper half against the up-down flipped lower half.
pub fn intra_channels(s: &FrameStack) -> (Channel<'_>, Channel<'_>) {
    (
        Channel::new(s, Prep::UPPER),
        Channel::new(s, Prep::LOWER_FLIPPED),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationOptions {
    pub normalization: Normalization,
    /// Divide each pixel's fluctuation by `1 - m̄(p)`, undoing the loss of
    /// pair counts to pixels already lit by another photon.
    pub saturation_correction: bool,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        Self {
            normalization: Normalization::Covariance,
            saturation_correction: false,
        }
    }
}

/// Per-pixel mean and weight of one channel.
struct Moments {
    mean: Vec<f64>,
    weight: Vec<f64>,
}

impl Moments {
    fn of(ch: &Channel, saturation_correction: bool) -> Self {
        let mean = ch.mean();
        let weight = if saturation_correction {
            mean.iter().map(|m| 1.0 / (1.0 - m.min(0.95))).collect()
        } else {
            vec![1.0; mean.len()]
        };
        Self { mean, weight }
    }

    /// Weighted, mean-subtracted image.
    fn centered(&self, img: &[f64]) -> Vec<f64> {
        img.iter()
            .zip(&self.mean)
            .zip(&self.weight)
            .map(|((v, m), w)| (v - m) * w)
            .collect()
    }
}

fn check_pair(a: &Channel, b: &Channel) -> Result<()> {
    a.stack.ensure_compatible(b.stack)?;
    if a.stack.len() < 2 {
        return Err(Error::domain("covariance needs at least two frames"));
    }
    Ok(())
}

fn correlate_images(fft: &Fft2, a: &[f64], b: &[f64]) -> Vec<f64> {
    let fa = fft.forward(a);
    let fb = fft.forward(b);
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    fft.unwrap_lattice(&fft.inverse_real(prod), 1.0 / fft.len() as f64)
}

/// Covariance map between two channels of equal-size stacks.
pub fn cross_covariance(
    a: Channel,
    b: Channel,
    opts: &CorrelationOptions,
) -> Result<CorrelationMap> {
    check_pair(&a, &b)?;
    let cam = *a.cam();
    let (w, h) = (cam.width, cam.height);
    let n = a.stack.len();
    let fft = Fft2::for_correlation(w, h);
    let ma = Moments::of(&a, opts.saturation_correction);
    let mb = Moments::of(&b, opts.saturation_correction);

    let partials: Vec<Vec<Complex64>> = a
        .stack
        .frames
        .par_chunks(CHUNK_FRAMES)
        .zip(b.stack.frames.par_chunks(CHUNK_FRAMES))
        .map(|(ca, cb)| {
            let mut acc = vec![Complex64::default(); fft.len()];
            for (fa, fb) in ca.iter().zip(cb) {
                let xa = fft.forward(&ma.centered(&a.image(fa)));
                let xb = fft.forward(&mb.centered(&b.image(fb)));
                for ((s, x), y) in acc.iter_mut().zip(&xa).zip(&xb) {
                    *s += x.conj() * y;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Complex64::default(); fft.len()];
    for p in &partials {
        for (s, v) in total.iter_mut().zip(p) {
            *s += v;
        }
    }
    let scale = 1.0 / (fft.len() as f64 * (n - 1) as f64);
    let cov = fft.unwrap_lattice(&fft.inverse_real(total), scale);
    let lattice = Lattice::for_offsets(w, h, cam.nu_per_pixel);
    let mut map = CorrelationMap {
        lattice,
        data: cov,
        normalization: Normalization::Covariance,
        frames: n,
    };
    match opts.normalization {
        Normalization::Covariance => {}
        Normalization::PerPixel | Normalization::Pearson => {
            let overlap = correlate_images(&fft, &a.mask(), &b.mask());
            let denom = if opts.normalization == Normalization::Pearson {
                (pixel_variance(&ma, a.mask().as_slice(), n)
                    * pixel_variance(&mb, b.mask().as_slice(), n))
                .sqrt()
            } else {
                1.0
            };
            for (v, c) in map.data.iter_mut().zip(&overlap) {
                let c = c.round();
                *v = if c > 0.0 && denom > 0.0 {
                    *v / (c * denom)
                } else {
                    0.0
                };
            }
            map.normalization = opts.normalization;
        }
        Normalization::RatioToC0 => {
            return Err(Error::domain(
                "ratio-to-C0 needs a reference integral; use normalize_to_c0",
            ))
        }
    }
    Ok(map)
}

/// Mean over kept pixels of the weighted per-pixel variance of a binary channel.
fn pixel_variance(m: &Moments, mask: &[f64], n: usize) -> f64 {
    let nf = n as f64;
    let (mut sum, mut count) = (0.0, 0.0);
    for ((mean, w), k) in m.mean.iter().zip(&m.weight).zip(mask) {
        if *k > 0.0 {
            sum += w * w * mean * (1.0 - mean) * nf / (nf - 1.0);
            count += 1.0;
        }
    }
    if count > 0.0 {
        sum / count
    } else {
        0.0
    }
}

/// C12: covariance between image 1 and image 2 flipped on both axes.
pub fn inter_image_correlation(s1: &FrameStack, s2: &FrameStack) -> Result<CorrelationMap> {
    inter_image_correlation_with(s1, s2, &CorrelationOptions::default())
}

pub fn inter_image_correlation_with(
    s1: &FrameStack,
    s2: &FrameStack,
    opts: &CorrelationOptions,
) -> Result<CorrelationMap> {
    let (a, b) = inter_channels(s1, s2);
    cross_covariance(a, b, opts)
}

fn check_even_height(s: &FrameStack) -> Result<()> {
    if s.height() % 2 != 0 {
        return Err(Error::Dimension(format!(
            "intra-image correlation needs an even height, got {}",
            s.height()
        )));
    }
    Ok(())
}

/// C11 or C22: upper half of each image against its up-down flipped lower half.
pub fn intra_image_correlation(s: &FrameStack) -> Result<CorrelationMap> {
    intra_image_correlation_with(s, &CorrelationOptions::default())
}

pub fn intra_image_correlation_with(
    s: &FrameStack,
    opts: &CorrelationOptions,
) -> Result<CorrelationMap> {
    check_even_height(s)?;
    let (a, b) = intra_channels(s);
    cross_covariance(a, b, opts)
}

/// Rescales a covariance map by the reference peak integral.
pub fn normalize_to_c0(map: &CorrelationMap, c0_integral: f64) -> Result<CorrelationMap> {
    if map.normalization != Normalization::Covariance {
        return Err(Error::domain(
            "only covariance maps can be normalized to C0",
        ));
    }
    if !(c0_integral > 0.0) {
        return Err(Error::domain(format!(
            "reference integral must be positive, got {c0_integral}"
        )));
    }
    Ok(map.scaled(1.0 / c0_integral, Normalization::RatioToC0))
}

/// Summed-area table with a zero border: `t[(y+1)(w+1) + x+1] = Σ_{≤x, ≤y}`.
fn summed_area(img: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut t = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += img[y * w + x];
            t[(y + 1) * (w + 1) + x + 1] = t[y * (w + 1) + x + 1] + row;
        }
    }
    t
}

fn box_sum(t: &[f64], w: usize, h: usize, x0: isize, x1: isize, y0: isize, y1: isize) -> f64 {
    let x0 = x0.max(0);
    let y0 = y0.max(0);
    let x1 = x1.min(w as isize - 1);
    let y1 = y1.min(h as isize - 1);
    if x0 > x1 || y0 > y1 {
        return 0.0;
    }
    let (x0, x1, y0, y1) = (x0 as usize, x1 as usize + 1, y0 as usize, y1 as usize + 1);
    let s = w + 1;
    t[y1 * s + x1] - t[y0 * s + x1] - t[y1 * s + x0] + t[y0 * s + x0]
}

/// Per-frame contributions to window sums of the covariance map.
///
/// Entry `[j][k]` is `Σ_{Δ∈W_j} Σ_p (A_k - Ā)(p)·(B_k - B̄)(p+Δ)`; summing over
/// `k` and dividing by `N - 1` gives the window sum of [`cross_covariance`].
pub fn window_series(
    a: Channel,
    b: Channel,
    opts: &CorrelationOptions,
    windows: &[Window],
) -> Result<Vec<Vec<f64>>> {
    check_pair(&a, &b)?;
    let cam = *a.cam();
    let (w, h) = (cam.width, cam.height);
    let ma = Moments::of(&a, opts.saturation_correction);
    let mb = Moments::of(&b, opts.saturation_correction);
    let per_frame: Vec<Vec<f64>> = a
        .stack
        .frames
        .par_iter()
        .zip(b.stack.frames.par_iter())
        .map(|(fa, fb)| {
            let xa = ma.centered(&a.image(fa));
            let sat = summed_area(&mb.centered(&b.image(fb)), w, h);
            windows
                .iter()
                .map(|win| {
                    let mut s = 0.0;
                    for y in 0..h {
                        for x in 0..w {
                            let v = xa[y * w + x];
                            if v != 0.0 {
                                let (xi, yi) = (x as isize, y as isize);
                                s += v * box_sum(
                                    &sat,
                                    w,
                                    h,
                                    xi + win.x0,
                                    xi + win.x1,
                                    yi + win.y0,
                                    yi + win.y1,
                                );
                            }
                        }
                    }
                    s
                })
                .collect()
        })
        .collect();
    Ok((0..windows.len())
        .map(|j| per_frame.iter().map(|f| f[j]).collect())
        .collect())
}

/// Mean of per-frame window contributions scaled to match the map's window sum.
pub fn series_estimate(series: &[f64]) -> f64 {
    series.iter().sum::<f64>() / (series.len() as f64 - 1.0)
}

/// Mean occupancy of a channel over its kept pixels.
pub fn channel_occupancy(ch: &Channel) -> f64 {
    let mask = ch.mask();
    let kept: f64 = mask.iter().sum();
    if kept == 0.0 {
        return 0.0;
    }
    ch.mean().iter().zip(&mask).map(|(m, k)| m * k).sum::<f64>() / kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::AcquisitionMeta;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(w: usize, h: usize) -> CameraSpec {
        CameraSpec {
            width: w,
            height: h,
            ..Default::default()
        }
    }

    fn random_stack(w: usize, h: usize, n: usize, p: f64, seed: u64) -> FrameStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..n)
            .map(|k| {
                let vals: Vec<u8> = (0..w * h)
                    .map(|_| (rng.random::<f64>() < p) as u8)
                    .collect();
                Frame::from_values(w, h, k as u64, &vals).unwrap()
            })
            .collect();
        FrameStack::new(cam(w, h), frames, AcquisitionMeta::default()).unwrap()
    }

    /// Direct O(n⁴) evaluation of the covariance definition.
    fn brute_force(a: Channel, b: Channel) -> Vec<f64> {
        let c = *a.cam();
        let (w, h) = (c.width as isize, c.height as isize);
        let n = a.stack.len();
        let imgs_a: Vec<Vec<f64>> = a.stack.frames.iter().map(|f| a.image(f)).collect();
        let imgs_b: Vec<Vec<f64>> = b.stack.frames.iter().map(|f| b.image(f)).collect();
        let mean = |imgs: &Vec<Vec<f64>>| -> Vec<f64> {
            (0..(w * h) as usize)
                .map(|i| imgs.iter().map(|im| im[i]).sum::<f64>() / n as f64)
                .collect()
        };
        let (ma, mb) = (mean(&imgs_a), mean(&imgs_b));
        let mut out = Vec::new();
        for dy in -(h - 1)..h {
            for dx in -(w - 1)..w {
                let mut s = 0.0;
                for k in 0..n {
                    for y in 0..h {
                        for x in 0..w {
                            let (x2, y2) = (x + dx, y + dy);
                            if x2 < 0 || y2 < 0 || x2 >= w || y2 >= h {
                                continue;
                            }
                            let i = (y * w + x) as usize;
                            let j = (y2 * w + x2) as usize;
                            s += (imgs_a[k][i] - ma[i]) * (imgs_b[k][j] - mb[j]);
                        }
                    }
                }
                out.push(s / (n - 1) as f64);
            }
        }
        out
    }

    #[test]
    fn fft_matches_brute_force_on_16x16() {
        let s1 = random_stack(16, 16, 6, 0.3, 1);
        let s2 = random_stack(16, 16, 6, 0.3, 2);
        for (a, b) in [inter_channels(&s1, &s2), intra_channels(&s1)] {
            let fast = cross_covariance(a, b, &CorrelationOptions::default()).unwrap();
            let slow = brute_force(a, b);
            for (x, y) in fast.data.iter().zip(&slow) {
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn non_square_sizes_are_supported() {
        let s1 = random_stack(12, 6, 4, 0.4, 3);
        let s2 = random_stack(12, 6, 4, 0.4, 4);
        let (a, b) = inter_channels(&s1, &s2);
        let fast = cross_covariance(a, b, &CorrelationOptions::default()).unwrap();
        assert_eq!(fast.lattice.nx, 23);
        assert_eq!(fast.lattice.ny, 11);
        for (x, y) in fast.data.iter().zip(&brute_force(a, b)) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn mirrored_single_pixels_peak_at_zero() {
        let c = cam(8, 8);
        let (cx, cy) = c.center();
        let mut frames1 = Vec::new();
        let mut frames2 = Vec::new();
        for (k, (x, y)) in [(1usize, 2usize), (5, 6), (3, 1), (6, 3)]
            .into_iter()
            .enumerate()
        {
            let mut f1 = Frame::new(8, 8, k as u64);
            let mut f2 = Frame::new(8, 8, k as u64);
            f1.set(x, y);
            f2.set(2 * cx - x, 2 * cy - y);
            frames1.push(f1);
            frames2.push(f2);
        }
        let s1 = FrameStack::new(c, frames1, AcquisitionMeta::default()).unwrap();
        let s2 = FrameStack::new(c, frames2, AcquisitionMeta::default()).unwrap();
        let map = inter_image_correlation(&s1, &s2).unwrap();
        let (imax, _) = map
            .data
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(
            imax,
            map.lattice.half_y() * map.lattice.nx + map.lattice.half_x()
        );
    }

    #[test]
    fn all_zero_stack_gives_zero_map() {
        let s = random_stack(8, 8, 5, 0.0, 0);
        let map = intra_image_correlation(&s).unwrap();
        assert!(map.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn odd_height_is_rejected_for_intra() {
        let s = random_stack(8, 7, 3, 0.2, 0);
        assert!(matches!(
            intra_image_correlation(&s),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn mismatched_stacks_are_rejected() {
        let s1 = random_stack(8, 8, 3, 0.2, 0);
        let s2 = random_stack(8, 6, 3, 0.2, 0);
        let s3 = random_stack(8, 8, 4, 0.2, 0);
        assert!(inter_image_correlation(&s1, &s2).is_err());
        assert!(inter_image_correlation(&s1, &s3).is_err());
    }

    #[test]
    fn window_series_sums_to_map_window() {
        let s1 = random_stack(16, 12, 20, 0.3, 5);
        let s2 = random_stack(16, 12, 20, 0.3, 6);
        for opts in [
            CorrelationOptions::default(),
            CorrelationOptions {
                saturation_correction: true,
                ..Default::default()
            },
        ] {
            let (a, b) = inter_channels(&s1, &s2);
            let map = cross_covariance(a, b, &opts).unwrap();
            let wins = [
                Window {
                    x0: -2,
                    x1: 3,
                    y0: -1,
                    y1: 1,
                },
                Window {
                    x0: -15,
                    x1: 15,
                    y0: -11,
                    y1: 11,
                },
                Window {
                    x0: 4,
                    x1: 4,
                    y0: -3,
                    y1: -3,
                },
            ];
            let series = window_series(a, b, &opts, &wins).unwrap();
            for (win, s) in wins.iter().zip(&series) {
                let mut direct = 0.0;
                for dy in win.y0..=win.y1 {
                    for dx in win.x0..=win.x1 {
                        direct += map.at_offset(dx, dy);
                    }
                }
                assert!(
                    (series_estimate(s) - direct).abs() < 1e-9,
                    "{} vs {direct}",
                    series_estimate(s)
                );
            }
        }
    }

    #[test]
    fn per_pixel_normalization_divides_by_overlap() {
        let s1 = random_stack(8, 8, 10, 0.3, 7);
        let s2 = random_stack(8, 8, 10, 0.3, 8);
        let raw = inter_image_correlation(&s1, &s2).unwrap();
        let pp = inter_image_correlation_with(
            &s1,
            &s2,
            &CorrelationOptions {
                normalization: Normalization::PerPixel,
                ..Default::default()
            },
        )
        .unwrap();
        // the flipped image 2 loses column 0 and row 0 of image 2 → 7×7 kept
        // pixels, all overlapping image 1 at Δ = 0
        assert!((pp.at_offset(0, 0) - raw.at_offset(0, 0) / 49.0).abs() < 1e-12);
        assert!((pp.at_offset(-7, -7) - raw.at_offset(-7, -7)).abs() < 1e-12);
        assert_eq!(pp.normalization, Normalization::PerPixel);
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let s1 = random_stack(16, 16, 70, 0.2, 9);
        let s2 = random_stack(16, 16, 70, 0.2, 10);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| inter_image_correlation(&s1, &s2).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.data, four.data);
    }

    #[test]
    fn ratio_to_c0_requires_positive_reference() {
        let s = random_stack(8, 8, 3, 0.2, 0);
        let m = inter_image_correlation(&s, &s).unwrap();
        assert!(normalize_to_c0(&m, 0.0).is_err());
        let r = normalize_to_c0(&m, 2.0).unwrap();
        assert_eq!(r.normalization, Normalization::RatioToC0);
        assert_eq!(r.data[0], m.data[0] / 2.0);
    }
}
