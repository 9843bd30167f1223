//! Relative coincidence ratios of a scan point against the no-beamsplitter reference.

use serde::{Deserialize, Serialize};

use super::correlation::{
    cross_covariance, inter_channels, intra_channels, series_estimate, window_series, Channel,
    CorrelationOptions, Prep, RowSelect,
};
use super::curve::bootstrap_se;
use super::peaks::{integrate_peak, split_windows, symmetric_windows, PeakStats, Window};
use crate::detector::{Frame, FrameStack};
use crate::error::{Error, Result};
use crate::map::{CorrelationMap, Lattice};
use crate::model::InterferometerSetting;

/// Half-width of a peak window in units of the reference peak σ.
pub const WINDOW_SIGMAS: f64 = 3.0;
/// Largest peak-window half-width (bins).
const SEARCH_HALF: isize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub correlation: CorrelationOptions,
    pub bootstrap_replicates: usize,
    pub bootstrap_seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            correlation: CorrelationOptions::default(),
            bootstrap_replicates: 200,
            bootstrap_seed: 0,
        }
    }
}

/// The no-beamsplitter calibration every ratio is normalized by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceAnalysis {
    pub c0: PeakStats,
    pub window: Window,
    /// Peak window half-widths (bins) used for every scan point.
    pub half_x: isize,
    pub half_y: isize,
    /// Per-frame contributions to the C0 window sum.
    pub series: Vec<f64>,
    /// Per-frame contributions from pairs whose photons sit on opposite
    /// halves of the frame, the only ones the intra-image estimator can see.
    pub split_series: Vec<f64>,
    pub integral: f64,
    pub integral_err: f64,
    pub split_integral: f64,
    /// Mean detected photons per image, noise counts removed.
    pub photons_per_image: f64,
    /// Detected pairs per detected photon.
    pub pair_detection_ratio: f64,
    pub occupancy: [f64; 2],
    pub frames: usize,
}

impl ReferenceAnalysis {
    /// Refuses references whose C0 peak is not significantly positive.
    pub fn ensure_usable(&self) -> Result<()> {
        if !(self.integral > 0.0 && self.split_integral > 0.0)
            || self.integral < 3.0 * self.integral_err
        {
            return Err(Error::MissingReference(format!(
                "reference C0 integral {:.4} ± {:.4} is not significantly positive",
                self.integral, self.integral_err
            )));
        }
        Ok(())
    }
}

fn std_error(series: &[f64]) -> f64 {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // estimate is Σy/(N-1)
    (var * n).sqrt() / (n - 1.0)
}

/// Peak width `(σx, σy)` in bins from Gaussian-weighted moments about zero offset.
///
/// With weight `exp(-d²/2w²)` a Gaussian of width σ has weighted second
/// moment `σ²w²/(σ²+w²)`, so `w² = 2·m₂` is satisfied at `w = σ`. The weight
/// keeps far-off noise out of the estimate.
fn adaptive_width(map: &CorrelationMap) -> (f64, f64) {
    let (mut wx, mut wy) = (2.0_f64, 2.0_f64);
    for _ in 0..50 {
        let (mut s0, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for dy in -SEARCH_HALF..=SEARCH_HALF {
            for dx in -SEARCH_HALF..=SEARCH_HALF {
                let (fx, fy) = (dx as f64, dy as f64);
                let w = (-0.5 * (fx * fx / (wx * wx) + fy * fy / (wy * wy))).exp();
                let c = w * map.at_offset(dx, dy);
                s0 += c;
                sxx += c * fx * fx;
                syy += c * fy * fy;
            }
        }
        if !(s0 > 0.0 && sxx > 0.0 && syy > 0.0) {
            break;
        }
        let next = (
            (2.0 * sxx / s0).sqrt().clamp(0.3, SEARCH_HALF as f64),
            (2.0 * syy / s0).sqrt().clamp(0.3, SEARCH_HALF as f64),
        );
        let done = (next.0 - wx).abs() < 1e-4 && (next.1 - wy).abs() < 1e-4;
        (wx, wy) = next;
        if done {
            break;
        }
    }
    (wx, wy)
}

/// Computes the C0 map and the reference statistics from no-beamsplitter stacks.
pub fn analyze_reference(
    s1: &FrameStack,
    s2: &FrameStack,
    opts: &AnalysisOptions,
) -> Result<(CorrelationMap, ReferenceAnalysis)> {
    let copts = &opts.correlation;
    let (a, b) = inter_channels(s1, s2);
    let map = cross_covariance(a, b, copts)?;
    let (sx, sy) = adaptive_width(&map);
    let half =
        |sigma_bins: f64| ((WINDOW_SIGMAS * sigma_bins).ceil() as isize).clamp(2, SEARCH_HALF);
    let (half_x, half_y) = (half(sx), half(sy));
    let window = Window {
        x0: -half_x,
        x1: half_x,
        y0: -half_y,
        y1: half_y,
    };
    let c0 = integrate_peak(&map, &window)?;

    let series = window_series(a, b, copts, &[window])?.remove(0);
    let split = |rows_a: RowSelect, rows_b: RowSelect| -> Result<Vec<f64>> {
        let ca = Channel::new(
            s1,
            Prep {
                rows: rows_a,
                ..Prep::PLAIN
            },
        );
        let cb = Channel::new(
            s2,
            Prep {
                rows: rows_b,
                ..Prep::FLIP_BOTH
            },
        );
        Ok(window_series(ca, cb, copts, &[window])?.remove(0))
    };
    let up_low = split(RowSelect::Upper, RowSelect::Lower)?;
    let low_up = split(RowSelect::Lower, RowSelect::Upper)?;
    let split_series: Vec<f64> = up_low.iter().zip(&low_up).map(|(x, y)| x + y).collect();

    let integral = series_estimate(&series);
    let noise = [
        s1.camera.noise_prob * s1.camera.pixels() as f64,
        s2.camera.noise_prob * s2.camera.pixels() as f64,
    ];
    let counts = |s: &FrameStack| {
        s.frames.iter().map(|f| f.count_ones() as f64).sum::<f64>() / s.len() as f64
    };
    let photons_per_image = 0.5 * ((counts(s1) - noise[0]) + (counts(s2) - noise[1]));
    let stats = ReferenceAnalysis {
        c0,
        window,
        half_x,
        half_y,
        integral,
        integral_err: std_error(&series),
        split_integral: series_estimate(&split_series),
        series,
        split_series,
        photons_per_image,
        pair_detection_ratio: if photons_per_image > 0.0 {
            integral / photons_per_image
        } else {
            0.0
        },
        occupancy: [s1.mean_occupancy(), s2.mean_occupancy()],
        frames: s1.len(),
    };
    Ok((map, stats))
}

/// Ratios and peak shapes at one interferometer setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAnalysis {
    pub setting: InterferometerSetting,
    pub r12: f64,
    pub r12_err: f64,
    pub r11: f64,
    pub r22: f64,
    pub r11p22: f64,
    pub r11p22_err: f64,
    /// `R12 + R11 + R22`
    pub r_sum: f64,
    pub r_sum_err: f64,
    /// C12 peaks in order of increasing Δν_x (one when they coincide),
    /// measured in symmetric windows.
    pub c12_peaks: Vec<PeakStats>,
    /// Windows the C12 ratio integrates over.
    pub c12_windows: Vec<Window>,
    pub c11_peaks: Vec<PeakStats>,
    pub c22_peaks: Vec<PeakStats>,
    pub frames: usize,
}

/// Maps computed for one scan point.
#[derive(Debug, Clone)]
pub struct PointMaps {
    pub c12: CorrelationMap,
    pub c11: CorrelationMap,
    pub c22: CorrelationMap,
}

fn bins(v: f64, step: f64) -> isize {
    (v / step).round() as isize
}

/// Expected peak offsets in bins: C12 `(xa, xb, y)`, C11 and C22 likewise.
///
/// C12 holds the transmitted-transmitted peak at Δ = 0 and the
/// reflected-reflected one at Δν_x = −2δν_x. Intra-image peaks sit at
/// `(±δν_x, −δν_y)` on camera 1 and `(±δν_x, +δν_y)` on camera 2.
fn peak_offsets(lattice: &Lattice, setting: &InterferometerSetting) -> [(isize, isize, isize); 3] {
    let dx = bins(setting.delta_nu_x, lattice.step_x);
    let dy = bins(setting.delta_nu_y, lattice.step_y);
    [
        (bins(-2.0 * setting.delta_nu_x, lattice.step_x), 0, 0),
        (-dx, dx, -dy),
        (-dx, dx, dy),
    ]
}

/// Integration windows `(C12, C11, C22)` for `setting`, clipped at the
/// midpoint between peaks so together they cover both peaks.
pub fn peak_windows(
    lattice: &Lattice,
    setting: &InterferometerSetting,
    half_x: isize,
    half_y: isize,
) -> (Vec<Window>, Vec<Window>, Vec<Window>) {
    let [a, b, c] =
        peak_offsets(lattice, setting).map(|(xa, xb, y)| split_windows(xa, xb, y, half_x, half_y));
    (a, b, c)
}

/// Windows for per-peak statistics: symmetric about each expected peak.
pub fn peak_stat_windows(
    lattice: &Lattice,
    setting: &InterferometerSetting,
    half_x: isize,
    half_y: isize,
) -> (Vec<Window>, Vec<Window>, Vec<Window>) {
    let [a, b, c] = peak_offsets(lattice, setting)
        .map(|(xa, xb, y)| symmetric_windows(xa, xb, y, half_x, half_y));
    (a, b, c)
}

fn sum_windows(series: Vec<Vec<f64>>) -> Vec<f64> {
    let n = series.first().map_or(0, Vec::len);
    (0..n).map(|k| series.iter().map(|s| s[k]).sum()).collect()
}

/// Ratios of one pair of camera stacks against `reference`.
pub fn analyze_point(
    s1: &FrameStack,
    s2: &FrameStack,
    reference: &ReferenceAnalysis,
    setting: &InterferometerSetting,
    opts: &AnalysisOptions,
) -> Result<(PointAnalysis, PointMaps)> {
    reference.ensure_usable()?;
    for s in [s1, s2] {
        if s.height() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "intra-image analysis needs an even height, got {}",
                s.height()
            )));
        }
    }
    let copts = &opts.correlation;
    let (a12, b12) = inter_channels(s1, s2);
    let (a11, b11) = intra_channels(s1);
    let (a22, b22) = intra_channels(s2);
    let c12 = cross_covariance(a12, b12, copts)?;
    let c11 = cross_covariance(a11, b11, copts)?;
    let c22 = cross_covariance(a22, b22, copts)?;
    let (w12, w11, w22) = peak_windows(&c12.lattice, setting, reference.half_x, reference.half_y);

    let peaks = |m: &CorrelationMap, ws: &[Window]| -> Result<Vec<PeakStats>> {
        ws.iter().map(|w| integrate_peak(m, w)).collect()
    };
    let (s12, s11, s22) =
        peak_stat_windows(&c12.lattice, setting, reference.half_x, reference.half_y);
    let c12_peaks = peaks(&c12, &s12)?;
    let c11_peaks = peaks(&c11, &s11)?;
    let c22_peaks = peaks(&c22, &s22)?;

    let y12 = sum_windows(window_series(a12, b12, copts, &w12)?);
    let y11 = sum_windows(window_series(a11, b11, copts, &w11)?);
    let y22 = sum_windows(window_series(a22, b22, copts, &w22)?);
    let (e12, e11, e22) = (
        series_estimate(&y12),
        series_estimate(&y11),
        series_estimate(&y22),
    );
    let (r0, r0s) = (reference.integral, reference.split_integral);
    let r12 = e12 / r0;
    let r11 = e11 / r0s;
    let r22 = e22 / r0s;

    let point = [y12, y11, y22];
    let refs = [reference.series.clone(), reference.split_series.clone()];
    let se = bootstrap_se(
        &[&point, &refs],
        opts.bootstrap_replicates,
        opts.bootstrap_seed,
        |e| {
            let (p, r) = (&e[0], &e[1]);
            let r12 = p[0] / r[0];
            let intra = (p[1] + p[2]) / r[1];
            vec![r12, intra, r12 + intra]
        },
    );

    Ok((
        PointAnalysis {
            setting: *setting,
            r12,
            r12_err: se[0],
            r11,
            r22,
            r11p22: r11 + r22,
            r11p22_err: se[1],
            r_sum: r12 + r11 + r22,
            r_sum_err: se[2],
            c12_peaks,
            c12_windows: w12,
            c11_peaks,
            c22_peaks,
            frames: s1.len(),
        },
        PointMaps { c12, c11, c22 },
    ))
}

/// Transmitted and reflected C12 peaks at one horizontal shift, measured with
/// equal geometric acceptance for both pair types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossPeakRatio {
    pub tt: PeakStats,
    pub rr: PeakStats,
    /// `rr.integral / tt.integral`
    pub ratio: f64,
    /// Centroid of the reflected peak minus that of the transmitted one (mm⁻¹).
    pub separation_x: f64,
    /// Camera-1 columns kept, inclusive.
    pub columns: (usize, usize),
}

/// Copy of `stack` with every column outside `lo..=hi` cleared.
fn keep_columns(stack: &FrameStack, lo: usize, hi: usize) -> Result<FrameStack> {
    let w = stack.width();
    let frames = stack
        .frames
        .iter()
        .map(|f| {
            let mut g = Frame::new(w, f.height(), f.index);
            for i in f.iter_ones() {
                let x = i % w;
                if (lo..=hi).contains(&x) {
                    g.set(x, i / w);
                }
            }
            g
        })
        .collect();
    FrameStack::new(stack.camera, frames, stack.meta.clone())
}

/// Compares the two C12 peaks of a horizontally shifted setting.
///
/// The reflected photons of a pair move by `+δν_x` on both cameras while the
/// pair's mirror symmetry flips one of them, so on a finite sensor reflected
/// pairs are accepted over a band `2δν_x` narrower than transmitted ones.
/// Camera 1 is restricted to the columns where both pair types land on both
/// sensors, which removes that difference.
pub fn cross_peak_ratio(
    s1: &FrameStack,
    s2: &FrameStack,
    setting: &InterferometerSetting,
    half_x: isize,
    half_y: isize,
    opts: &CorrelationOptions,
) -> Result<CrossPeakRatio> {
    s1.ensure_compatible(s2)?;
    let step = s1.camera.nu_per_pixel;
    let margin = 2 * (setting.delta_nu_x.abs() / step).ceil() as usize + 1;
    let w = s1.width();
    if 2 * margin >= w {
        return Err(Error::domain(format!(
            "shift {} mm^-1 leaves no common acceptance on a {w}-pixel sensor",
            setting.delta_nu_x
        )));
    }
    let (lo, hi) = (margin, w - 1 - margin);
    let masked = keep_columns(s1, lo, hi)?;
    let (a, b) = inter_channels(&masked, s2);
    let map = cross_covariance(a, b, opts)?;
    let (xa, xb) = (bins(-2.0 * setting.delta_nu_x, step), 0);
    if (xa - xb).abs() < 2 {
        return Err(Error::domain("C12 peaks are not resolved at this shift"));
    }
    let windows = symmetric_windows(xa, xb, 0, half_x, half_y);
    let (i_rr, i_tt) = if xa < xb { (0, 1) } else { (1, 0) };
    let rr = integrate_peak(&map, &windows[i_rr])?;
    let tt = integrate_peak(&map, &windows[i_tt])?;
    Ok(CrossPeakRatio {
        ratio: rr.integral / tt.integral,
        separation_x: rr.centroid_x - tt.centroid_x,
        tt,
        rr,
        columns: (lo, hi),
    })
}
