//! Peak windows, integrals and moments on correlation maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{CorrelationMap, Lattice};

/// Inclusive rectangle of lattice offsets, in bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub x0: isize,
    pub x1: isize,
    pub y0: isize,
    pub y1: isize,
}

impl Window {
    /// Window centred on `(cx, cy)` mm⁻¹ with half-widths `(hx, hy)` mm⁻¹.
    pub fn around(lattice: &Lattice, cx: f64, cy: f64, hx: f64, hy: f64) -> Self {
        let bx = (cx / lattice.step_x).round() as isize;
        let by = (cy / lattice.step_y).round() as isize;
        let wx = (hx / lattice.step_x).ceil().max(0.0) as isize;
        let wy = (hy / lattice.step_y).ceil().max(0.0) as isize;
        Self {
            x0: bx - wx,
            x1: bx + wx,
            y0: by - wy,
            y1: by + wy,
        }
    }

    /// Smallest window containing both.
    pub fn union(&self, other: &Window) -> Self {
        Self {
            x0: self.x0.min(other.x0),
            x1: self.x1.max(other.x1),
            y0: self.y0.min(other.y0),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x0 > self.x1 || self.y0 > self.y1
    }

    pub fn bins(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            ((self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)) as usize
        }
    }

    /// The part of the window inside `lattice`.
    pub fn clipped(&self, lattice: &Lattice) -> Self {
        let hx = lattice.half_x() as isize;
        let hy = lattice.half_y() as isize;
        Self {
            x0: self.x0.max(-hx),
            x1: self.x1.min(hx),
            y0: self.y0.max(-hy),
            y1: self.y1.min(hy),
        }
    }
}

/// Windows for two horizontally separated peaks at bin offsets `xa < xb`
/// (same row `y`), each clipped at the midpoint so they never overlap.
/// Returns a single merged window when the peaks coincide.
pub fn split_windows(xa: isize, xb: isize, y: isize, half_x: isize, half_y: isize) -> Vec<Window> {
    let (xa, xb) = (xa.min(xb), xa.max(xb));
    let y0 = y - half_y;
    let y1 = y + half_y;
    if xa == xb {
        return vec![Window {
            x0: xa - half_x,
            x1: xa + half_x,
            y0,
            y1,
        }];
    }
    // left window owns the midpoint bin when the gap is even
    let mid = xa + (xb - xa) / 2;
    vec![
        Window {
            x0: xa - half_x,
            x1: (xa + half_x).min(mid),
            y0,
            y1,
        },
        Window {
            x0: (xb - half_x).max(mid + 1),
            x1: xb + half_x,
            y0,
            y1,
        },
    ]
}

/// Windows centred on two peaks at `xa` and `xb` (row `y`), narrowed
/// symmetrically until they are disjoint. Used for per-peak moments, which
/// an asymmetric window would bias towards its larger side.
pub fn symmetric_windows(
    xa: isize,
    xb: isize,
    y: isize,
    half_x: isize,
    half_y: isize,
) -> Vec<Window> {
    let (xa, xb) = (xa.min(xb), xa.max(xb));
    if xa == xb {
        return split_windows(xa, xb, y, half_x, half_y);
    }
    let h = half_x.min((xb - xa - 1) / 2);
    [xa, xb]
        .into_iter()
        .map(|x| Window {
            x0: x - h,
            x1: x + h,
            y0: y - half_y,
            y1: y + half_y,
        })
        .collect()
}

/// Integral and moments of a map inside a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakStats {
    /// Centroid (mm⁻¹).
    pub centroid_x: f64,
    pub centroid_y: f64,
    /// Standard deviations (mm⁻¹).
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Sum of map values in the window. For covariance maps this is detected
    /// pairs per frame.
    pub integral: f64,
}

/// Integrates `map` over `window`.
///
/// The centroid and widths are moments of the positive part of the windowed
/// values, so noise around a weak peak cannot make them undefined. A window
/// with no positive mass reports its own centre and zero widths.
pub fn integrate_peak(map: &CorrelationMap, window: &Window) -> Result<PeakStats> {
    let lat = &map.lattice;
    let w = window.clipped(lat);
    if w.is_empty() {
        return Err(Error::domain(format!(
            "peak window {window:?} has no bins inside the map"
        )));
    }
    let (mut sum, mut mass, mut mx, mut my, mut mxx, mut myy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for dy in w.y0..=w.y1 {
        for dx in w.x0..=w.x1 {
            let v = map.at_offset(dx, dy);
            sum += v;
            if v > 0.0 {
                let x = dx as f64 * lat.step_x;
                let y = dy as f64 * lat.step_y;
                mass += v;
                mx += v * x;
                my += v * y;
                mxx += v * x * x;
                myy += v * y * y;
            }
        }
    }
    if mass <= 0.0 {
        return Ok(PeakStats {
            centroid_x: (w.x0 + w.x1) as f64 / 2.0 * lat.step_x,
            centroid_y: (w.y0 + w.y1) as f64 / 2.0 * lat.step_y,
            sigma_x: 0.0,
            sigma_y: 0.0,
            integral: sum,
        });
    }
    let cx = mx / mass;
    let cy = my / mass;
    Ok(PeakStats {
        centroid_x: cx,
        centroid_y: cy,
        sigma_x: (mxx / mass - cx * cx).max(0.0).sqrt(),
        sigma_y: (myy / mass - cy * cy).max(0.0).sqrt(),
        integral: sum,
    })
}

/// Ratio of a peak integral to the no-beamsplitter reference integral.
pub fn relative_ratio(peak: &PeakStats, reference_c0: &PeakStats) -> Result<f64> {
    if !(reference_c0.integral > 0.0) {
        return Err(Error::domain(format!(
            "reference integral must be positive, got {}",
            reference_c0.integral
        )));
    }
    Ok(peak.integral / reference_c0.integral)
}
