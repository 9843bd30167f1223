//! Noise budget of the covariance estimator for twin-photon signals.

use serde::{Deserialize, Serialize};

use super::covmap::SpatialMap;
use crate::error::{Error, Result};
use crate::map::CorrelationMap;

/// Signal gain from 4×4 binning quoted for the laboratory setup.
pub const REFERENCE_SIGNAL_GAIN: f64 = 10.0;
/// Noise gain from 4×4 binning quoted for the laboratory setup.
pub const REFERENCE_NOISE_GAIN: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrBudget {
    /// Mean detected photons per pixel per frame.
    pub m: f64,
    pub frames: f64,
    /// Pixels averaged in one resolution cell.
    pub pixels: f64,
    /// Normalized integral of the correlation peak, in pixels.
    pub peak_pixels: f64,
    pub pair_ratio: f64,
    /// `√(m²(1−m²)/(N·P))`
    pub noise_std: f64,
    /// `m·pair_ratio/P′`
    pub twin_signal: f64,
    pub snr: f64,
    pub signal_gain: f64,
    pub noise_gain: f64,
    pub binned_snr: f64,
}

/// Noise and twin signal for occupancy `m`, `n` frames, `p` pixels per cell,
/// peak integral `p_prime` pixels and pair ratio `pair_ratio`.
///
/// The binning gains start at 1; see [`SnrBudget::with_binning`].
pub fn snr_budget(m: f64, n: f64, p: f64, p_prime: f64, pair_ratio: f64) -> Result<SnrBudget> {
    for (name, v) in [
        ("m", m),
        ("N", n),
        ("P", p),
        ("P'", p_prime),
        ("pair_ratio", pair_ratio),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::domain(format!("{name} must be positive, got {v}")));
        }
    }
    if m >= 1.0 {
        return Err(Error::domain("m must be below 1 for binary pixels"));
    }
    let noise_std = (m * m * (1.0 - m * m) / (n * p)).sqrt();
    let twin_signal = m * pair_ratio / p_prime;
    let snr = twin_signal / noise_std;
    Ok(SnrBudget {
        m,
        frames: n,
        pixels: p,
        peak_pixels: p_prime,
        pair_ratio,
        noise_std,
        twin_signal,
        snr,
        signal_gain: 1.0,
        noise_gain: 1.0,
        binned_snr: snr,
    })
}

impl SnrBudget {
    pub fn with_binning(mut self, signal_gain: f64, noise_gain: f64) -> Self {
        self.signal_gain = signal_gain;
        self.noise_gain = noise_gain;
        self.binned_snr = self.snr * signal_gain / noise_gain;
        self
    }
}

/// Gains `(signal, noise)` of `bin × bin` binning for a per-pixel twin peak.
///
/// The binned covariance per original pixel at zero offset collects
/// `Σ_Δ c(Δ)·(b−|Δx|)₊(b−|Δy|)₊ / b²`; for independent pixels the noise
/// of a cell average grows by `b`.
pub fn measured_binning_gains(per_pixel: &CorrelationMap, bin: usize) -> Result<(f64, f64)> {
    let c0 = per_pixel.at_offset(0, 0);
    if !(c0 > 0.0) {
        return Err(Error::domain("peak value at zero offset must be positive"));
    }
    let b = bin as isize;
    let mut s = 0.0;
    for dy in -(b - 1)..b {
        for dx in -(b - 1)..b {
            s += per_pixel.at_offset(dx, dy) * ((b - dx.abs()) * (b - dy.abs())) as f64;
        }
    }
    Ok((s / (bin * bin) as f64 / c0, bin as f64))
}

/// `Σ_W c / c(0)` over `half` bins around zero offset: the peak integral in pixels.
pub fn peak_pixels(per_pixel: &CorrelationMap, half: isize) -> Result<f64> {
    let c0 = per_pixel.at_offset(0, 0);
    if !(c0 > 0.0) {
        return Err(Error::domain("peak value at zero offset must be positive"));
    }
    let mut s = 0.0;
    for dy in -half..=half {
        for dx in -half..=half {
            s += per_pixel.at_offset(dx, dy);
        }
    }
    Ok(s / c0)
}

/// Standard deviation of the means of non-overlapping `cell × cell` blocks.
pub fn cell_average_std(map: &SpatialMap, cell: usize) -> Result<f64> {
    let (nx, ny) = (map.width / cell.max(1), map.height / cell.max(1));
    if cell == 0 || nx * ny < 2 {
        return Err(Error::domain("map holds fewer than two cells"));
    }
    let mut means = Vec::with_capacity(nx * ny);
    for by in 0..ny {
        for bx in 0..nx {
            let mut s = 0.0;
            for y in by * cell..(by + 1) * cell {
                for x in bx * cell..(bx + 1) * cell {
                    s += map.get(x, y);
                }
            }
            means.push(s / (cell * cell) as f64);
        }
    }
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    Ok((means.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{Lattice, Normalization};

    #[test]
    fn reference_budget() {
        let b = snr_budget(0.12, 500.0, 529.0, 27.0, 0.13).unwrap();
        assert!((b.noise_std - 2.316e-4).abs() < 1e-6, "{}", b.noise_std);
        assert!((b.twin_signal - 5.78e-4).abs() < 1e-6, "{}", b.twin_signal);
        let binned = b.with_binning(REFERENCE_SIGNAL_GAIN, REFERENCE_NOISE_GAIN);
        assert!(
            (binned.binned_snr - 6.24).abs() < 0.01,
            "{}",
            binned.binned_snr
        );
    }

    #[test]
    fn quadrupling_frames_halves_noise() {
        let a = snr_budget(0.12, 500.0, 529.0, 27.0, 0.13).unwrap();
        let b = snr_budget(0.12, 2000.0, 529.0, 27.0, 0.13).unwrap();
        assert!((a.noise_std / b.noise_std - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert!(snr_budget(0.0, 500.0, 529.0, 27.0, 0.13).is_err());
        assert!(snr_budget(1.2, 500.0, 529.0, 27.0, 0.13).is_err());
    }

    #[test]
    fn single_pixel_peak_gains() {
        let lat = Lattice::new(9, 9, 1.0, 1.0).unwrap();
        let mut m = CorrelationMap::zeros(lat, Normalization::PerPixel);
        m.data[4 * 9 + 4] = 1.0;
        // a delta peak gains nothing per original pixel
        assert_eq!(measured_binning_gains(&m, 4).unwrap(), (1.0, 4.0));
        // a flat map gains Σ (b-|Δx|)(b-|Δy|) / b² = b²
        let flat = CorrelationMap::from_fn(lat, Normalization::PerPixel, |_, _| 1.0);
        let (g, _) = measured_binning_gains(&flat, 2).unwrap();
        assert!((g - 4.0).abs() < 1e-12);
        assert_eq!(peak_pixels(&flat, 1).unwrap(), 9.0);
    }
}
