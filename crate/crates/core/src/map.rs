//! Δν lattices and the correlation maps defined on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A rectangular lattice of odd size, symmetric about Δν = 0.
///
/// Bin `(ix, iy)` sits at `((ix - half_x) * step_x, (iy - half_y) * step_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub nx: usize,
    pub ny: usize,
    /// mm⁻¹ per bin along x.
    pub step_x: f64,
    /// mm⁻¹ per bin along y.
    pub step_y: f64,
}

impl Lattice {
    pub fn new(nx: usize, ny: usize, step_x: f64, step_y: f64) -> Result<Self> {
        if nx % 2 == 0 || ny % 2 == 0 {
            return Err(Error::domain(format!(
                "lattice must have odd extent to be symmetric about zero, got {nx}x{ny}"
            )));
        }
        if !(step_x > 0.0 && step_y > 0.0) {
            return Err(Error::domain("lattice steps must be positive"));
        }
        Ok(Self {
            nx,
            ny,
            step_x,
            step_y,
        })
    }

    /// Lattice of all pixel offsets between two `width × height` images.
    pub fn for_offsets(width: usize, height: usize, step: f64) -> Self {
        Self {
            nx: 2 * width - 1,
            ny: 2 * height - 1,
            step_x: step,
            step_y: step,
        }
    }

    pub fn half_x(&self) -> usize {
        (self.nx - 1) / 2
    }

    pub fn half_y(&self) -> usize {
        (self.ny - 1) / 2
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, ix: usize) -> f64 {
        (ix as f64 - self.half_x() as f64) * self.step_x
    }

    pub fn y(&self, iy: usize) -> f64 {
        (iy as f64 - self.half_y() as f64) * self.step_y
    }

    /// Signed offset in bins of column `ix`.
    pub fn offset_x(&self, ix: usize) -> isize {
        ix as isize - self.half_x() as isize
    }

    pub fn offset_y(&self, iy: usize) -> isize {
        iy as isize - self.half_y() as isize
    }

    pub fn bin_area(&self) -> f64 {
        self.step_x * self.step_y
    }
}

/// How the values of a [`CorrelationMap`] are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Sum over overlapping pixels of the frame-averaged fluctuation covariance.
    /// Integrating a peak gives detected pairs per frame.
    Covariance,
    /// Covariance divided by the number of overlapping pixel pairs at each offset.
    PerPixel,
    /// Per-pixel covariance divided by the geometric mean of the two pixel variances.
    Pearson,
    /// Covariance divided by the integral of the no-beamsplitter reference peak.
    RatioToC0,
}

impl Normalization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Normalization::Covariance => "covariance",
            Normalization::PerPixel => "per_pixel",
            Normalization::Pearson => "pearson",
            Normalization::RatioToC0 => "ratio_to_c0",
        }
    }
}

/// 2D map over the Δν lattice, row-major with y as the slow axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMap {
    pub lattice: Lattice,
    pub data: Vec<f64>,
    pub normalization: Normalization,
    /// Number of frames averaged into the map.
    pub frames: usize,
}

impl CorrelationMap {
    pub fn zeros(lattice: Lattice, normalization: Normalization) -> Self {
        Self {
            lattice,
            data: vec![0.0; lattice.len()],
            normalization,
            frames: 0,
        }
    }

    /// Samples `f(x, y)` at every lattice bin.
    pub fn from_fn(
        lattice: Lattice,
        normalization: Normalization,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(lattice.len());
        for iy in 0..lattice.ny {
            let y = lattice.y(iy);
            for ix in 0..lattice.nx {
                data.push(f(lattice.x(ix), y));
            }
        }
        Self {
            lattice,
            data,
            normalization,
            frames: 0,
        }
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.lattice.nx + ix]
    }

    /// Value at a signed bin offset; zero outside the lattice.
    pub fn at_offset(&self, dx: isize, dy: isize) -> f64 {
        let ix = dx + self.lattice.half_x() as isize;
        let iy = dy + self.lattice.half_y() as isize;
        if ix < 0 || iy < 0 || ix >= self.lattice.nx as isize || iy >= self.lattice.ny as isize {
            return 0.0;
        }
        self.get(ix as usize, iy as usize)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Riemann integral, i.e. sum times bin area.
    pub fn integral(&self) -> f64 {
        self.sum() * self.lattice.bin_area()
    }

    pub fn scaled(&self, factor: f64, normalization: Normalization) -> Self {
        Self {
            lattice: self.lattice,
            data: self.data.iter().map(|v| v * factor).collect(),
            normalization,
            frames: self.frames,
        }
    }

    /// The map translated so that the returned value at Δ equals `self(Δ + shift_x)`,
    /// linearly interpolated along x. Samples falling outside the lattice read as zero.
    pub fn shifted_x(&self, shift_x: f64) -> Result<Self> {
        let extent = self.lattice.half_x() as f64 * self.lattice.step_x;
        if !shift_x.is_finite() || shift_x.abs() > extent {
            return Err(Error::domain(format!(
                "shift {shift_x} mm^-1 exceeds lattice half-extent {extent} mm^-1"
            )));
        }
        let s = shift_x / self.lattice.step_x;
        let whole = s.floor();
        let frac = s - whole;
        let whole = whole as isize;
        let nx = self.lattice.nx as isize;
        let mut out = vec![0.0; self.data.len()];
        for iy in 0..self.lattice.ny {
            let row = &self.data[iy * self.lattice.nx..(iy + 1) * self.lattice.nx];
            let sample = |j: isize| {
                if j >= 0 && j < nx {
                    row[j as usize]
                } else {
                    0.0
                }
            };
            for ix in 0..self.lattice.nx {
                let j = ix as isize + whole;
                out[iy * self.lattice.nx + ix] = (1.0 - frac) * sample(j) + frac * sample(j + 1);
            }
        }
        Ok(Self {
            lattice: self.lattice,
            data: out,
            normalization: self.normalization,
            frames: self.frames,
        })
    }

    pub fn ensure_same_lattice(&self, other: &CorrelationMap) -> Result<()> {
        if self.lattice != other.lattice {
            return Err(Error::Dimension(format!(
                "lattice {}x{} vs {}x{}",
                self.lattice.nx, self.lattice.ny, other.lattice.nx, other.lattice.ny
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_rejects_even_extent() {
        assert!(Lattice::new(4, 5, 1.0, 1.0).is_err());
        assert!(Lattice::new(5, 5, 0.0, 1.0).is_err());
        let l = Lattice::new(5, 3, 0.5, 2.0).unwrap();
        assert_eq!(l.x(0), -1.0);
        assert_eq!(l.x(4), 1.0);
        assert_eq!(l.y(1), 0.0);
    }

    #[test]
    fn integer_shift_moves_samples() {
        let l = Lattice::new(7, 1, 1.0, 1.0).unwrap();
        let mut m = CorrelationMap::zeros(l, Normalization::Covariance);
        m.data[3] = 1.0;
        let s = m.shifted_x(2.0).unwrap();
        // s(Δ) = m(Δ + 2): the spike moves to Δ = -2.
        assert_eq!(s.at_offset(-2, 0), 1.0);
        assert_eq!(s.sum(), 1.0);
    }

    #[test]
    fn fractional_shift_splits_linearly() {
        let l = Lattice::new(7, 1, 1.0, 1.0).unwrap();
        let mut m = CorrelationMap::zeros(l, Normalization::Covariance);
        m.data[3] = 1.0;
        let s = m.shifted_x(0.25).unwrap();
        assert!((s.at_offset(0, 0) - 0.75).abs() < 1e-15);
        assert!((s.at_offset(-1, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn shift_beyond_extent_is_domain_error() {
        let l = Lattice::new(7, 1, 1.0, 1.0).unwrap();
        let m = CorrelationMap::zeros(l, Normalization::Covariance);
        assert!(matches!(m.shifted_x(3.5), Err(Error::Domain(_))));
    }
}
