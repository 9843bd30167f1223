//! Zero-padded 2D FFT used for linear cross-correlation.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Plans for a `pw × ph` padded grid holding `w × h` images.
pub(crate) struct Fft2 {
    pub w: usize,
    pub h: usize,
    pub pw: usize,
    pub ph: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    /// Padding to at least `2w - 1` by `2h - 1` so correlations do not wrap.
    pub fn for_correlation(w: usize, h: usize) -> Self {
        let pw = (2 * w - 1).next_power_of_two().max(1);
        let ph = (2 * h - 1).next_power_of_two().max(1);
        let mut planner = FftPlanner::new();
        Self {
            w,
            h,
            pw,
            ph,
            row_fwd: planner.plan_fft_forward(pw),
            col_fwd: planner.plan_fft_forward(ph),
            row_inv: planner.plan_fft_inverse(pw),
            col_inv: planner.plan_fft_inverse(ph),
        }
    }

    pub fn len(&self) -> usize {
        self.pw * self.ph
    }

    fn columns(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let mut col = vec![Complex64::default(); self.ph];
        for x in 0..self.pw {
            for y in 0..self.ph {
                col[y] = buf[y * self.pw + x];
            }
            fft.process(&mut col);
            for y in 0..self.ph {
                buf[y * self.pw + x] = col[y];
            }
        }
    }

    /// Forward transform of a row-major `w × h` real image.
    pub fn forward(&self, img: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::default(); self.len()];
        for y in 0..self.h {
            let row = &mut buf[y * self.pw..(y + 1) * self.pw];
            for x in 0..self.w {
                row[x].re = img[y * self.w + x];
            }
            self.row_fwd.process(row);
        }
        // rows h..ph are zero and stay zero after a row transform
        self.columns(&mut buf, &self.col_fwd);
        buf
    }

    /// Inverse transform, unnormalized, returning real parts.
    pub fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.columns(&mut buf, &self.col_inv);
        for row in buf.chunks_mut(self.pw) {
            self.row_inv.process(row);
        }
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Reads the linear correlation `Σ_p a(p)·b(p+Δ)` out of the inverse
    /// transform of `conj(A)·B`, as a `(2w-1) × (2h-1)` lattice with Δ = 0 at the centre.
    pub fn unwrap_lattice(&self, circ: &[f64], scale: f64) -> Vec<f64> {
        let nx = 2 * self.w - 1;
        let ny = 2 * self.h - 1;
        let mut out = vec![0.0; nx * ny];
        for iy in 0..ny {
            let dy = iy as isize - (self.h as isize - 1);
            let sy = dy.rem_euclid(self.ph as isize) as usize;
            for ix in 0..nx {
                let dx = ix as isize - (self.w as isize - 1);
                let sx = dx.rem_euclid(self.pw as isize) as usize;
                out[iy * nx + ix] = circ[sy * self.pw + sx] * scale;
            }
        }
        out
    }
}
