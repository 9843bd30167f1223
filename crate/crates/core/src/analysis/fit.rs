//! Least-squares fits of interference curves.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DMatrix, DVector, Dyn, Owned};
use serde::{Deserialize, Serialize};

use super::curve::ScanCurve;
use crate::error::{Error, Result};

/// Function evaluations allowed per parameter (plus one).
const PATIENCE: usize = 200;
const REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitShape {
    /// `a - b·exp(-x²/σ²)`
    GaussianDip,
    /// `a + b·exp(-x²/σ²)`
    GaussianPeak,
    /// `a - b·cos²(x)`, x in degrees
    Cos2,
    /// `a + b·cos²(x)`, x in degrees
    Cos2Peak,
}

impl FitShape {
    fn has_sigma(self) -> bool {
        matches!(self, FitShape::GaussianDip | FitShape::GaussianPeak)
    }

    fn is_peak(self) -> bool {
        matches!(self, FitShape::GaussianPeak | FitShape::Cos2Peak)
    }

    /// Model value and gradient with respect to the parameters.
    fn eval(self, p: &[f64], x: f64) -> (f64, [f64; 3]) {
        let sign = if self.is_peak() { 1.0 } else { -1.0 };
        if self.has_sigma() {
            let (a, b, s) = (p[0], p[1], p[2]);
            let e = (-(x * x) / (s * s)).exp();
            let ds = b * e * 2.0 * x * x / (s * s * s);
            (a + sign * b * e, [1.0, sign * e, sign * ds])
        } else {
            let c = x.to_radians().cos();
            let c2 = c * c;
            (p[0] + sign * p[1] * c2, [1.0, sign * c2, 0.0])
        }
    }

    fn n_params(self) -> usize {
        if self.has_sigma() {
            3
        } else {
            2
        }
    }
}

/// Fitted parameters with standard errors from the Jacobian at the optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub shape: FitShape,
    pub a: f64,
    pub b: f64,
    /// Width σ in the control variable's unit; absent for cos² shapes.
    pub sigma: Option<f64>,
    /// `b/a` for dips, `b/(a+b)` for peaks (the maximum over the minimum of
    /// the curve), clamped to [0, 1].
    pub visibility: f64,
    pub a_err: f64,
    pub b_err: f64,
    pub sigma_err: Option<f64>,
    pub visibility_err: f64,
    /// Norm of the (weighted) residual vector.
    pub residual_norm: f64,
    pub evaluations: usize,
    pub points: usize,
}

struct Problem<'a> {
    shape: FitShape,
    x: &'a [f64],
    y: &'a [f64],
    w: Vec<f64>,
    p: DVector<f64>,
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for Problem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, p: &DVector<f64>) {
        self.p.copy_from(p);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let p = self.p.as_slice();
        Some(DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .zip(self.y)
                .zip(&self.w)
                .map(|((x, y), w)| (self.shape.eval(p, *x).0 - y) * w),
        ))
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let p = self.p.as_slice();
        let n = self.shape.n_params();
        let mut j = DMatrix::zeros(self.x.len(), n);
        for (i, (x, w)) in self.x.iter().zip(&self.w).enumerate() {
            let (_, g) = self.shape.eval(p, *x);
            for k in 0..n {
                j[(i, k)] = g[k] * w;
            }
        }
        Some(j)
    }
}

/// Fits `shape` to points `(x, y)` with optional standard errors.
///
/// Errors that are absent, or not all positive, are treated as uniform; the
/// parameter covariance is then scaled by the reduced χ².
pub fn fit_points(x: &[f64], y: &[f64], err: Option<&[f64]>, shape: FitShape) -> Result<FitResult> {
    if x.len() != y.len() || err.is_some_and(|e| e.len() != x.len()) {
        return Err(Error::Dimension("fit inputs have different lengths".into()));
    }
    if x.len() < 5 {
        return Err(Error::domain(format!(
            "a fit needs at least 5 points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("fit inputs must be finite"));
    }
    let weighted = err.filter(|e| e.iter().all(|v| *v > 0.0 && v.is_finite()));
    let w: Vec<f64> = match weighted {
        Some(e) => e.iter().map(|v| 1.0 / v).collect(),
        None => vec![1.0; x.len()],
    };

    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let xmin = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let a0 = if shape.is_peak() { ymin } else { ymax };
    let mut init = vec![a0, ymax - ymin];
    if shape.has_sigma() {
        let half_range = 0.5 * (xmax - xmin);
        if !(half_range > 0.0) {
            return Err(Error::domain("fit control values span zero range"));
        }
        init.push(half_range);
    }
    let problem = Problem {
        shape,
        x,
        y,
        w,
        p: DVector::from_vec(init),
    };
    let (problem, report) = LevenbergMarquardt::new()
        .with_ftol(REL_TOL)
        .with_xtol(REL_TOL)
        .with_patience(PATIENCE)
        .minimize(problem);
    let residual_norm = (2.0 * report.objective_function).sqrt();
    if !report.termination.was_successful() {
        return Err(Error::Fit {
            iterations: report.number_of_evaluations,
            best_residual: residual_norm,
        });
    }

    let n = shape.n_params();
    let p = problem.p.as_slice().to_vec();
    let jac = problem.jacobian().expect("jacobian is always available");
    let jtj = jac.transpose() * &jac;
    let dof = x.len().saturating_sub(n).max(1) as f64;
    let scale = if weighted.is_some() {
        1.0
    } else {
        residual_norm * residual_norm / dof
    };
    // a flat curve leaves σ undetermined; report infinite errors then
    let cov = jtj
        .clone()
        .try_inverse()
        .map(|c| c * scale)
        .unwrap_or_else(|| DMatrix::from_element(n, n, f64::INFINITY));
    let se = |k: usize| cov[(k, k)].max(0.0).sqrt();

    let (a, b) = (p[0], p[1]);
    let sigma = shape.has_sigma().then(|| p[2].abs());
    // V = b/a (dip) or b/(a+b) (peak); gradient for the delta method
    let (v, dv) = if shape.is_peak() {
        let s = a + b;
        (b / s, [-b / (s * s), a / (s * s)])
    } else {
        (b / a, [-b / (a * a), 1.0 / a])
    };
    let var_v = dv[0] * dv[0] * cov[(0, 0)]
        + 2.0 * dv[0] * dv[1] * cov[(0, 1)]
        + dv[1] * dv[1] * cov[(1, 1)];
    Ok(FitResult {
        shape,
        a,
        b,
        sigma,
        visibility: if v.is_finite() {
            v.clamp(0.0, 1.0)
        } else {
            0.0
        },
        a_err: se(0),
        b_err: se(1),
        sigma_err: shape.has_sigma().then(|| se(2)),
        visibility_err: var_v.max(0.0).sqrt(),
        residual_norm,
        evaluations: report.number_of_evaluations,
        points: x.len(),
    })
}

/// Fits a scan curve: dip shapes use R12, peak shapes use R11 + R22.
pub fn fit_dip(curve: &ScanCurve, shape: FitShape) -> Result<FitResult> {
    if shape.is_peak() {
        fit_points(
            &curve.control,
            &curve.r11p22,
            Some(&curve.r11p22_err),
            shape,
        )
    } else {
        fit_points(&curve.control, &curve.r12, Some(&curve.r12_err), shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        analytic_ratios, overlap, BeamSplitterSpec, InterferometerSetting, OverlapParams,
    };

    fn temporal_curve(sigma_t: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let bs = BeamSplitterSpec::default();
        let params = OverlapParams {
            sigma_t,
            ..Default::default()
        };
        let x: Vec<f64> = (0..17).map(|i| -400.0 + 50.0 * i as f64).collect();
        let (r12, s): (Vec<f64>, Vec<f64>) = x
            .iter()
            .map(|&t| {
                let o = overlap(
                    &InterferometerSetting {
                        delta_t: t,
                        ..Default::default()
                    },
                    &params,
                );
                analytic_ratios(o, &bs)
            })
            .unzip();
        (x, r12, s)
    }

    #[test]
    fn noiseless_dip_recovers_generator() {
        let (x, r12, s) = temporal_curve(133.0);
        let f = fit_points(&x, &r12, None, FitShape::GaussianDip).unwrap();
        assert!((f.sigma.unwrap() - 133.0).abs() < 1e-6, "{:?}", f.sigma);
        assert!(
            (f.visibility - 0.40 / 0.41).abs() < 1e-6,
            "{}",
            f.visibility
        );
        assert!((f.visibility - 0.9756).abs() < 1e-4);
        let g = fit_points(&x, &s, None, FitShape::GaussianPeak).unwrap();
        assert!((g.sigma.unwrap() - 133.0).abs() < 1e-6);
        assert!((g.visibility - 0.5).abs() < 1e-6);
    }

    #[test]
    fn constant_curve_has_no_depth() {
        let x: Vec<f64> = (0..9).map(|i| i as f64 * 10.0 - 40.0).collect();
        let y = vec![0.3; 9];
        let f = fit_points(&x, &y, None, FitShape::GaussianDip).unwrap();
        assert!(f.b.abs() < 1e-12);
        assert_eq!(f.visibility, 0.0);
    }

    #[test]
    fn cos2_polarization_curve() {
        let bs = BeamSplitterSpec::default();
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 10.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&th| {
                let c = th.to_radians().cos();
                analytic_ratios(c * c, &bs).0
            })
            .collect();
        let f = fit_points(&x, &y, None, FitShape::Cos2).unwrap();
        assert!((f.a - 0.41).abs() < 1e-9);
        assert!((f.b - 0.40).abs() < 1e-9);
        assert!(f.sigma.is_none());
    }

    #[test]
    fn weighted_fit_reports_errors() {
        let (x, r12, _) = temporal_curve(133.1);
        let noisy: Vec<f64> = r12
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.01 * if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let err = vec![0.01; x.len()];
        let f = fit_points(&x, &noisy, Some(&err), FitShape::GaussianDip).unwrap();
        assert!(f.a_err > 0.0 && f.b_err > 0.0 && f.sigma_err.unwrap() > 0.0);
        assert!((f.sigma.unwrap() - 133.1).abs() < 3.0 * f.sigma_err.unwrap() + 5.0);
    }

    #[test]
    fn too_few_points() {
        let x = [0.0, 1.0, 2.0, 3.0];
        assert!(fit_points(&x, &x, None, FitShape::GaussianDip).is_err());
    }
}
