//! Scan curves, bootstrap errors, and plain-text/binary exports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "control,R12,R12_err,R11p22,R11p22_err";

/// Relative ratios against one control variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCurve {
    /// Name of the control variable, e.g. `delta_t`.
    pub variable: String,
    /// Unit of the control values: `fs`, `deg` or `mm^-1`.
    pub unit: String,
    pub control: Vec<f64>,
    pub r12: Vec<f64>,
    pub r12_err: Vec<f64>,
    pub r11p22: Vec<f64>,
    pub r11p22_err: Vec<f64>,
}

impl ScanCurve {
    pub fn new(variable: impl Into<String>, unit: impl Into<String>) -> Self {
        Self {
            variable: variable.into(),
            unit: unit.into(),
            control: Vec::new(),
            r12: Vec::new(),
            r12_err: Vec::new(),
            r11p22: Vec::new(),
            r11p22_err: Vec::new(),
        }
    }

    pub fn push(&mut self, control: f64, r12: f64, r12_err: f64, r11p22: f64, r11p22_err: f64) {
        self.control.push(control);
        self.r12.push(r12);
        self.r12_err.push(r12_err);
        self.r11p22.push(r11p22);
        self.r11p22_err.push(r11p22_err);
    }

    pub fn len(&self) -> usize {
        self.control.len()
    }

    pub fn is_empty(&self) -> bool {
        self.control.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.control.len();
        if [&self.r12, &self.r12_err, &self.r11p22, &self.r11p22_err]
            .iter()
            .any(|v| v.len() != n)
        {
            return Err(Error::Dimension(
                "scan curve columns differ in length".into(),
            ));
        }
        if self
            .r12_err
            .iter()
            .chain(&self.r11p22_err)
            .any(|e| !(*e >= 0.0))
        {
            return Err(Error::domain("scan curve errors must be non-negative"));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for i in 0..self.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.control[i], self.r12[i], self.r12_err[i], self.r11p22[i], self.r11p22_err[i]
            );
        }
        s
    }

    pub fn from_csv(variable: &str, unit: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(Error::Format {
                offset: 0,
                reason: format!("expected header `{CSV_HEADER}`"),
            });
        }
        let mut curve = ScanCurve::new(variable, unit);
        let mut offset = CSV_HEADER.len() as u64 + 1;
        for line in lines {
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            match vals {
                Ok(v) if v.len() == 5 => curve.push(v[0], v[1], v[2], v[3], v[4]),
                _ => {
                    return Err(Error::Format {
                        offset,
                        reason: format!("bad CSV row `{line}`"),
                    })
                }
            }
            offset += line.len() as u64 + 1;
        }
        curve.validate()?;
        Ok(curve)
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Description of a float64 grid written next to its `.bin` file.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSidecar {
    pub width: usize,
    pub height: usize,
    pub bin_x: f64,
    pub bin_y: f64,
    pub units: String,
    /// `center` when cell `(width/2, height/2)` is the origin, else `corner`.
    pub origin: String,
    pub extra: Vec<(String, String)>,
}

impl GridSidecar {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format = float64 little-endian, row-major, y slow");
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "bin_x = {}", self.bin_x);
        let _ = writeln!(s, "bin_y = {}", self.bin_y);
        let _ = writeln!(s, "units = {}", self.units);
        let _ = writeln!(s, "origin = {}", self.origin);
        for (k, v) in &self.extra {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Writes `base.bin` (raw float64 grid) and `base.txt` (sidecar).
pub fn write_grid(base: &Path, data: &[f64], sidecar: &GridSidecar) -> Result<()> {
    if data.len() != sidecar.width * sidecar.height {
        return Err(Error::Dimension(
            "grid data does not match sidecar dimensions".into(),
        ));
    }
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&base.with_extension("bin"), &bytes)?;
    write_atomic(&base.with_extension("txt"), sidecar.render().as_bytes())
}

pub fn read_grid(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format {
            offset: (bytes.len() - bytes.len() % 8) as u64,
            reason: "grid length is not a multiple of 8 bytes".into(),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Bootstrap standard errors over frames.
///
/// Each group is a set of per-frame series sharing frame indices; groups are
/// resampled independently. For every replicate the statistic receives, per
/// group, the estimate `Σ y / (N - 1)` of each series and returns any number
/// of outputs. The result holds the standard deviation of each output.
pub fn bootstrap_se<F>(groups: &[&[Vec<f64>]], replicates: usize, seed: u64, stat: F) -> Vec<f64>
where
    F: Fn(&[Vec<f64>]) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outputs: Vec<Vec<f64>> = Vec::new();
    for _ in 0..replicates {
        let estimates: Vec<Vec<f64>> = groups
            .iter()
            .map(|series| {
                let n = series.first().map_or(0, Vec::len);
                let mut sums = vec![0.0; series.len()];
                for _ in 0..n {
                    let k = rng.random_range(0..n);
                    for (s, y) in sums.iter_mut().zip(series.iter()) {
                        *s += y[k];
                    }
                }
                sums.into_iter().map(|s| s / (n as f64 - 1.0)).collect()
            })
            .collect();
        let out = stat(&estimates);
        if outputs.is_empty() {
            outputs = vec![Vec::with_capacity(replicates); out.len()];
        }
        for (o, v) in outputs.iter_mut().zip(out) {
            o.push(v);
        }
    }
    outputs
        .iter()
        .map(|v| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn csv_round_trip() {
        let mut c = ScanCurve::new("delta_t", "fs");
        c.push(-400.0, 0.41, 0.01, 0.4, 0.02);
        c.push(0.0, 0.010000000000000009, 0.005, 0.8, 0.03);
        let text = c.to_csv();
        assert!(text.starts_with("control,R12,R12_err,R11p22,R11p22_err\n"));
        assert_eq!(ScanCurve::from_csv("delta_t", "fs", &text).unwrap(), c);
    }

    #[test]
    fn bad_csv_reports_offset() {
        let text = format!("{CSV_HEADER}\n1,2,3,4,5\n1,2,x,4,5\n");
        match ScanCurve::from_csv("v", "u", &text) {
            Err(Error::Format { offset, .. }) => {
                assert_eq!(offset as usize, CSV_HEADER.len() + 1 + 10)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_errors_are_invalid() {
        let mut c = ScanCurve::new("v", "u");
        c.push(0.0, 0.0, -1.0, 0.0, 0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn bootstrap_matches_standard_error_of_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Normal::new(3.0, 2.0).unwrap();
        let n = 400;
        let y: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let group = [y];
        let se = bootstrap_se(&[&group], 2000, 11, |e| vec![e[0][0]]);
        // estimate is Σy/(N-1) ≈ mean, whose SE is 2/√N
        let expected = 2.0 / (n as f64).sqrt();
        assert!(
            (se[0] / expected - 1.0).abs() < 0.1,
            "{} vs {expected}",
            se[0]
        );
    }

    #[test]
    fn grid_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("m");
        let side = GridSidecar {
            width: 3,
            height: 2,
            bin_x: 0.37,
            bin_y: 0.37,
            units: "covariance per pixel".into(),
            origin: "center".into(),
            extra: vec![("frames".into(), "10".into())],
        };
        let data = vec![1.0, -2.5, 3.0, 0.0, 1e-300, f64::MAX];
        write_grid(&base, &data, &side).unwrap();
        assert_eq!(read_grid(&base.with_extension("bin")).unwrap(), data);
        let txt = std::fs::read_to_string(base.with_extension("txt")).unwrap();
        assert!(txt.contains("width = 3") && txt.contains("frames = 10"));
    }
}
