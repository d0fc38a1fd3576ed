//! Least-squares slope fits on log scales.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of usable cells for a fit.
pub const MIN_FIT_POINTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    /// log y against log x.
    LogLog,
    /// log y against x.
    SemiLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub kind: FitKind,
    pub slope: f64,
    pub intercept: f64,
    /// Least-squares standard error of the slope.
    pub stderr: f64,
    pub used_mask: Vec<bool>,
}

impl SlopeFit {
    /// The fitted curve at `x`, back on the original scale.
    pub fn predict(&self, x: f64) -> f64 {
        match self.kind {
            FitKind::LogLog => (self.intercept + self.slope * x.ln()).exp(),
            FitKind::SemiLog => (self.intercept + self.slope * x).exp(),
        }
    }
}

/// OLS of `log y` on `log x`, over the points with `y > floor`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64], floor: f64) -> Result<SlopeFit> {
    if xs.iter().any(|&x| x <= 0.0) {
        return Err(Error::arg("log-log fit needs positive abscissae"));
    }
    fit(xs, ys, floor, FitKind::LogLog)
}

/// OLS of `log y` on `x`, over the points with `y > floor`.
pub fn fit_semilog_slope(xs: &[f64], ys: &[f64], floor: f64) -> Result<SlopeFit> {
    fit(xs, ys, floor, FitKind::SemiLog)
}

fn fit(xs: &[f64], ys: &[f64], floor: f64, kind: FitKind) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::arg(format!("{} abscissae vs {} ordinates", xs.len(), ys.len())));
    }
    let used_mask: Vec<bool> = ys.iter().map(|&y| y.is_finite() && y > floor && y > 0.0).collect();
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .zip(&used_mask)
        .filter(|(_, &u)| u)
        .map(|((&x, &y), _)| (if kind == FitKind::LogLog { x.ln() } else { x }, y.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData { usable: pts.len(), needed: MIN_FIT_POINTS });
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::arg("all usable abscissae coincide"));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (ssr / (k - 2.0) / sxx).sqrt();
    Ok(SlopeFit { kind, slope, intercept, stderr, used_mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inverse_law() {
        let xs = [16.0, 64.0, 256.0, 1024.0];
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 / x).collect();
        let f = fit_loglog_slope(&xs, &ys, 0.0).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!(f.stderr < 1e-12);
        assert!((f.predict(32.0) - 1.0 / 32.0).abs() < 1e-14);
    }

    #[test]
    fn square_root_law() {
        let xs = [1.0, 2.0, 3.0, 5.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.sqrt()).collect();
        let f = fit_loglog_slope(&xs, &ys, 0.0).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn floor_masks_points() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let mut ys: Vec<f64> = xs.iter().map(|x| 1.0 / x).collect();
        ys[4] = 1e-9;
        let f = fit_loglog_slope(&xs, &ys, 1e-6).unwrap();
        assert_eq!(f.used_mask, vec![true, true, true, true, false]);
        assert!((f.slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let r = fit_loglog_slope(&[1.0, 2.0, 3.0], &[1.0, 0.1, 0.5], 0.2);
        assert!(matches!(r, Err(Error::InsufficientData { usable: 2, needed: 3 })));
    }

    #[test]
    fn semilog_exponential() {
        let xs = [2.0, 4.0, 6.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 0.7 * (-0.5 * x).exp()).collect();
        let f = fit_semilog_slope(&xs, &ys, 0.0).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
    }

    #[test]
    fn noisy_fit_has_positive_stderr() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys = [1.0, 0.6, 0.2, 0.13];
        let f = fit_loglog_slope(&xs, &ys, 0.0).unwrap();
        assert!(f.stderr > 0.0);
    }

    proptest! {
        #[test]
        fn recovers_power_laws(a in 0.1f64..10.0, p in -2.0f64..2.0) {
            let xs = [1.0, 3.0, 9.0, 27.0, 81.0];
            let ys: Vec<f64> = xs.iter().map(|x: &f64| a * x.powf(p)).collect();
            let f = fit_loglog_slope(&xs, &ys, 0.0).unwrap();
            prop_assert!((f.slope - p).abs() < 1e-9);
        }

        #[test]
        fn slope_never_uses_floor_cells(ys in proptest::collection::vec(1e-6f64..1.0, 5), floor in 1e-6f64..0.5) {
            let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
            match fit_loglog_slope(&xs, &ys, floor) {
                Ok(f) => {
                    for (y, u) in ys.iter().zip(&f.used_mask) {
                        prop_assert_eq!(*u, *y > floor);
                    }
                }
                Err(Error::InsufficientData { usable, .. }) => {
                    prop_assert!(usable < MIN_FIT_POINTS);
                    prop_assert_eq!(usable, ys.iter().filter(|&&y| y > floor).count());
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
