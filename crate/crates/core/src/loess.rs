//! Local polynomial regression (loess) with tricube neighborhood weights and
//! optional bisquare robustness passes.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::BivariateDataset;
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoessConfig {
    /// Fraction of points in each local neighborhood, in (0, 1].
    pub span: f64,
    /// Local polynomial degree, 1 or 2.
    pub degree: usize,
    pub robust_iterations: usize,
}

impl Default for LoessConfig {
    fn default() -> Self {
        Self {
            span: 0.75,
            degree: 2,
            robust_iterations: 4,
        }
    }
}

impl LoessConfig {
    pub fn neighborhood_size(&self, n: usize) -> usize {
        ((self.span * n as f64).ceil() as usize).clamp(1, n)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.span > 0.0 && self.span <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "span must lie in (0, 1], got {}",
                self.span
            )));
        }
        if !(1..=2).contains(&self.degree) {
            return Err(Error::InvalidArgument(format!(
                "degree must be 1 or 2, got {}",
                self.degree
            )));
        }
        if n < self.degree + 2 {
            return Err(Error::TooFewPoints {
                needed: self.degree + 2,
                got: n,
            });
        }
        if self.neighborhood_size(n) < self.degree + 1 {
            return Err(Error::InvalidArgument(format!(
                "span {} leaves {} points per neighborhood; degree {} needs {}",
                self.span,
                self.neighborhood_size(n),
                self.degree,
                self.degree + 1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LoessFit {
    pub config: LoessConfig,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Bisquare weights from the last robustness pass (all ones without one).
    pub robustness_weights: Vec<f64>,
}

pub fn tricube(u: f64) -> f64 {
    let u = u.abs();
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u * u;
        t * t * t
    }
}

fn bisquare(u: f64) -> f64 {
    let u = u.abs();
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u;
        t * t
    }
}

/// Indices of the `k` nearest points to `x0`, plus every point tied with the
/// k-th distance. Returns the indices and the neighborhood radius.
fn neighborhood(xs: &[f64], x0: f64, k: usize) -> (Vec<usize>, f64) {
    let mut d: Vec<f64> = xs.iter().map(|x| (x - x0).abs()).collect();
    let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
    let radius = *kth;
    let idx = xs
        .iter()
        .enumerate()
        .filter(|(_, x)| (*x - x0).abs() <= radius)
        .map(|(i, _)| i)
        .collect();
    (idx, radius)
}

fn local_value(
    xs: &[f64],
    ys: &[f64],
    robust: &[f64],
    x0: f64,
    cfg: &LoessConfig,
) -> Result<f64> {
    match local_value_weighted(xs, ys, robust, x0, cfg) {
        Ok(v) => Ok(v),
        // Robustness weights may zero out enough neighbors to starve the
        // local design; the unweighted neighborhood is the fallback.
        Err(Error::SingularLocalFit { .. }) if robust.iter().any(|&w| w != 1.0) => {
            local_value_weighted(xs, ys, &vec![1.0; xs.len()], x0, cfg)
        }
        Err(e) => Err(e),
    }
}

fn local_value_weighted(
    xs: &[f64],
    ys: &[f64],
    robust: &[f64],
    x0: f64,
    cfg: &LoessConfig,
) -> Result<f64> {
    let k = cfg.neighborhood_size(xs.len());
    let (idx, radius) = neighborhood(xs, x0, k);
    let singular = || Error::SingularLocalFit {
        x: x0,
        needed: cfg.degree + 1,
    };

    if radius == 0.0 {
        let (sw, swy) = idx.iter().fold((0.0, 0.0), |(sw, swy), &i| {
            (sw + robust[i], swy + robust[i] * ys[i])
        });
        if sw > 0.0 {
            return Ok(swy / sw);
        }
        return Ok(idx.iter().map(|&i| ys[i]).sum::<f64>() / idx.len() as f64);
    }

    let w: Vec<f64> = idx
        .iter()
        .map(|&i| tricube((xs[i] - x0) / radius) * robust[i])
        .collect();

    let mut distinct = 0;
    let mut last = f64::NAN;
    for (j, &i) in idx.iter().enumerate() {
        if w[j] > 0.0 && xs[i] != last {
            distinct += 1;
            last = xs[i];
        }
    }
    if distinct < cfg.degree + 1 {
        return Err(singular());
    }

    let p = cfg.degree + 1;
    let a = DMatrix::from_fn(idx.len(), p, |r, c| {
        let u = (xs[idx[r]] - x0) / radius;
        w[r].sqrt() * u.powi(c as i32)
    });
    let b = DVector::from_iterator(idx.len(), idx.iter().zip(&w).map(|(&i, wi)| wi.sqrt() * ys[i]));
    let qr = a.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() <= 1e-12 * max_diag.max(f64::MIN_POSITIVE)) {
        return Err(singular());
    }
    let qtb = qr.q().transpose() * b;
    let coef = r.solve_upper_triangular(&qtb).ok_or_else(singular)?;
    Ok(coef[0])
}

pub fn fit_loess(ds: &BivariateDataset, cfg: &LoessConfig) -> Result<LoessFit> {
    fit_loess_xy(ds.xs(), ds.ys(), cfg)
}

/// Loess on raw sorted slices; the dataset wrapper delegates here.
pub fn fit_loess_xy(xs: &[f64], ys: &[f64], cfg: &LoessConfig) -> Result<LoessFit> {
    cfg.validate(xs.len())?;
    let n = xs.len();
    let scale = ys.iter().fold(0.0_f64, |m, y| m.max(y.abs())).max(1.0);
    let mut robust = vec![1.0; n];
    let mut fitted = Vec::with_capacity(n);

    for pass in 0..=cfg.robust_iterations {
        fitted = xs
            .iter()
            .map(|&x0| local_value(xs, ys, &robust, x0, cfg))
            .collect::<Result<Vec<_>>>()?;
        if pass == cfg.robust_iterations {
            break;
        }
        let abs_res: Vec<f64> = ys.iter().zip(&fitted).map(|(y, f)| (y - f).abs()).collect();
        let s = stats::median(&abs_res);
        if s <= 1e-12 * scale {
            // residuals are already at rounding level; reweighting would
            // only amplify noise
            break;
        }
        for (w, r) in robust.iter_mut().zip(&abs_res) {
            *w = bisquare(r / (6.0 * s));
        }
    }

    let residuals = ys.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    Ok(LoessFit {
        config: *cfg,
        fitted,
        residuals,
        robustness_weights: robust,
    })
}

/// Evaluates the fitted smoother at arbitrary points inside the data range.
pub fn predict_loess(fit: &LoessFit, ds: &BivariateDataset, grid: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = ds.x_range();
    grid.iter()
        .map(|&x| {
            if !(x >= lo && x <= hi) {
                return Err(Error::Extrapolation { x, lo, hi });
            }
            local_value(ds.xs(), ds.ys(), &fit.robustness_weights, x, &fit.config)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ds(xs: Vec<f64>, ys: Vec<f64>) -> BivariateDataset {
        BivariateDataset::new(xs, ys).unwrap()
    }

    /// Direct per-target weighted least squares via 2x2 normal equations.
    fn oracle_linear(xs: &[f64], ys: &[f64], x0: f64, span: f64) -> f64 {
        let n = xs.len();
        let k = (span * n as f64).ceil() as usize;
        let mut d: Vec<f64> = xs.iter().map(|x| (x - x0).abs()).collect();
        d.sort_by(f64::total_cmp);
        let dmax = d[k - 1];
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            let dist = (x - x0).abs();
            if dist > dmax {
                continue;
            }
            let w = (1.0 - (dist / dmax).powi(3)).powi(3);
            s0 += w;
            s1 += w * x;
            s2 += w * x * x;
            t0 += w * y;
            t1 += w * x * y;
        }
        let det = s0 * s2 - s1 * s1;
        let a = (t0 * s2 - s1 * t1) / det;
        let b = (s0 * t1 - s1 * t0) / det;
        a + b * x0
    }

    #[test]
    fn tricube_weights_are_valid() {
        assert_eq!(tricube(0.0), 1.0);
        assert_eq!(tricube(1.0), 0.0);
        for i in 0..=100 {
            let w = tricube(i as f64 / 100.0);
            assert!((0.0..=1.0).contains(&w));
        }
    }

    #[test]
    fn reproduces_affine_data() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.37).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        for degree in [1, 2] {
            let cfg = LoessConfig {
                span: 0.4,
                degree,
                robust_iterations: 2,
            };
            let d = ds(xs.clone(), ys.clone());
            let fit = fit_loess(&d, &cfg).unwrap();
            for (f, y) in fit.fitted.iter().zip(&ys) {
                assert_abs_diff_eq!(f, y, epsilon = 1e-9);
            }
            let p = predict_loess(&fit, &d, &[0.5, 3.3, 6.9]).unwrap();
            for (x, v) in [0.5, 3.3, 6.9].iter().zip(p) {
                assert_abs_diff_eq!(v, 2.0 * x + 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn reproduces_constants() {
        let xs: Vec<f64> = (0..12).map(f64::from).collect();
        let fit = fit_loess(&ds(xs, vec![4.5; 12]), &LoessConfig::default()).unwrap();
        assert!(fit.fitted.iter().all(|f| (f - 4.5).abs() < 1e-12));
    }

    #[test]
    fn reproduces_quadratics_at_degree_two() {
        let xs: Vec<f64> = (0..15).map(|i| i as f64 / 3.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x * x - x + 3.0).collect();
        let cfg = LoessConfig {
            span: 0.5,
            degree: 2,
            robust_iterations: 0,
        };
        let fit = fit_loess(&ds(xs, ys.clone()), &cfg).unwrap();
        for (f, y) in fit.fitted.iter().zip(&ys) {
            assert!((f - y).abs() <= 1e-8 * y.abs().max(1.0));
        }
    }

    #[test]
    fn matches_per_point_wls_oracle() {
        let xs = vec![0.0, 0.7, 1.1, 2.5, 3.0];
        let ys = vec![1.0, 0.2, 2.3, 1.9, 4.0];
        let cfg = LoessConfig {
            span: 1.0,
            degree: 1,
            robust_iterations: 0,
        };
        let d = ds(xs.clone(), ys.clone());
        let fit = fit_loess(&d, &cfg).unwrap();
        for (i, &x0) in xs.iter().enumerate() {
            assert_abs_diff_eq!(fit.fitted[i], oracle_linear(&xs, &ys, x0, 1.0), epsilon = 1e-10);
        }
        let mid = predict_loess(&fit, &d, &[1.8]).unwrap()[0];
        assert_abs_diff_eq!(mid, oracle_linear(&xs, &ys, 1.8, 1.0), epsilon = 1e-10);
    }

    #[test]
    fn three_point_midpoint_matches_oracle() {
        let xs = vec![0.0, 1.0, 3.0];
        let ys = vec![1.0, 3.0, 2.0];
        let cfg = LoessConfig {
            span: 1.0,
            degree: 1,
            robust_iterations: 0,
        };
        let d = ds(xs.clone(), ys.clone());
        let fit = fit_loess(&d, &cfg).unwrap();
        let v = predict_loess(&fit, &d, &[0.5]).unwrap()[0];
        assert_abs_diff_eq!(v, oracle_linear(&xs, &ys, 0.5, 1.0), epsilon = 1e-10);
    }

    #[test]
    fn predict_on_design_equals_fitted() {
        let xs: Vec<f64> = (0..25).map(|i| (i as f64).sqrt()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin() + 0.1 * x).collect();
        let d = ds(xs.clone(), ys);
        let fit = fit_loess(&d, &LoessConfig::default()).unwrap();
        assert_eq!(predict_loess(&fit, &d, &xs).unwrap(), fit.fitted);
    }

    #[test]
    fn refuses_extrapolation() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let d = ds(xs.clone(), xs);
        let fit = fit_loess(&d, &LoessConfig::default()).unwrap();
        assert!(matches!(
            predict_loess(&fit, &d, &[9.5]),
            Err(Error::Extrapolation { .. })
        ));
    }

    #[test]
    fn fitted_plus_residual_is_response() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).cos()).collect();
        let fit = fit_loess(&ds(xs, ys.clone()), &LoessConfig::default()).unwrap();
        for i in 0..ys.len() {
            assert_abs_diff_eq!(fit.fitted[i] + fit.residuals[i], ys[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn locality() {
        let xs: Vec<f64> = (0..40).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x / 5.0).sin()).collect();
        let cfg = LoessConfig {
            span: 0.2,
            degree: 1,
            robust_iterations: 0,
        };
        let a = fit_loess(&ds(xs.clone(), ys.clone()), &cfg).unwrap();
        let mut ys2 = ys;
        ys2[39] += 100.0;
        let b = fit_loess(&ds(xs, ys2), &cfg).unwrap();
        assert_eq!(a.fitted[5], b.fitted[5]);
    }

    #[test]
    fn robustness_dampens_outliers() {
        let xs: Vec<f64> = (0..30).map(f64::from).collect();
        let mut ys: Vec<f64> = xs.iter().map(|x| 0.3 * x + (x * 1.7).sin() * 0.2).collect();
        let clean = ys[15];
        ys[15] += 20.0;
        let plain = LoessConfig {
            span: 0.5,
            degree: 1,
            robust_iterations: 0,
        };
        let robust = LoessConfig {
            robust_iterations: 4,
            ..plain
        };
        let d = ds(xs, ys);
        let a = fit_loess(&d, &plain).unwrap().fitted[15];
        let b = fit_loess(&d, &robust).unwrap().fitted[15];
        assert!((b - clean).abs() < (a - clean).abs());
    }

    #[test]
    fn zero_radius_falls_back_to_mean() {
        let xs = vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.2, 2.5, 3.1, 3.9, 5.0];
        let ys = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let cfg = LoessConfig {
            span: 0.4,
            degree: 1,
            robust_iterations: 0,
        };
        let fit = fit_loess(&ds(xs, ys), &cfg).unwrap();
        assert_abs_diff_eq!(fit.fitted[0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn singular_neighborhood_is_reported() {
        // two distinct x values only; a quadratic is not identifiable
        let xs = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let ys = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let cfg = LoessConfig {
            span: 1.0,
            degree: 2,
            robust_iterations: 0,
        };
        assert!(matches!(
            fit_loess(&ds(xs, ys), &cfg),
            Err(Error::SingularLocalFit { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let bad_span = LoessConfig {
            span: 0.0,
            ..Default::default()
        };
        assert!(bad_span.validate(10).is_err());
        let tiny = LoessConfig {
            span: 0.1,
            degree: 2,
            robust_iterations: 0,
        };
        assert!(tiny.validate(10).is_err());
        assert!(LoessConfig::default().validate(3).is_err());
    }
}
