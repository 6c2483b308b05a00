//! Residual-bootstrap prediction bands.
//!
//! The procedure is generic over the mean model: anything that maps a design
//! and a response vector to fitted values on that design can be plugged in.
//!
//! 1. Fit the mean model once; `yhat` on the observed design.
//! 2. Center the residuals.
//! 3. Per replicate: resample centered residuals onto `yhat`, refit, center
//!    the refit residuals, resample those once more, and record the
//!    predicted residual `yhat - yhat* + e**` at every design point.
//! 4. Per design point, band = `yhat` + empirical quantiles of the predicted
//!    residuals at `(1 - gamma) / 2` and `(1 + gamma) / 2`.
//!
//! Replicate `b` draws from stream `b` of the configured seed, so the pool is
//! identical whatever the thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::band::PredictionBand;
use crate::dataset::BivariateDataset;
use crate::error::{Error, Result};
use crate::loess::{fit_loess_xy, LoessConfig};
use crate::rng::RngSpec;
use crate::stats;

/// Refits the mean model on a (design, response) pair.
pub trait MeanFitter: Sync {
    fn fit_values(&self, xs: &[f64], ys: &[f64]) -> Result<Vec<f64>>;
}

impl<F> MeanFitter for F
where
    F: Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Sync,
{
    fn fit_values(&self, xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
        self(xs, ys)
    }
}

impl MeanFitter for LoessConfig {
    fn fit_values(&self, xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
        Ok(fit_loess_xy(xs, ys, self)?.fitted)
    }
}

/// Ordinary least-squares straight line.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearFitter;

impl MeanFitter for LinearFitter {
    fn fit_values(&self, xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
        let mx = stats::mean(xs);
        let my = stats::mean(ys);
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        if sxx == 0.0 {
            return Err(Error::RankDeficient);
        }
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        Ok(xs.iter().map(|x| my + slope * (x - mx)).collect())
    }
}

pub const DEFAULT_REPLICATES: usize = 10_000;
const MAX_RETRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandConfig {
    pub replicates: usize,
    pub gamma: f64,
    pub rng: RngSpec,
}

impl BandConfig {
    pub fn new(replicates: usize, gamma: f64, seed: u64) -> Self {
        Self {
            replicates,
            gamma,
            rng: RngSpec::new(seed),
        }
    }
}

/// Smallest replicate count giving at least one order statistic in each tail.
pub fn min_replicates(gamma: f64) -> usize {
    (2.0 / (1.0 - gamma) - 1e-9).ceil() as usize
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    Ok(())
}

/// Subtracts the mean in place.
pub fn center(v: &mut [f64]) {
    let m = stats::mean(v);
    v.iter_mut().for_each(|e| *e -= m);
}

/// Predicted residuals for every replicate, kept so that bands at several
/// confidence levels come from one resampling run.
#[derive(Debug, Clone)]
pub struct BootstrapPool {
    pub grid_x: Vec<f64>,
    pub center: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    /// `sorted[i]` holds the predicted residuals at design point `i`, ascending.
    sorted: Vec<Vec<f64>>,
}

fn replicate(
    xs: &[f64],
    yhat: &[f64],
    centered: &[f64],
    fitter: &dyn MeanFitter,
    rng: &RngSpec,
    b: usize,
) -> Result<Vec<f64>> {
    let n = xs.len();
    let mut stream = rng.stream(b as u64);
    let mut draw = Vec::with_capacity(n);
    let mut last_err = None;
    for _ in 0..=MAX_RETRIES {
        stream.resample(centered, &mut draw);
        let ystar: Vec<f64> = yhat.iter().zip(&draw).map(|(m, e)| m + e).collect();
        let refit = match fitter.fit_values(xs, &ystar) {
            Ok(f) => f,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let mut estar: Vec<f64> = ystar.iter().zip(&refit).map(|(y, f)| y - f).collect();
        center(&mut estar);
        stream.resample(&estar, &mut draw);
        return Ok((0..n).map(|i| yhat[i] - refit[i] + draw[i]).collect());
    }
    Err(Error::ReplicateFailed {
        replicate: b,
        attempts: MAX_RETRIES + 1,
        source: Box::new(last_err.expect("at least one attempt")),
    })
}

pub fn bootstrap_pool(
    ds: &BivariateDataset,
    fitter: &dyn MeanFitter,
    replicates: usize,
    rng: RngSpec,
) -> Result<BootstrapPool> {
    if replicates < 2 {
        return Err(Error::InvalidArgument("need at least 2 bootstrap replicates".into()));
    }
    let xs = ds.xs();
    let yhat = fitter.fit_values(xs, ds.ys())?;
    let mut centered: Vec<f64> = ds.ys().iter().zip(&yhat).map(|(y, f)| y - f).collect();
    center(&mut centered);

    let rows: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|b| replicate(xs, &yhat, &centered, fitter, &rng, b))
        .collect::<Result<_>>()?;

    let n = xs.len();
    let sorted = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            col.sort_by(f64::total_cmp);
            col
        })
        .collect();

    Ok(BootstrapPool {
        grid_x: xs.to_vec(),
        center: yhat,
        replicates,
        seed: rng.seed,
        sorted,
    })
}

impl BootstrapPool {
    pub fn band(&self, gamma: f64) -> Result<PredictionBand> {
        check_gamma(gamma)?;
        let need = min_replicates(gamma);
        if self.replicates < need {
            return Err(Error::TooFewReplicates(self.replicates, gamma, need));
        }
        let qlo = (1.0 - gamma) / 2.0;
        let qhi = (1.0 + gamma) / 2.0;
        let lower = self
            .sorted
            .iter()
            .zip(&self.center)
            .map(|(c, m)| m + stats::quantile_sorted(c, qlo))
            .collect();
        let upper = self
            .sorted
            .iter()
            .zip(&self.center)
            .map(|(c, m)| m + stats::quantile_sorted(c, qhi))
            .collect();
        PredictionBand::new(self.grid_x.clone(), self.center.clone(), lower, upper, gamma)
    }

    pub fn predicted_residuals(&self, i: usize) -> &[f64] {
        &self.sorted[i]
    }
}

pub fn bootstrap_band(
    ds: &BivariateDataset,
    fitter: &dyn MeanFitter,
    cfg: &BandConfig,
) -> Result<PredictionBand> {
    check_gamma(cfg.gamma)?;
    let need = min_replicates(cfg.gamma);
    if cfg.replicates < need {
        return Err(Error::TooFewReplicates(cfg.replicates, cfg.gamma, need));
    }
    bootstrap_pool(ds, fitter, cfg.replicates, cfg.rng)?.band(cfg.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data(n: usize, seed: u64) -> BivariateDataset {
        let mut s = RngSpec::new(seed).stream(999);
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let ys = xs.iter().map(|x| 1.0 + 2.0 * x + 0.3 * s.standard_normal()).collect();
        BivariateDataset::new(xs, ys).unwrap()
    }

    #[test]
    fn zero_residuals_collapse_the_band() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - x).collect();
        let ds = BivariateDataset::new(xs, ys.clone()).unwrap();
        let band = bootstrap_band(&ds, &LinearFitter, &BandConfig::new(50, 0.8, 1)).unwrap();
        for i in 0..ys.len() {
            assert!((band.lower[i] - ys[i]).abs() < 1e-12);
            assert!((band.upper[i] - ys[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_seeds_give_identical_bands() {
        let ds = line_data(15, 3);
        let cfg = BandConfig::new(100, 0.8, 42);
        let a = bootstrap_band(&ds, &LinearFitter, &cfg).unwrap();
        let b = bootstrap_band(&ds, &LinearFitter, &cfg).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_band(&ds, &LinearFitter, &BandConfig::new(100, 0.8, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn band_is_nested_in_gamma_and_ordered() {
        let ds = line_data(20, 5);
        let pool = bootstrap_pool(&ds, &LinearFitter, 400, RngSpec::new(8)).unwrap();
        let b80 = pool.band(0.8).unwrap();
        let b95 = pool.band(0.95).unwrap();
        for i in 0..ds.len() {
            assert!(b80.lower[i] <= b80.upper[i]);
            assert!(b95.lower[i] <= b80.lower[i]);
            assert!(b95.upper[i] >= b80.upper[i]);
        }
    }

    #[test]
    fn centering_is_exact_enough() {
        let mut v = vec![1e3 + 0.1, -7.3, 2.2, 1e-3, 5.0];
        center(&mut v);
        assert!(stats::mean(&v).abs() < 1e-12);
    }

    #[test]
    fn too_few_replicates_is_refused() {
        let ds = line_data(10, 1);
        assert_eq!(min_replicates(0.8), 10);
        assert_eq!(min_replicates(0.95), 40);
        let r = bootstrap_band(&ds, &LinearFitter, &BandConfig::new(9, 0.8, 1));
        assert!(matches!(r, Err(Error::TooFewReplicates(..))));
    }

    #[test]
    fn failing_fitter_reports_replicate() {
        let ds = line_data(10, 1);
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let flaky = |xs: &[f64], ys: &[f64]| {
            if calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) == 0 {
                LinearFitter.fit_values(xs, ys)
            } else {
                Err(Error::RankDeficient)
            }
        };
        let r = bootstrap_pool(&ds, &flaky, 2, RngSpec::new(1));
        assert!(matches!(r, Err(Error::ReplicateFailed { attempts: 11, .. })));
    }

    #[test]
    fn loess_can_drive_the_band() {
        let ds = line_data(30, 2);
        let cfg = LoessConfig {
            span: 0.75,
            degree: 1,
            robust_iterations: 0,
        };
        let band = bootstrap_band(&ds, &cfg, &BandConfig::new(50, 0.8, 1)).unwrap();
        assert_eq!(band.len(), 30);
    }
}
