//! Two-breakpoint continuous piecewise linear regression.
//!
//! The mean function is
//!
//! ```text
//! m(x) = b0 + b1 x                                   x <= a1
//!        b0 + b1 x + b2 (x - a1)                     a1 < x <= a2
//!        b0 + b1 x + b2 (x - a1) + b3 (x - a2)       x > a2
//! ```
//!
//! Given the breakpoints the model is linear in `b`, so the fit profiles
//! `(a1, a2)` over midpoints between distinct x values, solving ordinary least
//! squares exactly at every candidate, and then polishes the best candidate by
//! Gauss-Newton on all six parameters.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band::PredictionBand;
use crate::bootstrap::{bootstrap_band, BandConfig, MeanFitter};
use crate::dataset::BivariateDataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::loess::{fit_loess, predict_loess, LoessConfig};
use crate::stats;

pub const PARAM_NAMES: [&str; 6] = ["beta0", "beta1", "beta2", "beta3", "alpha1", "alpha2"];

#[inline]
fn pos(u: f64) -> f64 {
    if u > 0.0 {
        u
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentedModel {
    pub beta: [f64; 4],
    pub alpha: [f64; 2],
}

impl SegmentedModel {
    pub fn new(beta: [f64; 4], alpha: [f64; 2]) -> Self {
        Self { beta, alpha }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let [b0, b1, b2, b3] = self.beta;
        let [a1, a2] = self.alpha;
        if x <= a1 {
            b0 + b1 * x
        } else if x <= a2 {
            b0 + b1 * x + b2 * (x - a1)
        } else {
            b0 + b1 * x + b2 * (x - a1) + b3 * (x - a2)
        }
    }

    /// Segment slopes `b1`, `b1 + b2`, `b1 + b2 + b3`.
    pub fn slopes(&self) -> [f64; 3] {
        let [_, b1, b2, b3] = self.beta;
        [b1, b1 + b2, b1 + b2 + b3]
    }

    /// Gradient of the mean at `x` with respect to `(b0..b3, a1, a2)`.
    pub fn gradient(&self, x: f64) -> [f64; 6] {
        let [_, _, b2, b3] = self.beta;
        let [a1, a2] = self.alpha;
        [
            1.0,
            x,
            pos(x - a1),
            pos(x - a2),
            if x > a1 { -b2 } else { 0.0 },
            if x > a2 { -b3 } else { 0.0 },
        ]
    }

    fn to_vec(self) -> [f64; 6] {
        let [b0, b1, b2, b3] = self.beta;
        let [a1, a2] = self.alpha;
        [b0, b1, b2, b3, a1, a2]
    }

    fn from_slice(t: &[f64]) -> Self {
        Self::new([t[0], t[1], t[2], t[3]], [t[4], t[5]])
    }
}

pub fn eval_segmented(model: &SegmentedModel, x: f64) -> f64 {
    model.eval(x)
}

/// Row of the fixed-breakpoint design `(1, x, (x - a1)+, (x - a2)+)`.
pub fn basis_row(x: f64, a1: f64, a2: f64) -> [f64; 4] {
    [1.0, x, pos(x - a1), pos(x - a2)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegmentedOptions {
    /// Minimum observations per segment.
    pub min_points: usize,
    /// Run the Gauss-Newton polish after the profile grid.
    pub polish: bool,
}

impl Default for SegmentedOptions {
    fn default() -> Self {
        Self {
            min_points: 3,
            polish: true,
        }
    }
}

/// Candidate breakpoints and the admissible (a1, a2) index pairs.
#[derive(Debug, Clone)]
pub struct BreakpointGrid {
    pub candidates: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
}

/// Segment membership rules shared by the grid and the polish step.
#[derive(Debug, Clone)]
pub(crate) struct SegmentRule {
    xs: Vec<f64>,
    distinct: Vec<f64>,
    min_points: usize,
}

impl SegmentRule {
    pub(crate) fn new(xs: &[f64], min_points: usize) -> Self {
        let mut distinct = xs.to_vec();
        distinct.dedup();
        Self {
            xs: xs.to_vec(),
            distinct,
            min_points,
        }
    }

    /// Every segment keeps `min_points` observations and two distinct x values.
    pub(crate) fn admits(&self, a1: f64, a2: f64) -> bool {
        if !(a1 < a2) {
            return false;
        }
        let c1 = self.xs.partition_point(|&x| x <= a1);
        let c2 = self.xs.partition_point(|&x| x <= a2);
        let n = self.xs.len();
        let d1 = self.distinct.partition_point(|&x| x <= a1);
        let d2 = self.distinct.partition_point(|&x| x <= a2);
        let d = self.distinct.len();
        c1 >= self.min_points
            && c2 - c1 >= self.min_points
            && n - c2 >= self.min_points
            && d1 >= 2
            && d2 - d1 >= 2
            && d - d2 >= 2
    }
}

pub fn breakpoint_grid(xs: &[f64], min_points: usize) -> Result<BreakpointGrid> {
    let rule = SegmentRule::new(xs, min_points);
    let candidates: Vec<f64> = rule
        .distinct
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect();
    let mut pairs = Vec::new();
    for i in 0..candidates.len() {
        for j in i + 1..candidates.len() {
            if rule.admits(candidates[i], candidates[j]) {
                pairs.push((i, j));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoFeasibleBreakpoints { min_points });
    }
    Ok(BreakpointGrid { candidates, pairs })
}

/// Exact least squares at fixed breakpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerFit {
    pub beta: [f64; 4],
    pub rss: f64,
}

/// Ordinary least squares on `(1, x, (x - a1)+, (x - a2)+)` through the normal
/// equations in x-centered coordinates. `None` when the design is singular.
pub fn inner_ols(xs: &[f64], ys: &[f64], a1: f64, a2: f64) -> Option<InnerFit> {
    let xbar = stats::mean(xs);
    let mut g = Matrix4::<f64>::zeros();
    let mut rhs = Vector4::<f64>::zeros();
    for (&x, &y) in xs.iter().zip(ys) {
        let r = Vector4::new(1.0, x - xbar, pos(x - a1), pos(x - a2));
        g += r * r.transpose();
        rhs += r * y;
    }
    let chol = g.cholesky()?;
    let l = chol.l();
    for i in 0..4 {
        if l[(i, i)] * l[(i, i)] <= 1e-12 * g[(i, i)] {
            return None;
        }
    }
    let c = chol.solve(&rhs);
    let beta = [c[0] - c[1] * xbar, c[1], c[2], c[3]];
    let model = SegmentedModel::new(beta, [a1, a2]);
    let rss = rss_of(&model, xs, ys);
    Some(InnerFit { beta, rss })
}

fn rss_of(model: &SegmentedModel, xs: &[f64], ys: &[f64]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - model.eval(x);
            r * r
        })
        .sum()
}

/// Outcome of the Gauss-Newton refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolishStatus {
    Converged,
    /// The polish could not move from the grid optimum (singular Jacobian or
    /// no descent step); the grid point is returned.
    GridFallback,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceRow {
    pub parameter: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Two-sided test against zero at the 0.05 level.
    pub significant: bool,
}

impl InferenceRow {
    /// Row with a t-based interval at confidence `level` on `df` degrees of freedom.
    pub fn from_estimate(parameter: &str, estimate: f64, se: f64, df: f64, level: f64) -> Self {
        let t = estimate / se;
        let p = stats::t_two_sided_p(t, df);
        let q = stats::t_quantile(0.5 + level / 2.0, df);
        Self {
            parameter: parameter.to_string(),
            estimate,
            se,
            t,
            p,
            ci_lower: estimate - q * se,
            ci_upper: estimate + q * se,
            significant: p < 0.05,
        }
    }

    /// Row for a breakpoint whose slope change vanished: infinite SE, interval
    /// spanning the whole x-range.
    fn unidentified(parameter: &str, estimate: f64, x_range: (f64, f64)) -> Self {
        Self {
            parameter: parameter.to_string(),
            estimate,
            se: f64::INFINITY,
            t: 0.0,
            p: 1.0,
            ci_lower: x_range.0,
            ci_upper: x_range.1,
            significant: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentedFit {
    pub model: SegmentedModel,
    pub n: usize,
    pub rss: f64,
    pub df: usize,
    pub sigma2: f64,
    /// `sigma2 * (J'J)^-1`, 6x6 in `PARAM_NAMES` order. Rows and columns of
    /// unidentified breakpoints hold NaN; `None` if J'J is not invertible.
    pub cov: Option<Vec<Vec<f64>>>,
    /// Rows for alpha1, alpha2, beta1, beta1+beta2, beta1+beta2+beta3.
    pub rows: Vec<InferenceRow>,
    /// Breakpoints whose adjacent slope change is numerically zero.
    pub unidentified: [bool; 2],
    pub polish: PolishStatus,
    pub grid_model: SegmentedModel,
    pub grid_rss: f64,
    pub x_range: (f64, f64),
    #[serde(skip)]
    unscaled: Option<DMatrix<f64>>,
    #[serde(skip)]
    active: Vec<usize>,
}

impl SegmentedFit {
    pub fn row(&self, parameter: &str) -> Option<&InferenceRow> {
        self.rows.iter().find(|r| r.parameter == parameter)
    }

    /// Breakpoint intervals at an arbitrary confidence level.
    pub fn breakpoint_intervals(&self, level: f64) -> [(f64, f64); 2] {
        let q = stats::t_quantile(0.5 + level / 2.0, self.df as f64);
        let mut out = [(0.0, 0.0); 2];
        for k in 0..2 {
            let a = self.model.alpha[k];
            let se = self.rows[k].se;
            out[k] = if self.unidentified[k] || !se.is_finite() {
                self.x_range
            } else {
                (a - q * se, a + q * se)
            };
        }
        out
    }

    /// `g' (J'J)^-1 g` for a full 6-gradient.
    fn leverage(&self, grad: &[f64; 6]) -> Option<f64> {
        let u = self.unscaled.as_ref()?;
        let g: Vec<f64> = self.active.iter().map(|&i| grad[i]).collect();
        let mut s = 0.0;
        for (a, ga) in g.iter().enumerate() {
            for (b, gb) in g.iter().enumerate() {
                s += ga * u[(a, b)] * gb;
            }
        }
        Some(s)
    }
}

fn jacobian(model: &SegmentedModel, xs: &[f64], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), cols.len(), |r, c| model.gradient(xs[r])[cols[c]])
}

fn gauss_newton(
    xs: &[f64],
    ys: &[f64],
    start: SegmentedModel,
    start_rss: f64,
    rule: &SegmentRule,
) -> (SegmentedModel, f64, PolishStatus) {
    let all = [0, 1, 2, 3, 4, 5];
    let mut theta = start;
    let mut rss = start_rss;
    let mut moved = false;
    for _ in 0..200 {
        if rss == 0.0 {
            break;
        }
        let j = jacobian(&theta, xs, &all);
        let r = DVector::from_iterator(xs.len(), xs.iter().zip(ys).map(|(&x, &y)| y - theta.eval(x)));
        let Some(delta) = linalg::lstsq(j, &r) else {
            break;
        };
        let base = theta.to_vec();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = base.iter().zip(delta.iter()).map(|(t, d)| t + step * d).collect();
            let m = SegmentedModel::from_slice(&cand);
            if cand.iter().all(|v| v.is_finite()) && rule.admits(m.alpha[0], m.alpha[1]) {
                let new_rss = rss_of(&m, xs, ys);
                if new_rss < rss {
                    accepted = Some((m, new_rss));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((m, new_rss)) = accepted else {
            break;
        };
        let gain = rss - new_rss;
        theta = m;
        rss = new_rss;
        moved = true;
        if gain <= 1e-13 * rss.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    // re-profile the coefficients at the final breakpoints
    if let Some(inner) = inner_ols(xs, ys, theta.alpha[0], theta.alpha[1]) {
        if inner.rss <= rss {
            theta.beta = inner.beta;
            rss = inner.rss;
        }
    }
    let status = if moved {
        PolishStatus::Converged
    } else {
        PolishStatus::GridFallback
    };
    (theta, rss, status)
}

/// Best grid pair by RSS; ties go to the smaller a1, then the smaller a2.
fn profile_grid(xs: &[f64], ys: &[f64], grid: &BreakpointGrid) -> Result<(SegmentedModel, f64)> {
    let fits: Vec<Option<InnerFit>> = grid
        .pairs
        .par_iter()
        .map(|&(i, j)| inner_ols(xs, ys, grid.candidates[i], grid.candidates[j]))
        .collect();
    let mut best: Option<(usize, InnerFit)> = None;
    for (k, f) in fits.iter().enumerate() {
        if let Some(f) = f {
            if best.is_none_or(|(_, b)| f.rss < b.rss) {
                best = Some((k, *f));
            }
        }
    }
    let (k, f) = best.ok_or(Error::RankDeficient)?;
    let (i, j) = grid.pairs[k];
    Ok((
        SegmentedModel::new(f.beta, [grid.candidates[i], grid.candidates[j]]),
        f.rss,
    ))
}

pub fn fit_segmented(
    ds: &BivariateDataset,
    init: Option<&SegmentedModel>,
    opts: &SegmentedOptions,
) -> Result<SegmentedFit> {
    fit_segmented_xy(ds.xs(), ds.ys(), init, opts)
}

pub fn fit_segmented_xy(
    xs: &[f64],
    ys: &[f64],
    init: Option<&SegmentedModel>,
    opts: &SegmentedOptions,
) -> Result<SegmentedFit> {
    let n = xs.len();
    let needed = (3 * opts.min_points).max(7);
    if n < needed {
        return Err(Error::TooFewPoints { needed, got: n });
    }
    let grid = breakpoint_grid(xs, opts.min_points)?;
    let rule = SegmentRule::new(xs, opts.min_points);
    let (grid_model, grid_rss) = profile_grid(xs, ys, &grid)?;

    let (mut model, mut rss, mut polish) = (grid_model, grid_rss, PolishStatus::Skipped);
    if opts.polish {
        let (m, r, s) = gauss_newton(xs, ys, grid_model, grid_rss, &rule);
        (model, rss, polish) = (m, r, s);
        if let Some(init) = init {
            if rule.admits(init.alpha[0], init.alpha[1]) {
                if let Some(start) = inner_ols(xs, ys, init.alpha[0], init.alpha[1]) {
                    let m0 = SegmentedModel::new(start.beta, init.alpha);
                    let (m, r, _) = gauss_newton(xs, ys, m0, start.rss, &rule);
                    if r < rss {
                        model = m;
                        rss = r;
                        polish = PolishStatus::Converged;
                    }
                }
            }
        }
    }

    Ok(inference(xs, ys, model, rss, polish, grid_model, grid_rss))
}

fn inference(
    xs: &[f64],
    ys: &[f64],
    model: SegmentedModel,
    rss: f64,
    polish: PolishStatus,
    grid_model: SegmentedModel,
    grid_rss: f64,
) -> SegmentedFit {
    let n = xs.len();
    let df = n - 6;
    let sigma2 = rss / df as f64;
    let x_range = (xs[0], xs[n - 1]);
    let (ymin, ymax) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
    let slope_scale = {
        let s = (ymax - ymin) / (x_range.1 - x_range.0);
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    let unidentified = [
        model.beta[2].abs() <= 1e-9 * slope_scale,
        model.beta[3].abs() <= 1e-9 * slope_scale,
    ];
    let mut active = vec![0, 1, 2, 3];
    if !unidentified[0] {
        active.push(4);
    }
    if !unidentified[1] {
        active.push(5);
    }

    let j = jacobian(&model, xs, &active);
    let unscaled = linalg::spd_inverse(&(j.transpose() * &j));
    let cov = unscaled.as_ref().map(|u| {
        let mut c = vec![vec![f64::NAN; 6]; 6];
        for (a, &ia) in active.iter().enumerate() {
            for (b, &ib) in active.iter().enumerate() {
                c[ia][ib] = sigma2 * u[(a, b)];
            }
        }
        c
    });

    let var = |w: &[f64; 6]| -> f64 {
        match &cov {
            Some(c) => {
                let mut s = 0.0;
                for a in 0..6 {
                    for b in 0..6 {
                        if w[a] != 0.0 && w[b] != 0.0 {
                            s += w[a] * c[a][b] * w[b];
                        }
                    }
                }
                s
            }
            None => f64::NAN,
        }
    };

    let dff = df as f64;
    let mut rows = Vec::with_capacity(5);
    for k in 0..2 {
        let name = PARAM_NAMES[4 + k];
        let est = model.alpha[k];
        if unidentified[k] {
            rows.push(InferenceRow::unidentified(name, est, x_range));
        } else {
            let mut w = [0.0; 6];
            w[4 + k] = 1.0;
            rows.push(InferenceRow::from_estimate(name, est, var(&w).sqrt(), dff, 0.95));
        }
    }
    let contrasts: [(&str, [f64; 6]); 3] = [
        ("beta1", [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
        ("beta1+beta2", [0.0, 1.0, 1.0, 0.0, 0.0, 0.0]),
        ("beta1+beta2+beta3", [0.0, 1.0, 1.0, 1.0, 0.0, 0.0]),
    ];
    let slopes = model.slopes();
    for (k, (name, w)) in contrasts.iter().enumerate() {
        rows.push(InferenceRow::from_estimate(name, slopes[k], var(w).sqrt(), dff, 0.95));
    }

    SegmentedFit {
        model,
        n,
        rss,
        df,
        sigma2,
        cov,
        rows,
        unidentified,
        polish,
        grid_model,
        grid_rss,
        x_range,
        unscaled,
        active,
    }
}

/// Parametric prediction band
/// `yhat(x) +/- t_{(1+gamma)/2, df} sqrt(sigma2 (1 + g' (J'J)^-1 g))` on the design.
pub fn plrm_prediction_band(
    fit: &SegmentedFit,
    ds: &BivariateDataset,
    gamma: f64,
) -> Result<PredictionBand> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if fit.unscaled.is_none() {
        return Err(Error::SingularCovariance);
    }
    let q = stats::t_quantile((1.0 + gamma) / 2.0, fit.df as f64);
    let mut center = Vec::with_capacity(ds.len());
    let mut lower = Vec::with_capacity(ds.len());
    let mut upper = Vec::with_capacity(ds.len());
    for &x in ds.xs() {
        let lev = fit.leverage(&fit.model.gradient(x)).ok_or(Error::SingularCovariance)?;
        let half = q * (fit.sigma2 * (1.0 + lev)).sqrt();
        let c = fit.model.eval(x);
        center.push(c);
        lower.push(c - half);
        upper.push(c + half);
    }
    PredictionBand::new(ds.xs().to_vec(), center, lower, upper, gamma)
}

/// How a PLRM band was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlrmBandMethod {
    Parametric,
    Bootstrap,
    /// Parametric was requested but the covariance was singular.
    BootstrapFallback,
}

/// Parametric band, or the residual bootstrap with the segmented fitter when
/// the covariance is singular.
pub fn plrm_band_with_fallback(
    fit: &SegmentedFit,
    ds: &BivariateDataset,
    gamma: f64,
    opts: &SegmentedOptions,
    boot: &BandConfig,
) -> Result<(PredictionBand, PlrmBandMethod)> {
    match plrm_prediction_band(fit, ds, gamma) {
        Ok(b) => Ok((b, PlrmBandMethod::Parametric)),
        Err(Error::SingularCovariance) => {
            let cfg = BandConfig { gamma, ..*boot };
            let band = bootstrap_band(ds, &SegmentedFitter { options: *opts }, &cfg)?;
            Ok((band, PlrmBandMethod::BootstrapFallback))
        }
        Err(e) => Err(e),
    }
}

/// Segmented least squares as a bootstrap mean model.
#[derive(Debug, Clone, Copy, Default)]
pub struct SegmentedFitter {
    pub options: SegmentedOptions,
}

impl MeanFitter for SegmentedFitter {
    fn fit_values(&self, xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
        let fit = fit_segmented_xy(xs, ys, None, &self.options)?;
        Ok(xs.iter().map(|&x| fit.model.eval(x)).collect())
    }
}

/// Breakpoint starting values from a loess smooth: the two strongest local
/// maxima of |curvature| on a 201-point grid, at least a tenth of the x-range
/// apart, in ascending order.
pub fn loess_breakpoint_guess(ds: &BivariateDataset, cfg: &LoessConfig) -> Result<[f64; 2]> {
    let fit = fit_loess(ds, cfg)?;
    let (lo, hi) = ds.x_range();
    let m = 201;
    let h = (hi - lo) / (m - 1) as f64;
    let grid: Vec<f64> = (0..m).map(|i| lo + h * i as f64).collect();
    let vals = predict_loess(&fit, ds, &grid)?;
    let curv: Vec<(f64, f64)> = (1..m - 1)
        .map(|i| (grid[i], ((vals[i + 1] - 2.0 * vals[i] + vals[i - 1]) / (h * h)).abs()))
        .collect();
    let mut peaks: Vec<(f64, f64)> = (1..curv.len() - 1)
        .filter(|&i| curv[i].1 >= curv[i - 1].1 && curv[i].1 >= curv[i + 1].1)
        .map(|i| curv[i])
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let first = peaks
        .first()
        .copied()
        .unwrap_or((lo + (hi - lo) / 3.0, 0.0));
    let second = peaks
        .iter()
        .find(|p| (p.0 - first.0).abs() >= 0.1 * (hi - lo))
        .copied()
        .unwrap_or(if first.0 < 0.5 * (lo + hi) {
            (first.0 + 0.25 * (hi - lo), 0.0)
        } else {
            (first.0 - 0.25 * (hi - lo), 0.0)
        });
    let (a, b) = if first.0 < second.0 {
        (first.0, second.0)
    } else {
        (second.0, first.0)
    };
    Ok([a, b])
}
