//! Piecewise linear quantile regression.
//!
//! The inner problem (breakpoints fixed) minimizes the check loss
//! `sum rho_tau(y_i - x_i b)`, a linear program
//!
//! ```text
//! min  tau * sum(u+) + (1 - tau) * sum(u-)
//! s.t. X b + u+ - u- = y,   u+, u- >= 0,   b free
//! ```
//!
//! solved here by a simplex method on its natural vertex structure: a basis is
//! a set of `p` observations fitted exactly, every other observation carries a
//! sign label saying which of `u+`/`u-` is basic. Edge directions release one
//! basis observation upward or downward; the line search along an edge passes
//! through as many residual sign changes as keep the objective decreasing
//! (Barrodale-Roberts style). After a run of degenerate pivots the solver
//! switches to Bland's rule.
//!
//! The outer problem profiles the breakpoints over the segmented-regression
//! candidate grid and refines the incumbent by a shrinking pattern search.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::band::PredictionBand;
use crate::dataset::BivariateDataset;
use crate::error::{Error, Result};
use crate::segmented::{basis_row, breakpoint_grid, SegmentRule, SegmentedModel};

/// The check (pinball) loss `u (tau - 1[u < 0])`.
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

pub fn check_loss_sum(residuals: impl IntoIterator<Item = f64>, tau: f64) -> f64 {
    residuals.into_iter().map(|u| check_loss(u, tau)).sum()
}

/// Dense row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let data: Vec<f64> = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        assert_eq!(data.len(), rows.len() * cols, "ragged design rows");
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Fixed-breakpoint segmented design `(1, x, (x - a1)+, (x - a2)+)`.
    pub fn segmented(xs: &[f64], a1: f64, a2: f64) -> Self {
        let mut data = Vec::with_capacity(xs.len() * 4);
        for &x in xs {
            data.extend_from_slice(&basis_row(x, a1, a2));
        }
        Self {
            rows: xs.len(),
            cols: 4,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn dot(&self, i: usize, b: &[f64]) -> f64 {
        self.row(i).iter().zip(b).map(|(a, b)| a * b).sum()
    }
}

/// Inverse of the `p x p` submatrix formed by rows `basis`, row-major.
/// Gaussian elimination with partial pivoting.
fn basis_inverse(x: &Design, basis: &[usize]) -> Option<Vec<f64>> {
    let p = x.cols;
    let mut a: Vec<f64> = basis.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
    let mut inv = vec![0.0; p * p];
    for i in 0..p {
        inv[i * p + i] = 1.0;
    }
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for col in 0..p {
        let piv = (col..p).max_by(|&r, &s| a[r * p + col].abs().total_cmp(&a[s * p + col].abs()))?;
        if a[piv * p + col].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        if piv != col {
            for c in 0..p {
                a.swap(col * p + c, piv * p + c);
                inv.swap(col * p + c, piv * p + c);
            }
        }
        let d = a[col * p + col];
        for c in 0..p {
            a[col * p + c] /= d;
            inv[col * p + c] /= d;
        }
        for r in 0..p {
            if r != col {
                let f = a[r * p + col];
                if f != 0.0 {
                    for c in 0..p {
                        a[r * p + c] -= f * a[col * p + c];
                        inv[r * p + c] -= f * inv[col * p + c];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// `p` rows spanning the column space, chosen greedily by pivot size.
fn initial_basis(x: &Design) -> Result<Vec<usize>> {
    let (n, p) = (x.rows, x.cols);
    if n < p {
        return Err(Error::RankDeficient);
    }
    let mut a = x.data.clone();
    let mut used = vec![false; n];
    let mut basis = Vec::with_capacity(p);
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for col in 0..p {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..n {
            if !used[r] {
                let v = a[r * p + col].abs();
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((r, v));
                }
            }
        }
        let (piv, v) = best.ok_or(Error::RankDeficient)?;
        if v <= 1e-12 * scale {
            return Err(Error::RankDeficient);
        }
        used[piv] = true;
        basis.push(piv);
        let prow: Vec<f64> = a[piv * p..(piv + 1) * p].to_vec();
        for r in 0..n {
            if !used[r] {
                let f = a[r * p + col] / prow[col];
                if f != 0.0 {
                    for c in col..p {
                        a[r * p + c] -= f * prow[c];
                    }
                }
            }
        }
    }
    Ok(basis)
}

/// Optimal basic solution of the check-loss LP.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileLp {
    pub coef: Vec<f64>,
    pub objective: f64,
    /// Observations fitted exactly at the returned vertex.
    pub basis: Vec<usize>,
    pub pivots: usize,
}

/// Consecutive zero-length pivots tolerated before switching to Bland's rule.
const DEGENERATE_BUDGET: usize = 50;

pub fn fit_quantile_linear(x: &Design, ys: &[f64], tau: f64) -> Result<QuantileLp> {
    fit_quantile_linear_from(x, ys, tau, None)
}

/// Like [`fit_quantile_linear`], starting from `hint` when it is a valid basis.
pub fn fit_quantile_linear_from(
    x: &Design,
    ys: &[f64],
    tau: f64,
    hint: Option<&[usize]>,
) -> Result<QuantileLp> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")));
    }
    if ys.len() != x.rows {
        return Err(Error::InvalidArgument("design rows differ from response length".into()));
    }
    let (n, p) = (x.rows, x.cols);
    if p == 0 || n < p {
        return Err(Error::RankDeficient);
    }

    let (mut basis, mut binv) = match hint
        .filter(|h| h.len() == p && h.iter().all(|&i| i < n))
        .and_then(|h| basis_inverse(x, h).map(|inv| (h.to_vec(), inv)))
    {
        Some(v) => v,
        None => {
            let b = initial_basis(x)?;
            let inv = basis_inverse(x, &b).ok_or(Error::RankDeficient)?;
            (b, inv)
        }
    };

    let yscale = ys.iter().fold(0.0_f64, |m, y| m.max(y.abs()));
    let zero_tol = 1e-12 * yscale.max(f64::MIN_POSITIVE);
    let mut in_basis = vec![false; n];
    basis.iter().for_each(|&i| in_basis[i] = true);
    let mut label = vec![1i8; n];
    let mut coef = vec![0.0; p];
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n * p];
    let mut kinks: Vec<(f64, usize)> = Vec::with_capacity(n);

    let max_pivots = 50 * (n + p) + 1000;
    let mut degenerate_run = 0usize;
    let mut bland = false;
    let mut pivots = 0usize;

    loop {
        // coefficients and residuals at the current vertex
        for (j, c) in coef.iter_mut().enumerate() {
            *c = (0..p).map(|k| binv[j * p + k] * ys[basis[k]]).sum();
        }
        for i in 0..n {
            if in_basis[i] {
                r[i] = 0.0;
                continue;
            }
            r[i] = ys[i] - x.dot(i, &coef);
            if r[i] > zero_tol {
                label[i] = 1;
            } else if r[i] < -zero_tol {
                label[i] = -1;
            }
        }
        // z[i][k]: coordinates of row i in the basis rows
        for i in 0..n {
            let row = x.row(i);
            for k in 0..p {
                z[i * p + k] = (0..p).map(|j| row[j] * binv[j * p + k]).sum();
            }
        }

        // reduced costs: g(k, +1) = (1 - tau) + S_k, g(k, -1) = tau - S_k
        let mut entering: Option<(usize, f64, f64)> = None; // (k, delta, g)
        for k in 0..p {
            let mut s = 0.0;
            let mut mag = 1.0;
            for i in 0..n {
                if in_basis[i] {
                    continue;
                }
                let zik = z[i * p + k];
                s += if label[i] > 0 { -tau * zik } else { (1.0 - tau) * zik };
                mag += zik.abs();
            }
            let tol = 1e-11 * mag;
            for (delta, g) in [(1.0, (1.0 - tau) + s), (-1.0, tau - s)] {
                if g >= -tol {
                    continue;
                }
                let better = match entering {
                    None => true,
                    Some((bk, bd, bg)) => {
                        if bland {
                            let idx = |k: usize, d: f64| 2 * basis[k] + usize::from(d > 0.0);
                            idx(k, delta) < idx(bk, bd)
                        } else {
                            g < bg
                        }
                    }
                };
                if better {
                    entering = Some((k, delta, g));
                }
            }
        }

        let Some((k, delta, g)) = entering else {
            break;
        };
        if pivots >= max_pivots {
            return Err(Error::IterationLimit(pivots));
        }
        pivots += 1;

        // line search along the edge
        kinks.clear();
        let mut zmag = 0.0_f64;
        for i in 0..n {
            if !in_basis[i] {
                zmag = zmag.max(z[i * p + k].abs());
            }
        }
        let ztol = 1e-13 * zmag.max(1.0);
        for i in 0..n {
            if in_basis[i] {
                continue;
            }
            let zi = delta * z[i * p + k];
            // residuals within rounding of zero sit on the kink already
            let ri = if r[i].abs() <= zero_tol { 0.0 } else { r[i] };
            if label[i] > 0 && zi > ztol {
                kinks.push((ri.max(0.0) / zi, i));
            } else if label[i] < 0 && zi < -ztol {
                kinks.push(((-ri).max(0.0) / -zi, i));
            }
        }
        if kinks.is_empty() {
            // the objective cannot decrease without bound; a missing kink
            // means the reduced cost was rounding noise
            break;
        }

        let (step, leaving_obs) = if bland {
            let idx = |i: usize| 2 * i + usize::from(label[i] < 0);
            let &(t, i) = kinks
                .iter()
                .min_by(|a, b| a.0.total_cmp(&b.0).then(idx(a.1).cmp(&idx(b.1))))
                .expect("non-empty");
            (t, i)
        } else {
            kinks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut slope = g;
            let mut chosen = *kinks.last().expect("non-empty");
            for &(t, i) in kinks.iter() {
                slope += (delta * z[i * p + k]).abs();
                if slope >= 0.0 {
                    chosen = (t, i);
                    break;
                }
                label[i] = -label[i];
            }
            chosen
        };

        if step <= 0.0 {
            degenerate_run += 1;
            if degenerate_run >= DEGENERATE_BUDGET {
                bland = true;
            }
        } else {
            degenerate_run = 0;
        }

        let out = basis[k];
        basis[k] = leaving_obs;
        in_basis[out] = false;
        in_basis[leaving_obs] = true;
        label[out] = if delta > 0.0 { -1 } else { 1 };
        binv = basis_inverse(x, &basis).ok_or(Error::RankDeficient)?;
    }

    for (j, c) in coef.iter_mut().enumerate() {
        *c = (0..p).map(|k| binv[j * p + k] * ys[basis[k]]).sum();
    }
    let objective = check_loss_sum((0..n).map(|i| ys[i] - x.dot(i, &coef)), tau);
    Ok(QuantileLp {
        coef,
        objective,
        basis,
        pivots,
    })
}

/// Counts `(#{r < 0}, #{r <= 0})` with a relative zero tolerance.
pub fn sign_counts(residuals: &[f64], scale: f64) -> (usize, usize) {
    let tol = 1e-9 * scale.max(f64::MIN_POSITIVE);
    let neg = residuals.iter().filter(|&&r| r < -tol).count();
    let nonpos = residuals.iter().filter(|&&r| r <= tol).count();
    (neg, nonpos)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileOptions {
    pub min_points: usize,
    /// Coarse stage keeps at most this many candidates per breakpoint; larger
    /// grids are thinned and the incumbent refined on the full grid.
    pub coarse_candidates: usize,
    /// Local searches started from distinct coarse basins.
    pub starts: usize,
    /// Pattern-search refinement of the breakpoints off the midpoint grid.
    pub refine: bool,
}

impl Default for QuantileOptions {
    fn default() -> Self {
        Self {
            min_points: 3,
            coarse_candidates: 30,
            starts: 4,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileStatus {
    Optimal,
    /// Refinement failed; the best grid candidate is returned.
    GridFallback,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantileSegmentedFit {
    pub tau: f64,
    pub model: SegmentedModel,
    pub objective: f64,
    pub status: QuantileStatus,
    /// Objective at the best candidate of the midpoint grid.
    pub grid_objective: f64,
    #[serde(skip)]
    pub basis: Vec<usize>,
}

impl QuantileSegmentedFit {
    pub fn residuals(&self, xs: &[f64], ys: &[f64]) -> Vec<f64> {
        xs.iter().zip(ys).map(|(&x, &y)| y - self.model.eval(x)).collect()
    }
}

struct Evaluator<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
    tau: f64,
}

#[derive(Clone)]
struct Candidate {
    alpha: [f64; 2],
    lp: QuantileLp,
}

impl Evaluator<'_> {
    fn eval(&self, a1: f64, a2: f64, hint: Option<&[usize]>) -> Result<Candidate> {
        let design = Design::segmented(self.xs, a1, a2);
        let lp = fit_quantile_linear_from(&design, self.ys, self.tau, hint)?;
        Ok(Candidate { alpha: [a1, a2], lp })
    }
}

/// Strict improvement, ties broken toward smaller (a1, a2).
fn improves(c: &Candidate, best: &Candidate) -> bool {
    c.lp.objective < best.lp.objective
        || (c.lp.objective == best.lp.objective
            && (c.alpha[0], c.alpha[1]) < (best.alpha[0], best.alpha[1]))
}

fn nearest_index(cands: &[f64], v: f64) -> usize {
    (0..cands.len())
        .min_by(|&a, &b| (cands[a] - v).abs().total_cmp(&(cands[b] - v).abs()))
        .unwrap_or(0)
}

pub fn fit_segmented_quantile(
    ds: &BivariateDataset,
    tau: f64,
    init: Option<&SegmentedModel>,
    opts: &QuantileOptions,
) -> Result<QuantileSegmentedFit> {
    fit_segmented_quantile_xy(ds.xs(), ds.ys(), tau, init, opts)
}

pub fn fit_segmented_quantile_xy(
    xs: &[f64],
    ys: &[f64],
    tau: f64,
    init: Option<&SegmentedModel>,
    opts: &QuantileOptions,
) -> Result<QuantileSegmentedFit> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")));
    }
    let n = xs.len();
    let needed = (3 * opts.min_points).max(7);
    if n < needed {
        return Err(Error::TooFewPoints { needed, got: n });
    }
    if (n as f64) * tau.min(1.0 - tau) < 1.0 {
        return Err(Error::ExtremeTau { tau, n });
    }
    let grid = breakpoint_grid(xs, opts.min_points)?;
    let rule = SegmentRule::new(xs, opts.min_points);
    let cands = &grid.candidates;
    let m = cands.len();
    let ev = Evaluator { xs, ys, tau };

    let stride = m.div_ceil(opts.coarse_candidates.max(2)).max(1);
    let mut coarse: Vec<usize> = (0..m).step_by(stride).collect();
    if coarse.last() != Some(&(m - 1)) {
        coarse.push(m - 1);
    }
    let seed_pair = init.map(|s| (nearest_index(cands, s.alpha[0]), nearest_index(cands, s.alpha[1])));
    if let Some((i, j)) = seed_pair {
        coarse.extend([i, j]);
    }
    coarse.sort_unstable();
    coarse.dedup();

    let feasible = |i: usize, j: usize| i < j && rule.admits(cands[i], cands[j]);

    // Basis at the seed pair warm-starts every chain.
    let seed_basis = seed_pair
        .filter(|&(i, j)| feasible(i, j))
        .and_then(|(i, j)| ev.eval(cands[i], cands[j], None).ok())
        .map(|c| c.lp.basis);

    // Coarse stage: one warm-started chain per a1 candidate.
    let chains: Vec<Result<Vec<((usize, usize), Candidate)>>> = coarse
        .par_iter()
        .map(|&i| {
            let mut hint = seed_basis.clone();
            let mut out = Vec::new();
            for &j in coarse.iter().filter(|&&j| feasible(i, j)) {
                let c = ev.eval(cands[i], cands[j], hint.as_deref())?;
                hint = Some(c.lp.basis.clone());
                out.push(((i, j), c));
            }
            Ok(out)
        })
        .collect();
    let mut memo: HashMap<(usize, usize), Candidate> = HashMap::new();
    for chain in chains {
        memo.extend(chain?);
    }
    let mut ranked: Vec<(usize, usize)> = memo.keys().copied().collect();
    ranked.sort_by(|a, b| {
        memo[a]
            .lp
            .objective
            .total_cmp(&memo[b].lp.objective)
            .then(a.cmp(b))
    });
    let Some(&first) = ranked.first() else {
        return Err(Error::NoFeasibleBreakpoints {
            min_points: opts.min_points,
        });
    };
    let mut best_idx = first;

    // Local search on the full midpoint grid, started from the best
    // candidates of distinct coarse basins.
    if stride > 1 {
        let mut starts: Vec<(usize, usize)> = Vec::new();
        for &k in &ranked {
            if starts.len() == opts.starts.max(1) {
                break;
            }
            let far = |s: &(usize, usize)| k.0.abs_diff(s.0) > stride || k.1.abs_diff(s.1) > stride;
            if starts.iter().all(far) {
                starts.push(k);
            }
        }
        for start in starts {
            let mut cur = start;
            for _ in 0..(4 * m) {
                let (ci, cj) = cur;
                let mut next = cur;
                let mut hint = Some(memo[&cur].lp.basis.clone());
                for i in ci.saturating_sub(stride)..=(ci + stride).min(m - 1) {
                    for j in cj.saturating_sub(stride)..=(cj + stride).min(m - 1) {
                        if !feasible(i, j) {
                            continue;
                        }
                        if let std::collections::hash_map::Entry::Vacant(e) = memo.entry((i, j)) {
                            let c = ev.eval(cands[i], cands[j], hint.as_deref())?;
                            hint = Some(c.lp.basis.clone());
                            e.insert(c);
                        }
                        if improves(&memo[&(i, j)], &memo[&next]) {
                            next = (i, j);
                        }
                    }
                }
                if next == cur {
                    break;
                }
                cur = next;
            }
            if improves(&memo[&cur], &memo[&best_idx]) {
                best_idx = cur;
            }
        }
    }
    let mut best = memo[&best_idx].clone();
    let grid_objective = best.lp.objective;

    let mut status = QuantileStatus::Optimal;
    if opts.refine {
        match refine(&ev, &rule, xs, best.clone()) {
            Ok(c) => best = c,
            Err(Error::IterationLimit(_)) => status = QuantileStatus::GridFallback,
            Err(e) => return Err(e),
        }
    }

    let c = &best.lp.coef;
    Ok(QuantileSegmentedFit {
        tau,
        model: SegmentedModel::new([c[0], c[1], c[2], c[3]], best.alpha),
        objective: best.lp.objective,
        status,
        grid_objective,
        basis: best.lp.basis,
    })
}

/// Shrinking 3x3 pattern search on (a1, a2), starting at half the local gap
/// between distinct x values.
fn refine(ev: &Evaluator<'_>, rule: &SegmentRule, xs: &[f64], start: Candidate) -> Result<Candidate> {
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let gap = |a: f64| {
        let j = xs.partition_point(|&x| x <= a);
        let left = if j > 0 { xs[j - 1] } else { lo };
        let right = if j < xs.len() { xs[j] } else { hi };
        (right - left).max(f64::EPSILON)
    };
    let mut best = start;
    let mut h = [0.5 * gap(best.alpha[0]), 0.5 * gap(best.alpha[1])];
    let floor = 1e-9 * (hi - lo);
    let mut evals = 0;
    while (h[0] > floor || h[1] > floor) && evals < 2000 {
        let mut moved = false;
        let centre = best.clone();
        for d1 in [-1.0, 0.0, 1.0] {
            for d2 in [-1.0, 0.0, 1.0] {
                if d1 == 0.0 && d2 == 0.0 {
                    continue;
                }
                let a1 = centre.alpha[0] + d1 * h[0];
                let a2 = centre.alpha[1] + d2 * h[1];
                if !rule.admits(a1, a2) {
                    continue;
                }
                evals += 1;
                let c = ev.eval(a1, a2, Some(&best.lp.basis))?;
                if c.lp.objective < best.lp.objective {
                    best = c;
                    moved = true;
                }
            }
        }
        if !moved {
            h[0] *= 0.5;
            h[1] *= 0.5;
        }
    }
    Ok(best)
}

/// The default tau grid 0.10, 0.20, ..., 0.90.
pub fn default_tau_grid() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

/// Fits every tau independently; failures are kept per row.
pub fn fit_tau_grid(
    ds: &BivariateDataset,
    taus: &[f64],
    init: Option<&SegmentedModel>,
    opts: &QuantileOptions,
) -> Vec<Result<QuantileSegmentedFit>> {
    taus.par_iter()
        .map(|&t| fit_segmented_quantile(ds, t, init, opts))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileRow {
    pub tau: f64,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    /// Error message when the fit at this tau failed.
    pub error: Option<String>,
}

/// Range of a breakpoint across the tau collection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangeInterval {
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    /// tau of the row attaining the lower / upper endpoint.
    pub lower_tau: f64,
    pub upper_tau: f64,
}

/// Breakpoint intervals defined as the min/max of the per-tau estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileBreakpointTable {
    pub rows: Vec<QuantileRow>,
    pub alpha1: Option<RangeInterval>,
    pub alpha2: Option<RangeInterval>,
    /// `(tau_max - tau_min) * 100` over the successful rows, e.g. "80%".
    pub coverage_label: String,
    pub partial: bool,
}

pub fn coverage_label(tau_min: f64, tau_max: f64) -> String {
    format!("{}%", ((tau_max - tau_min) * 100.0).round() as i64)
}

pub fn quantile_breakpoint_intervals(
    taus: &[f64],
    fits: &[Result<QuantileSegmentedFit>],
) -> Result<QuantileBreakpointTable> {
    if taus.len() != fits.len() {
        return Err(Error::InvalidArgument("one fit per tau expected".into()));
    }
    let mut distinct = taus.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument("need at least two distinct tau values".into()));
    }
    let rows: Vec<QuantileRow> = taus
        .iter()
        .zip(fits)
        .map(|(&tau, f)| match f {
            Ok(f) => QuantileRow {
                tau,
                alpha1: Some(f.model.alpha[0]),
                alpha2: Some(f.model.alpha[1]),
                error: None,
            },
            Err(e) => QuantileRow {
                tau,
                alpha1: None,
                alpha2: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let interval = |pick: fn(&QuantileRow) -> Option<f64>| -> Option<RangeInterval> {
        let mut lo: Option<(f64, f64)> = None;
        let mut hi: Option<(f64, f64)> = None;
        for r in &rows {
            if let Some(v) = pick(r) {
                if lo.is_none_or(|(l, _)| v < l) {
                    lo = Some((v, r.tau));
                }
                if hi.is_none_or(|(h, _)| v > h) {
                    hi = Some((v, r.tau));
                }
            }
        }
        let ((l, lt), (h, ht)) = (lo?, hi?);
        Some(RangeInterval {
            lower: l,
            upper: h,
            width: h - l,
            lower_tau: lt,
            upper_tau: ht,
        })
    };
    let ok_taus: Vec<f64> = rows.iter().filter(|r| r.error.is_none()).map(|r| r.tau).collect();
    let label = match (
        ok_taus.iter().copied().reduce(f64::min),
        ok_taus.iter().copied().reduce(f64::max),
    ) {
        (Some(a), Some(b)) => coverage_label(a, b),
        _ => "0%".to_string(),
    };
    Ok(QuantileBreakpointTable {
        alpha1: interval(|r| r.alpha1),
        alpha2: interval(|r| r.alpha2),
        partial: ok_taus.len() < rows.len(),
        coverage_label: label,
        rows,
    })
}

/// Band between the lower and upper quantile curves, centred on the median
/// curve, on the observed design. Crossings are flagged, not corrected.
pub fn pqrm_prediction_band(
    lower: &QuantileSegmentedFit,
    center: &QuantileSegmentedFit,
    upper: &QuantileSegmentedFit,
    xs: &[f64],
) -> Result<PredictionBand> {
    if !(lower.tau < upper.tau) {
        return Err(Error::InvalidArgument(format!(
            "lower tau {} must be below upper tau {}",
            lower.tau, upper.tau
        )));
    }
    let gamma = upper.tau - lower.tau;
    PredictionBand::new(
        xs.to_vec(),
        xs.iter().map(|&x| center.model.eval(x)).collect(),
        xs.iter().map(|&x| lower.model.eval(x)).collect(),
        xs.iter().map(|&x| upper.model.eval(x)).collect(),
        gamma,
    )
}

/// Quantile levels bounding a central band of coverage `gamma`.
pub fn band_taus(gamma: f64) -> (f64, f64) {
    ((1.0 - gamma) / 2.0, (1.0 + gamma) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn check_loss_values() {
        assert_eq!(check_loss(2.0, 0.5), 1.0);
        assert_eq!(check_loss(-2.0, 0.5), 1.0);
        assert_abs_diff_eq!(check_loss(1.0, 0.9), 0.9);
        assert_abs_diff_eq!(check_loss(-1.0, 0.9), 0.1, epsilon = 1e-15);
        for tau in [0.1, 0.5, 0.77] {
            assert_eq!(check_loss(0.0, tau), 0.0);
            assert!(check_loss(-0.3, tau) > 0.0 && check_loss(0.3, tau) > 0.0);
        }
    }

    #[test]
    fn single_point_is_interpolated() {
        let x = Design::from_rows(&[[1.0]]);
        let lp = fit_quantile_linear(&x, &[4.2], 0.3).unwrap();
        assert_eq!(lp.coef, vec![4.2]);
        assert_eq!(lp.objective, 0.0);
    }

    #[test]
    fn intercept_only_median() {
        let x = Design::from_rows(&[[1.0]; 5]);
        let lp = fit_quantile_linear(&x, &[1.0, 2.0, 3.0, 4.0, 5.0], 0.5).unwrap();
        assert_abs_diff_eq!(lp.coef[0], 3.0);
        assert_abs_diff_eq!(lp.objective, 3.0);
    }

    #[test]
    fn intercept_only_upper_quantile() {
        let ys: Vec<f64> = (1..=10).map(f64::from).collect();
        let x = Design::from_rows(&[[1.0]; 10]);
        let lp = fit_quantile_linear(&x, &ys, 0.9).unwrap();
        // any b in [9, 10] is optimal; the objective is unique
        let brute = ys
            .iter()
            .map(|&b| check_loss_sum(ys.iter().map(|y| y - b), 0.9))
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(lp.objective, brute, epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_design_is_refused() {
        let x = Design::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]);
        assert!(matches!(
            fit_quantile_linear(&x, &[1.0, 2.0, 3.0], 0.5),
            Err(Error::RankDeficient)
        ));
    }

    #[test]
    fn tied_points_do_not_stall() {
        // many duplicate rows make the vertices degenerate
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for i in 0..40 {
            let x = (i % 5) as f64;
            rows.push([1.0, x]);
            ys.push(((i % 3) as f64) + 0.5 * x);
        }
        let x = Design::from_rows(&rows);
        for tau in [0.1, 0.25, 0.5, 0.9] {
            let lp = fit_quantile_linear(&x, &ys, tau).unwrap();
            let r: Vec<f64> = (0..ys.len()).map(|i| ys[i] - x.dot(i, &lp.coef)).collect();
            let (neg, nonpos) = sign_counts(&r, 1.0);
            let nt = ys.len() as f64 * tau;
            assert!(neg as f64 <= nt + 1e-9 && nt <= nonpos as f64 + 1e-9);
        }
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (5.0 * x).sin() + x).collect();
        let a = Design::segmented(&xs, 0.3, 0.6);
        let cold = fit_quantile_linear(&a, &ys, 0.3).unwrap();
        let b = Design::segmented(&xs, 0.35, 0.62);
        let warm = fit_quantile_linear_from(&b, &ys, 0.3, Some(&cold.basis)).unwrap();
        let fresh = fit_quantile_linear(&b, &ys, 0.3).unwrap();
        assert_abs_diff_eq!(warm.objective, fresh.objective, epsilon = 1e-10);
    }

    #[test]
    fn noiseless_data_recovered_at_every_tau() {
        let truth = SegmentedModel::new([2.0, 1.0, -3.0, 4.0], [6.5, 13.5]);
        let xs: Vec<f64> = (0..21).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| truth.eval(x)).collect();
        let ds = BivariateDataset::new(xs, ys).unwrap();
        for tau in [0.1, 0.5, 0.9] {
            let f = fit_segmented_quantile(&ds, tau, None, &QuantileOptions::default()).unwrap();
            assert!(f.objective < 1e-9, "tau {tau}: {}", f.objective);
            for k in 0..2 {
                assert_abs_diff_eq!(f.model.alpha[k], truth.alpha[k], epsilon = 1e-6);
            }
            for k in 0..4 {
                assert_abs_diff_eq!(f.model.beta[k], truth.beta[k], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn off_grid_breakpoints_found_by_refinement() {
        let truth = SegmentedModel::new([10.0, 0.0, -5.0, 5.0], [0.3, 0.6]);
        let xs: Vec<f64> = (0..60).map(|i| i as f64 / 59.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| truth.eval(x)).collect();
        let ds = BivariateDataset::new(xs, ys).unwrap();
        let f = fit_segmented_quantile(&ds, 0.5, None, &QuantileOptions::default()).unwrap();
        assert!(f.objective <= f.grid_objective);
        assert!(f.objective < 1e-6, "{}", f.objective);
        assert_abs_diff_eq!(f.model.alpha[0], 0.3, epsilon = 1e-5);
        assert_abs_diff_eq!(f.model.alpha[1], 0.6, epsilon = 1e-5);
    }

    #[test]
    fn extreme_tau_is_refused() {
        let xs: Vec<f64> = (0..30).map(f64::from).collect();
        let ds = BivariateDataset::new(xs.clone(), xs).unwrap();
        assert!(matches!(
            fit_segmented_quantile(&ds, 0.025, None, &QuantileOptions::default()),
            Err(Error::ExtremeTau { .. })
        ));
    }

    #[test]
    fn intervals_from_rows() {
        let mk = |tau: f64, a1: f64, a2: f64| -> Result<QuantileSegmentedFit> {
            Ok(QuantileSegmentedFit {
                tau,
                model: SegmentedModel::new([0.0; 4], [a1, a2]),
                objective: 0.0,
                status: QuantileStatus::Optimal,
                grid_objective: 0.0,
                basis: vec![],
            })
        };
        let taus = [0.1, 0.5, 0.9];
        let fits = vec![mk(0.1, 0.233, 0.452), mk(0.5, 0.264, 0.466), mk(0.9, 0.284, 0.564)];
        let t = quantile_breakpoint_intervals(&taus, &fits).unwrap();
        let a1 = t.alpha1.unwrap();
        assert_eq!((a1.lower, a1.upper), (0.233, 0.284));
        assert_eq!((a1.lower_tau, a1.upper_tau), (0.1, 0.9));
        assert_eq!(t.coverage_label, "80%");
        assert!(!t.partial);

        let fits = vec![mk(0.1, 0.2, 0.4), Err(Error::RankDeficient), mk(0.9, 0.3, 0.5)];
        let t = quantile_breakpoint_intervals(&taus, &fits).unwrap();
        assert!(t.partial);
        assert!(t.rows[1].error.is_some());
        assert_abs_diff_eq!(t.alpha2.unwrap().width, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn single_tau_is_refused() {
        assert!(quantile_breakpoint_intervals(&[0.5], &[Err(Error::RankDeficient)]).is_err());
    }

    #[test]
    fn default_grid_is_deciles() {
        assert_eq!(
            default_tau_grid(),
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
        );
    }
}
