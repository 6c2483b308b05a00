//! Synthetic data from a known segmented truth, and brute-force oracles for
//! the least-squares and check-loss solvers.
//!
//! The oracles share no code with the solvers they check.

use serde::{Deserialize, Serialize};

use crate::dataset::BivariateDataset;
use crate::error::{Error, Result};
use crate::quantile::check_loss;
use crate::rng::RngSpec;
use crate::segmented::SegmentedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XDesign {
    /// Independent uniform draws on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// `n` evenly spaced points from `lo` to `hi` inclusive.
    Equispaced { lo: f64, hi: f64 },
    Fixed { xs: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    Gaussian { sigma: f64 },
    /// Standard deviation `sigma0 * (1 + c * x)`.
    Wedge { sigma0: f64, c: f64 },
}

impl Noise {
    pub fn sd_at(&self, x: f64) -> f64 {
        match *self {
            Noise::Gaussian { sigma } => sigma,
            Noise::Wedge { sigma0, c } => sigma0 * (1.0 + c * x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub model: SegmentedModel,
    pub n: usize,
    pub design: XDesign,
    pub noise: Noise,
    pub rng: RngSpec,
}

const X_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

impl SyntheticSpec {
    fn x_bounds(&self) -> (f64, f64) {
        match &self.design {
            XDesign::Uniform { lo, hi } | XDesign::Equispaced { lo, hi } => (*lo, *hi),
            XDesign::Fixed { xs } => (
                xs.iter().copied().fold(f64::INFINITY, f64::min),
                xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n < 2 {
            return bad(format!("need n >= 2, got {}", self.n));
        }
        if let XDesign::Fixed { xs } = &self.design {
            if xs.len() != self.n {
                return bad(format!("fixed design has {} points, n = {}", xs.len(), self.n));
            }
            if xs.iter().any(|x| !x.is_finite()) {
                return bad("fixed design contains non-finite x".into());
            }
        }
        let (lo, hi) = self.x_bounds();
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!("x range [{lo}, {hi}] is empty"));
        }
        let [a1, a2] = self.model.alpha;
        if !(lo <= a1 && a1 < a2 && a2 <= hi) {
            return bad(format!("breakpoints ({a1}, {a2}) must be ordered inside [{lo}, {hi}]"));
        }
        let (s_lo, s_hi) = (self.noise.sd_at(lo), self.noise.sd_at(hi));
        if !(s_lo >= 0.0 && s_hi >= 0.0) || !s_lo.is_finite() || !s_hi.is_finite() {
            return bad("noise standard deviation must be non-negative over the design".into());
        }
        Ok(())
    }
}

/// `y_i = truth(x_i) + noise_i`. x values come from stream 0 of the seed,
/// noise from stream 1; Gaussian draws use Box-Muller on 53-bit uniforms.
pub fn generate(spec: &SyntheticSpec) -> Result<BivariateDataset> {
    spec.validate()?;
    let n = spec.n;
    let xs: Vec<f64> = match &spec.design {
        XDesign::Uniform { lo, hi } => {
            let mut s = spec.rng.stream(X_STREAM);
            (0..n).map(|_| lo + (hi - lo) * s.uniform()).collect()
        }
        XDesign::Equispaced { lo, hi } => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
        XDesign::Fixed { xs } => xs.clone(),
    };
    let mut s = spec.rng.stream(NOISE_STREAM);
    let ys = xs
        .iter()
        .map(|&x| {
            let e = s.standard_normal();
            spec.model.eval(x) + spec.noise.sd_at(x) * e
        })
        .collect();
    BivariateDataset::new(xs, ys)
}

/// Solves the square system by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let p = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..p {
            let f = a[r][col] / a[col][col];
            for c in col..p {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; p];
    for r in (0..p).rev() {
        let s: f64 = (r + 1..p).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Least squares from the normal equations `X'X b = X'y`.
pub fn ols_oracle(design: &[Vec<f64>], ys: &[f64]) -> Result<Vec<f64>> {
    let p = design.first().map_or(0, Vec::len);
    if p == 0 || design.len() != ys.len() || design.len() < p {
        return Err(Error::RankDeficient);
    }
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, &y) in design.iter().zip(ys) {
        for j in 0..p {
            xty[j] += row[j] * y;
            for k in 0..p {
                xtx[j][k] += row[j] * row[k];
            }
        }
    }
    gauss_solve(xtx, xty).ok_or(Error::RankDeficient)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub objective: f64,
    pub coef: Vec<f64>,
    pub subset: Vec<usize>,
}

/// Minimum check loss over every exact fit through `p` observations.
/// Cost grows as C(n, p); meant for n <= 8.
pub fn quantile_oracle(design: &[Vec<f64>], ys: &[f64], tau: f64) -> Result<OracleSolution> {
    let n = design.len();
    let p = design.first().map_or(0, Vec::len);
    if p == 0 || n != ys.len() || n < p {
        return Err(Error::RankDeficient);
    }
    let mut best: Option<OracleSolution> = None;
    let mut subset: Vec<usize> = (0..p).collect();
    loop {
        let a = subset.iter().map(|&i| design[i].clone()).collect();
        let b = subset.iter().map(|&i| ys[i]).collect();
        if let Some(coef) = gauss_solve(a, b) {
            let objective: f64 = design
                .iter()
                .zip(ys)
                .map(|(row, &y)| {
                    let fit: f64 = row.iter().zip(&coef).map(|(x, c)| x * c).sum();
                    check_loss(y - fit, tau)
                })
                .sum();
            if best.as_ref().is_none_or(|b| objective < b.objective) {
                best = Some(OracleSolution {
                    objective,
                    coef,
                    subset: subset.clone(),
                });
            }
        }
        // next combination in lexicographic order
        let mut i = p;
        loop {
            if i == 0 {
                return best.ok_or(Error::RankDeficient);
            }
            i -= 1;
            if subset[i] < n - p + i {
                break;
            }
        }
        subset[i] += 1;
        for j in i + 1..p {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec(noise: Noise, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            model: SegmentedModel::new([10.0, 0.0, -5.0, 5.0], [0.3, 0.6]),
            n: 120,
            design: XDesign::Uniform { lo: 0.0, hi: 1.0 },
            noise,
            rng: RngSpec::new(seed),
        }
    }

    #[test]
    fn zero_noise_is_the_truth() {
        let s = spec(Noise::Gaussian { sigma: 0.0 }, 1);
        let ds = generate(&s).unwrap();
        for (&x, &y) in ds.xs().iter().zip(ds.ys()) {
            assert_eq!(y, s.model.eval(x));
        }
    }

    #[test]
    fn same_seed_same_data() {
        let s = spec(Noise::Gaussian { sigma: 0.5 }, 9);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = spec(Noise::Gaussian { sigma: 0.5 }, 10);
        assert_ne!(generate(&s).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn equispaced_and_fixed_designs() {
        let mut s = spec(Noise::Gaussian { sigma: 0.0 }, 1);
        s.n = 5;
        s.design = XDesign::Equispaced { lo: 0.0, hi: 1.0 };
        assert_eq!(generate(&s).unwrap().xs(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        s.design = XDesign::Fixed {
            xs: vec![1.0, 0.0, 0.5, 0.2, 0.9],
        };
        assert_eq!(generate(&s).unwrap().xs(), &[0.0, 0.2, 0.5, 0.9, 1.0]);
    }

    #[test]
    fn invalid_specs_are_refused() {
        let mut s = spec(Noise::Gaussian { sigma: -1.0 }, 1);
        assert!(generate(&s).is_err());
        s.noise = Noise::Gaussian { sigma: 1.0 };
        s.model.alpha = [0.7, 0.6];
        assert!(generate(&s).is_err());
        s.model.alpha = [0.3, 1.6];
        assert!(generate(&s).is_err());
    }

    #[test]
    fn two_point_line() {
        let b = ols_oracle(&[vec![1.0, 0.0], vec![1.0, 2.0]], &[1.0, 5.0]).unwrap();
        assert_abs_diff_eq!(b[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b[1], 2.0, epsilon = 1e-14);
        assert!(ols_oracle(&[vec![1.0, 1.0], vec![2.0, 2.0]], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn median_of_five() {
        let design = vec![vec![1.0]; 5];
        let sol = quantile_oracle(&design, &[1.0, 2.0, 3.0, 4.0, 5.0], 0.5).unwrap();
        assert_eq!(sol.coef, vec![3.0]);
        // 0.5 * (2 + 1 + 0 + 1 + 2)
        assert_eq!(sol.objective, 3.0);
    }

    #[test]
    fn oracle_visits_every_subset() {
        // the optimum uses the last two rows only
        let design = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 3.0]];
        let ys = [100.0, -100.0, 2.0, 3.0];
        let sol = quantile_oracle(&design, &ys, 0.5).unwrap();
        let brute = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
            .iter()
            .map(|&(i, j)| {
                let slope = (ys[j] - ys[i]) / (j as f64 - i as f64);
                let icpt = ys[i] - slope * i as f64;
                (0..4).map(|k| check_loss(ys[k] - icpt - slope * k as f64, 0.5)).sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(sol.objective, brute);
    }
}
