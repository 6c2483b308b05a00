use serde::Serialize;

use crate::error::{Error, Result};

/// Lower/upper envelope of a prediction band sampled on a set of x values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionBand {
    pub grid_x: Vec<f64>,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub gamma: f64,
    /// Surface area in data units, once computed.
    pub area: Option<f64>,
    /// Grid indices where the envelopes cross (lower > upper).
    pub crossings: Vec<usize>,
}

impl PredictionBand {
    pub fn new(
        grid_x: Vec<f64>,
        center: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let n = grid_x.len();
        if center.len() != n || lower.len() != n || upper.len() != n {
            return Err(Error::InvalidArgument("band vectors differ in length".into()));
        }
        if grid_x.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("band grid must be sorted".into()));
        }
        let crossings = (0..n).filter(|&i| lower[i] > upper[i]).collect();
        Ok(Self {
            grid_x,
            center,
            lower,
            upper,
            gamma,
            area: None,
            crossings,
        })
    }

    pub fn len(&self) -> usize {
        self.grid_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid_x.is_empty()
    }

    /// Fraction of `(x, y)` points inside the band, with envelopes linearly
    /// interpolated between grid points. Points outside the x-range are skipped.
    pub fn coverage(&self, xs: &[f64], ys: &[f64]) -> f64 {
        let mut inside = 0usize;
        let mut total = 0usize;
        for (&x, &y) in xs.iter().zip(ys) {
            if let Some((lo, hi)) = self.envelope_at(x) {
                total += 1;
                if y >= lo && y <= hi {
                    inside += 1;
                }
            }
        }
        inside as f64 / total.max(1) as f64
    }

    /// Interpolated (lower, upper) at `x`; ties in the grid are averaged.
    pub fn envelope_at(&self, x: f64) -> Option<(f64, f64)> {
        let knots = self.knots();
        interpolate_knots(&knots, x)
    }

    /// Grid collapsed to distinct x values, averaging tied envelopes.
    pub(crate) fn knots(&self) -> Vec<(f64, f64, f64)> {
        let mut out: Vec<(f64, f64, f64)> = Vec::with_capacity(self.len());
        let mut i = 0;
        while i < self.len() {
            let x = self.grid_x[i];
            let mut j = i;
            let (mut lo, mut hi) = (0.0, 0.0);
            while j < self.len() && self.grid_x[j] == x {
                lo += self.lower[j];
                hi += self.upper[j];
                j += 1;
            }
            let m = (j - i) as f64;
            out.push((x, lo / m, hi / m));
            i = j;
        }
        out
    }
}

pub(crate) fn interpolate_knots(knots: &[(f64, f64, f64)], x: f64) -> Option<(f64, f64)> {
    let first = knots.first()?;
    let last = knots.last()?;
    if x < first.0 || x > last.0 {
        return None;
    }
    let j = knots.partition_point(|k| k.0 < x);
    if j < knots.len() && knots[j].0 == x {
        return Some((knots[j].1, knots[j].2));
    }
    let (a, b) = (knots[j - 1], knots[j]);
    let t = (x - a.0) / (b.0 - a.0);
    Some((a.1 + t * (b.1 - a.1), a.2 + t * (b.2 - a.2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_crossings() {
        let b = PredictionBand::new(
            vec![0.0, 1.0, 2.0],
            vec![0.0; 3],
            vec![-1.0, 0.5, -1.0],
            vec![1.0, 0.0, 1.0],
            0.8,
        )
        .unwrap();
        assert_eq!(b.crossings, vec![1]);
    }

    #[test]
    fn envelope_interpolates_and_averages_ties() {
        let b = PredictionBand::new(
            vec![0.0, 1.0, 1.0, 2.0],
            vec![0.0; 4],
            vec![0.0, -2.0, 0.0, 0.0],
            vec![1.0, 2.0, 4.0, 1.0],
            0.8,
        )
        .unwrap();
        assert_eq!(b.envelope_at(1.0), Some((-1.0, 3.0)));
        assert_eq!(b.envelope_at(0.5), Some((-0.5, 2.0)));
        assert_eq!(b.envelope_at(2.5), None);
    }

    #[test]
    fn coverage_counts_points_inside() {
        let b = PredictionBand::new(vec![0.0, 1.0], vec![0.0; 2], vec![-1.0; 2], vec![1.0; 2], 0.8)
            .unwrap();
        let c = b.coverage(&[0.5, 0.5, 0.5, 0.5], &[0.0, 0.9, 1.1, -3.0]);
        assert_eq!(c, 0.5);
    }
}
