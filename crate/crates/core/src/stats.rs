//! Small statistical helpers shared by the fitters.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Quantile of Student's t with `df` degrees of freedom.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("degrees of freedom must be positive")
        .inverse_cdf(p)
}

/// Two-sided p-value of a t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("degrees of freedom must be positive");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with the n - 1 denominator.
pub fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Empirical quantile of sorted data, linear between closest ranks with
/// rank `q (n - 1) + 1` (1-based).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn t_quantile_matches_tables() {
        assert_abs_diff_eq!(t_quantile(0.975, 1.0), 12.7062, epsilon = 1e-4);
        assert_abs_diff_eq!(t_quantile(0.975, 24.0), 2.0639, epsilon = 1e-4);
        assert_abs_diff_eq!(t_quantile(0.90, 24.0), 1.3178, epsilon = 1e-4);
    }

    #[test]
    fn quantile_interpolates_between_ranks() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_abs_diff_eq!(quantile_sorted(&v, 0.1), 1.4, epsilon = 1e-12);
    }

    #[test]
    fn two_sided_p_is_symmetric() {
        assert_abs_diff_eq!(t_two_sided_p(0.0, 10.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t_two_sided_p(2.0, 10.0), t_two_sided_p(-2.0, 10.0));
    }
}
