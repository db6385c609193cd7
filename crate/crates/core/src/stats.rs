//! Distribution helpers and Monte Carlo summaries.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// Upper tail `P(Z > z)` of the standard normal.
pub fn normal_sf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    std_normal().sf(z)
}

pub fn normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    std_normal().cdf(z)
}

/// Two-sided p-value `P(|T_df| > |t|)`.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() || !(df > 0.0) {
        return f64::NAN;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Running sums for a mean and its Monte Carlo standard error.
///
/// Merging is a pair of additions, so the result of a parallel reduction does
/// not depend on how work was split as long as partial sums are combined in a
/// fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(mut self, other: Moments) -> Moments {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self
    }

    pub fn from_slice(xs: &[f64]) -> Moments {
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        m
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        self.sum / self.count as f64
    }

    /// Sample variance with divisor `count - 1`.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn se(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Empirical `level`-quantile as the order statistic of index
/// `ceil(level·N) − 1` (clamped), so `level = 1` yields the maximum.
pub fn empirical_quantile(values: &[f64], level: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let idx = ((level * n as f64).ceil() as isize - 1).clamp(0, n as isize - 1) as usize;
    sorted[idx]
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_tails() {
        assert_abs_diff_eq!(normal_sf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_sf(1.959963984540054), 0.025, epsilon = 1e-10);
        assert_abs_diff_eq!(normal_cdf(-1.0) + normal_sf(-1.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn t_p_values() {
        assert_abs_diff_eq!(t_two_sided(0.0, 5.0), 1.0, epsilon = 1e-12);
        // qt(0.975, 10) = 2.228138851986274
        assert_abs_diff_eq!(t_two_sided(2.228138851986274, 10.0), 0.05, epsilon = 1e-10);
    }

    #[test]
    fn moments_match_direct() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let m = Moments::from_slice(&xs);
        assert_abs_diff_eq!(m.mean(), 3.5);
        assert_abs_diff_eq!(m.variance(), 7.0, epsilon = 1e-12);
        let split = Moments::from_slice(&xs[..1]).merge(Moments::from_slice(&xs[1..]));
        assert_eq!(split, m);
    }

    #[test]
    fn quantile_edges() {
        let v = [3.0, 1.0, 2.0, 5.0, 4.0];
        assert_eq!(empirical_quantile(&v, 1.0), 5.0);
        assert_eq!(empirical_quantile(&v, 0.0), 1.0);
        assert_eq!(empirical_quantile(&v, 0.5), 3.0);
    }

    #[test]
    fn slope_of_line() {
        let x = [1.0, 2.0, 3.0];
        let y = [2.0, 0.0, -2.0];
        assert_abs_diff_eq!(ols_slope(&x, &y), -2.0, epsilon = 1e-12);
    }
}
