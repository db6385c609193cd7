//! Closed-form minimax rates, thresholds and detection boundaries.
//!
//! `log` is the natural logarithm throughout. Branches of the form `R^{a/q}`
//! are `+∞` at `q = 0`, so they never bind there.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateQuery {
    pub n: usize,
    pub p: usize,
    /// Sparsity index.
    pub q: f64,
    /// Sparsity radius `R`.
    pub radius: f64,
    /// Row-functional exponent.
    pub r: f64,
    pub gamma: f64,
    pub c0: f64,
    /// Tuning constant `ν` of the detection lower bound.
    pub nu_const: f64,
}

impl Default for RateQuery {
    fn default() -> Self {
        RateQuery { n: 100, p: 500, q: 0.0, radius: 1.0, r: 1.0, gamma: 9.0, c0: 4.0, nu_const: 1.0 }
    }
}

impl RateQuery {
    fn log_p_over_n(&self) -> f64 {
        (self.p as f64).ln() / self.n as f64
    }

    fn check_quad(&self) -> Result<()> {
        if !(0.0..2.0).contains(&self.q) {
            return invalid(format!("q must lie in [0, 2), got {}", self.q));
        }
        self.check_common()
    }

    fn check_lr(&self) -> Result<()> {
        if !(self.r > 0.0) || !(self.q >= 0.0 && self.q < self.r) {
            return invalid(format!("need r > 0 and 0 ≤ q < r, got r = {}, q = {}", self.r, self.q));
        }
        self.check_common()
    }

    fn check_common(&self) -> Result<()> {
        if self.n < 1 || self.p < 2 {
            return invalid(format!("need n ≥ 1 and p ≥ 2, got n = {}, p = {}", self.n, self.p));
        }
        if !(self.radius >= 0.0) {
            return invalid(format!("R must be nonnegative, got {}", self.radius));
        }
        Ok(())
    }

    /// `log((p−1)/(R² n^q) + 1) / (2n)`.
    fn lower_log_term(&self) -> f64 {
        let nq = (self.n as f64).powf(self.q);
        (((self.p as f64) - 1.0) / (self.radius * self.radius * nq) + 1.0).ln() / (2.0 * self.n as f64)
    }

    /// Whether `R² < (p−1) n^{−q} / 2`, the regime of the quadratic lower bound.
    pub fn in_lower_bound_regime(&self) -> bool {
        self.radius * self.radius < (self.p as f64 - 1.0) * (self.n as f64).powf(-self.q) / 2.0
    }
}

fn cap_power(radius: f64, num: f64, q: f64) -> f64 {
    if q == 0.0 {
        f64::INFINITY
    } else {
        radius.powf(num / q)
    }
}

/// Upper rate for the quadratic functional: `R²/n ∨ R²(log p/n)^{2−q}`.
pub fn psi_quad(qr: &RateQuery) -> Result<f64> {
    qr.check_quad()?;
    let r2 = qr.radius * qr.radius;
    Ok((r2 / qr.n as f64).max(r2 * qr.log_p_over_n().powf(2.0 - qr.q)))
}

/// Lower rate for the quadratic functional:
/// `R²/n ∨ {R²(log((p−1)/(R²n^q)+1)/(2n))^{2−q} ∧ R^{4/q} ∧ 1}`.
pub fn phi_quad(qr: &RateQuery) -> Result<f64> {
    qr.check_quad()?;
    if qr.radius == 0.0 {
        return Ok(0.0);
    }
    if !qr.in_lower_bound_regime() {
        log::warn!("R² ≥ (p−1)n^(−q)/2: outside the lower-bound regime");
    }
    let r2 = qr.radius * qr.radius;
    let inner = (r2 * qr.lower_log_term().powf(2.0 - qr.q)).min(cap_power(qr.radius, 4.0, qr.q)).min(1.0);
    Ok((r2 / qr.n as f64).max(inner))
}

/// Upper rate for the `l_r` functional, with its elbow at `q = max(r−1, 0)`.
pub fn psi_lr(qr: &RateQuery) -> Result<f64> {
    qr.check_lr()?;
    let r2 = qr.radius * qr.radius;
    Ok(if qr.q < (qr.r - 1.0).max(0.0) {
        r2 * qr.log_p_over_n()
    } else {
        r2 * (qr.gamma * qr.log_p_over_n()).powf(qr.r - qr.q)
    })
}

/// Lower rate for the `l_r` functional:
/// `R² log p/n ∨ {R²(log((p−1)/(R²n^q)+1)/(2n))^{r−q} ∧ R^{2r/q} ∧ 1}`.
pub fn phi_lr(qr: &RateQuery) -> Result<f64> {
    qr.check_lr()?;
    if qr.radius == 0.0 {
        return Ok(0.0);
    }
    let r2 = qr.radius * qr.radius;
    let inner = (r2 * qr.lower_log_term().powf(qr.r - qr.q)).min(cap_power(qr.radius, 2.0 * qr.r, qr.q)).min(1.0);
    Ok((r2 * qr.log_p_over_n()).max(inner))
}

/// `((2 log p + log(4/δ))/n)`, the deviation scale of the detection test.
fn detection_scale(n: usize, p: usize, delta: f64) -> f64 {
    (2.0 * (p as f64).ln() + (4.0 / delta).ln()) / n as f64
}

/// `κ̄ = 2 C R^{1/r} ((2 log p + log(4/δ))/n)^{(r−q)/(2r)}`.
pub fn kappa_bar(qr: &RateQuery, c: f64, delta: f64) -> Result<f64> {
    qr.check_lr()?;
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must lie in (0, 1), got {delta}"));
    }
    let e = (qr.r - qr.q) / (2.0 * qr.r);
    Ok(2.0 * c * qr.radius.powf(1.0 / qr.r) * detection_scale(qr.n, qr.p, delta).powf(e))
}

/// `κ̲ = R^{1/r} (log(νp/(R² n^q))/(2n))^{(r−q)/(2r)}`; requires `νp > R²n^q`.
pub fn kappa_lower(qr: &RateQuery) -> Result<f64> {
    qr.check_lr()?;
    let r2nq = qr.radius * qr.radius * (qr.n as f64).powf(qr.q);
    let arg = qr.nu_const * qr.p as f64 / r2nq;
    if !(arg > 1.0) || !(qr.nu_const > 0.0) {
        return invalid(format!("kappa_lower needs ν p > R² n^q (ratio {arg})"));
    }
    let e = (qr.r - qr.q) / (2.0 * qr.r);
    Ok(qr.radius.powf(1.0 / qr.r) * (arg.ln() / (2.0 * qr.n as f64)).powf(e))
}

/// Detection cutoffs `(s₀, s₁)` and `κ̄` for signal strength `kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub s0: f64,
    pub s1: f64,
    pub kappa_bar: f64,
}

impl Envelope {
    /// `s₀ < s₁`: some cutoff separates the hypotheses.
    pub fn separates(&self) -> bool {
        self.s0 < self.s1
    }
}

pub fn envelope(qr: &RateQuery, c: f64, delta: f64, kappa: f64) -> Result<Envelope> {
    let kappa_bar = kappa_bar(qr, c, delta)?;
    let dev = c * qr.radius * detection_scale(qr.n, qr.p, delta).powf((qr.r - qr.q) / 2.0);
    Ok(Envelope { s0: 1.0 + dev, s1: 1.0 + kappa.powf(qr.r) - dev, kappa_bar })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn psi_quad_example() {
        let q = RateQuery::default();
        assert_abs_diff_eq!(psi_quad(&q).unwrap(), 0.01, epsilon = 1e-15);
        let lp = 500f64.ln() / 100.0;
        assert!(lp * lp < 0.01);
        assert_eq!(psi_quad(&RateQuery { radius: 0.0, ..q }).unwrap(), 0.0);
        assert!(psi_quad(&RateQuery { q: 2.0, ..q }).is_err());
    }

    #[test]
    fn psi_lr_example() {
        let q = RateQuery { q: 0.5, ..RateQuery::default() };
        assert_abs_diff_eq!(psi_lr(&q).unwrap(), 0.747_9, epsilon = 5e-5);
        assert_eq!(psi_lr(&RateQuery { radius: 0.0, ..q }).unwrap(), 0.0);
    }

    #[test]
    fn psi_lr_elbow_at_r_minus_one() {
        let base = RateQuery { r: 2.0, gamma: 1.0, ..RateQuery::default() };
        let lp = 500f64.ln() / 100.0;
        assert_abs_diff_eq!(psi_lr(&RateQuery { q: 0.99, ..base }).unwrap(), lp, epsilon = 1e-15);
        assert_abs_diff_eq!(psi_lr(&RateQuery { q: 1.0, ..base }).unwrap(), lp, epsilon = 1e-15);
        assert_abs_diff_eq!(psi_lr(&RateQuery { q: 1.5, ..base }).unwrap(), lp.powf(0.5), epsilon = 1e-15);
    }

    #[test]
    fn kappa_bar_example() {
        let q = RateQuery::default();
        let k = kappa_bar(&q, 1.0, 0.05).unwrap();
        assert_abs_diff_eq!(k, 0.820, epsilon = 5e-4);
        let env = envelope(&q, 1.0, 0.05, k).unwrap();
        assert_abs_diff_eq!(env.s1 - env.s0, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn kappa_lower_r1_q0() {
        let q = RateQuery { radius: 1.5, nu_const: 2.0, ..RateQuery::default() };
        let expect = 1.5 * ((2.0 * 500.0 / 2.25f64).ln() / 200.0).sqrt();
        assert_abs_diff_eq!(kappa_lower(&q).unwrap(), expect, epsilon = 1e-14);
        assert!(kappa_lower(&RateQuery { nu_const: 1e-6, ..q }).is_err());
    }

    #[test]
    fn phi_quad_zero_radius() {
        assert_eq!(phi_quad(&RateQuery { radius: 0.0, ..RateQuery::default() }).unwrap(), 0.0);
        assert_eq!(phi_lr(&RateQuery { radius: 0.0, ..RateQuery::default() }).unwrap(), 0.0);
    }
}
