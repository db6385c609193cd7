//! Correlation detection with the thresholded row functional: reject
//! `H₀: Σ = I` when `l_r(Σ̃_τ) ≥ s`.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::estimators::{self, lr_of, ThresholdSpec};
use crate::matgen::{make_model, Centering, GaussianSampler, ModelKind, SampleMatrix};
use crate::rates::{self, Envelope, RateQuery};
use crate::rng::RngSeed;
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionConfig {
    pub r: f64,
    pub q: f64,
    pub radius: f64,
    pub delta: f64,
    /// Deviation constant `C` of the envelope.
    pub c: f64,
    pub spec: ThresholdSpec,
}

impl DetectionConfig {
    fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.q >= 0.0 && self.q < self.r) {
            return invalid(format!("need 0 ≤ q < r, got q = {}, r = {}", self.q, self.r));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return invalid(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.radius > 0.0) {
            return invalid(format!("R must be positive, got {}", self.radius));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub l_r_value: f64,
    pub cutoff_s: f64,
    pub reject: bool,
    pub tau: f64,
    pub envelope: Option<Envelope>,
}

/// `(s₀, s₁, κ̄)` for signal strength `kappa`.
pub fn envelope(cfg: &DetectionConfig, n: usize, p: usize, kappa: f64) -> Result<Envelope> {
    cfg.validate()?;
    if n < 2 || p < 2 {
        return invalid(format!("need n, p ≥ 2, got n = {n}, p = {p}"));
    }
    let q = RateQuery { n, p, q: cfg.q, radius: cfg.radius, r: cfg.r, ..RateQuery::default() };
    let env = rates::envelope(&q, cfg.c, cfg.delta, kappa)?;
    if !env.separates() {
        log::info!("no valid separation: s0 = {:.4} ≥ s1 = {:.4} (kappa below kappa_bar = {:.4})", env.s0, env.s1, env.kappa_bar);
    }
    Ok(env)
}

/// `(l_r(Σ̂), l_r(Σ̃_τ), τ)` for one sample.
pub fn lr_pair(x: &SampleMatrix, r: f64, spec: &ThresholdSpec) -> Result<(f64, f64, f64)> {
    let tau = estimators::resolve_threshold(spec, x)?.tau;
    let s = estimators::empirical_cov_array(x.view(), x.centering())?;
    let raw = lr_of(s.view(), r);
    let t = estimators::threshold_array(&s, tau)?;
    Ok((raw, estimators::lr_functional(&t, r)?.value, tau))
}

pub fn detect_test(x: &SampleMatrix, r: f64, spec: &ThresholdSpec, cutoff_s: f64) -> Result<DetectionReport> {
    if !(cutoff_s > 0.0) {
        return invalid(format!("cutoff must be positive, got {cutoff_s}"));
    }
    let (_, value, tau) = lr_pair(x, r, spec)?;
    Ok(DetectionReport { l_r_value: value, cutoff_s, reject: value >= cutoff_s, tau, envelope: None })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub cutoff: f64,
    /// Simulated null values in replicate order.
    pub null_values: Vec<f64>,
}

/// Empirical `(1 − alpha)`-quantile of `l_r(Σ̃_τ)` under `N(0, I_p)`.
/// Replicate `i` uses stream `i` of `seed`, so the result does not depend on
/// the thread count.
pub fn calibrate_cutoff(null_draws: usize, p: usize, n: usize, r: f64, spec: &ThresholdSpec, alpha: f64, centering: Centering, seed: RngSeed) -> Result<Calibration> {
    if null_draws < 100 {
        return invalid(format!("need at least 100 null draws, got {null_draws}"));
    }
    if !(0.0..1.0).contains(&alpha) {
        return invalid(format!("alpha must lie in [0, 1), got {alpha}"));
    }
    let sampler = GaussianSampler::new(&make_model(ModelKind::Identity, p)?)?;
    let null_values = (0..null_draws as u64)
        .into_par_iter()
        .map(|i| {
            let x = sampler.sample(n, None, seed.with_stream(i))?.with_centering(centering);
            Ok(lr_pair(&x, r, spec)?.1)
        })
        .collect::<Result<Vec<f64>>>()?;
    let cutoff = stats::empirical_quantile(&null_values, 1.0 - alpha);
    Ok(Calibration { cutoff, null_values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_cutoff_never_rejects() {
        let m = make_model(ModelKind::m2(), 10).unwrap();
        let x = crate::matgen::sample_gaussian(&m, 20, None, RngSeed::new(1)).unwrap();
        let rep = detect_test(&x, 1.0, &ThresholdSpec::explicit(0.0), f64::INFINITY).unwrap();
        assert!(!rep.reject);
        assert!(detect_test(&x, 1.0, &ThresholdSpec::explicit(0.0), 0.0).is_err());
    }

    #[test]
    fn alpha_zero_is_maximum() {
        let cal = calibrate_cutoff(100, 10, 20, 1.0, &ThresholdSpec::practical(1.5), 0.0, Centering::KnownZeroMean, RngSeed::new(4)).unwrap();
        let max = cal.null_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(cal.cutoff, max);
    }

    #[test]
    fn envelope_validates() {
        let cfg = DetectionConfig { r: 1.0, q: 1.0, radius: 1.0, delta: 0.05, c: 1.0, spec: ThresholdSpec::explicit(0.1) };
        assert!(envelope(&cfg, 100, 500, 0.5).is_err());
        let cfg = DetectionConfig { q: 0.0, ..cfg };
        let env = envelope(&cfg, 100, 500, 0.9).unwrap();
        assert!(env.separates());
    }
}
