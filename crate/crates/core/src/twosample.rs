//! High-dimensional two-sample mean tests.
//!
//! Wald-type tests standardise an unbiased estimate of `‖μ₁ − μ₂‖²` by an
//! estimate of its null standard deviation. The `New*` variants replace the
//! non-thresholded `tr(Σ²)` estimates in that standard deviation by
//! thresholded ones. The marginal methods run `p` coordinatewise t-tests.

use std::fmt;

use ndarray::{Array1, Array2, Axis};

use crate::error::{invalid, Error, Result};
use crate::estimators::{self, FunctionalEstimate, FunctionalKind, ThresholdSpec};
use crate::linalg;
use crate::matgen::{Centering, SampleMatrix};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TwoSampleMethod {
    Bs,
    NewBs,
    Cq,
    NewCq,
    Bonferroni,
    Bh,
}

impl TwoSampleMethod {
    pub const ALL: [TwoSampleMethod; 6] = [
        TwoSampleMethod::Bs,
        TwoSampleMethod::NewBs,
        TwoSampleMethod::Cq,
        TwoSampleMethod::NewCq,
        TwoSampleMethod::Bonferroni,
        TwoSampleMethod::Bh,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "bs" => TwoSampleMethod::Bs,
            "newbs" => TwoSampleMethod::NewBs,
            "cq" => TwoSampleMethod::Cq,
            "newcq" => TwoSampleMethod::NewCq,
            "bonf" | "bonferroni" => TwoSampleMethod::Bonferroni,
            "bh" => TwoSampleMethod::Bh,
            _ => return Err(Error::Config(format!("unknown two-sample method `{s}`"))),
        })
    }
}

impl fmt::Display for TwoSampleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TwoSampleMethod::Bs => "BS",
            TwoSampleMethod::NewBs => "newBS",
            TwoSampleMethod::Cq => "CQ",
            TwoSampleMethod::NewCq => "newCQ",
            TwoSampleMethod::Bonferroni => "Bonf",
            TwoSampleMethod::Bh => "BH",
        })
    }
}

/// Rejection region of the Wald-type tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sidedness {
    /// Reject for large positive `z`.
    Upper,
    /// Reject for large `|z|`.
    #[default]
    TwoSided,
}

impl Sidedness {
    pub fn p_value(&self, z: f64) -> f64 {
        match self {
            Sidedness::Upper => stats::normal_sf(z),
            Sidedness::TwoSided => (2.0 * stats::normal_sf(z.abs())).min(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginalVariance {
    #[default]
    Pooled,
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldOptions {
    pub alpha: f64,
    pub sidedness: Sidedness,
}

impl Default for WaldOptions {
    fn default() -> Self {
        WaldOptions { alpha: 0.05, sidedness: Sidedness::TwoSided }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoSampleReport {
    pub method: TwoSampleMethod,
    pub statistic: f64,
    /// Standardised statistic, Wald-type methods only.
    pub z: Option<f64>,
    /// Estimated null variance of the statistic, Wald-type methods only.
    pub null_variance: Option<f64>,
    pub p_value: f64,
    pub reject: bool,
    pub tau: Option<f64>,
    pub functionals: Vec<FunctionalEstimate>,
}

fn check_pair(x1: &SampleMatrix, x2: &SampleMatrix, min_n: usize) -> Result<()> {
    if x1.p() != x2.p() {
        return Err(Error::DimensionMismatch(format!("samples have p = {} and p = {}", x1.p(), x2.p())));
    }
    if x1.n() < min_n || x2.n() < min_n {
        return invalid(format!("need at least {min_n} observations per sample, got {} and {}", x1.n(), x2.n()));
    }
    Ok(())
}

fn wald(method: TwoSampleMethod, stat: f64, var: f64, opts: &WaldOptions, tau: Option<f64>, functionals: Vec<FunctionalEstimate>) -> Result<TwoSampleReport> {
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Numerical(format!("{method}: estimated null variance {var} is not positive")));
    }
    let z = stat / var.sqrt();
    let p_value = opts.sidedness.p_value(z);
    Ok(TwoSampleReport { method, statistic: stat, z: Some(z), null_variance: Some(var), p_value, reject: p_value < opts.alpha, tau, functionals })
}

fn fe(value: f64, kind: FunctionalKind, tau: Option<f64>, n: usize, p: usize, digest: &str) -> FunctionalEstimate {
    FunctionalEstimate { value, kind, tau, n, p, inputs_digest: digest.to_string() }
}

/// Quantities shared by all methods, computed once per pair of samples.
pub struct TwoSampleWork<'a> {
    x1: &'a SampleMatrix,
    x2: &'a SampleMatrix,
    diff: Array1<f64>,
    /// Within-group scatter `Σ_g Σ_k (X_gk − X̄_g)(X_gk − X̄_g)ᵀ`.
    scatter: Array2<f64>,
    s1: Array2<f64>,
    s2: Array2<f64>,
    u1: Array2<f64>,
    u2: Array2<f64>,
    /// Group-centered rows stacked, the sample the pooled threshold is tuned on.
    pooled: SampleMatrix,
}

impl<'a> TwoSampleWork<'a> {
    pub fn new(x1: &'a SampleMatrix, x2: &'a SampleMatrix) -> Result<Self> {
        check_pair(x1, x2, 4)?;
        let c1 = x1.clone().with_centering(Centering::CenterByColumnMean);
        let c2 = x2.clone().with_centering(Centering::CenterByColumnMean);
        let z1 = linalg::centered(x1.view());
        let z2 = linalg::centered(x2.view());
        let diff = linalg::column_means(x1.view()) - linalg::column_means(x2.view());
        let s1 = estimators::empirical_cov_array(x1.view(), Centering::CenterByColumnMean)?;
        let s2 = estimators::empirical_cov_array(x2.view(), Centering::CenterByColumnMean)?;
        let scatter = &s1 * (x1.n() as f64 - 1.0) + &s2 * (x2.n() as f64 - 1.0);
        let u1 = estimators::unbiased_sq_entries(&c1)?;
        let u2 = estimators::unbiased_sq_entries(&c2)?;
        let pooled = SampleMatrix::new(ndarray::concatenate(Axis(0), &[z1.view(), z2.view()]).map_err(|e| Error::Numerical(e.to_string()))?, Centering::CenterByColumnMean)?;
        Ok(TwoSampleWork { x1, x2, diff, scatter, s1, s2, u1, u2, pooled })
    }

    fn n1(&self) -> f64 {
        self.x1.n() as f64
    }
    fn n2(&self) -> f64 {
        self.x2.n() as f64
    }
    fn n(&self) -> f64 {
        self.n1() + self.n2()
    }
    fn p(&self) -> usize {
        self.x1.p()
    }

    /// Sample on which thresholds for the pooled covariance are resolved.
    pub fn pooled_sample(&self) -> &SampleMatrix {
        &self.pooled
    }

    /// `M = ‖X̄₁ − X̄₂‖² − (n/(n₁n₂))·tr(S)` with the unbiased pooled `S`.
    pub fn bs_statistic(&self) -> f64 {
        let tr_pooled = self.scatter.diag().sum() / (self.n() - 2.0);
        self.diff.dot(&self.diff) - self.n() / (self.n1() * self.n2()) * tr_pooled
    }

    /// `2n(n−1)/(n₁n₂)²`, the factor multiplying `‖Σ‖²_F` in `var(M)`.
    fn bs_var_factor(&self) -> f64 {
        let (n, n1, n2) = (self.n(), self.n1(), self.n2());
        2.0 * n * (n - 1.0) / (n1 * n2).powi(2)
    }

    /// `B²` on the pooled covariance `scatter/n` with `n = n₁ + n₂`.
    pub fn bs_b2(&self) -> Result<f64> {
        estimators::bs_b2_from_cov((&self.scatter / self.n()).view(), (self.n1() + self.n2()) as usize)
    }

    /// Diagonal part of `tr(Σ²)`: per-group invariant U-statistics averaged
    /// with weights `n_g − 1`.
    fn pooled_diag_u(&self) -> f64 {
        let (w1, w2) = (self.n1() - 1.0, self.n2() - 1.0);
        (w1 * self.u1.diag().sum() + w2 * self.u2.diag().sum()) / (w1 + w2)
    }

    /// Thresholded `‖Σ‖²_F`: `Q(Σ̃_τ)` of the unbiased pooled covariance plus
    /// the pooled diagonal U-statistic.
    pub fn thresholded_frob(&self, tau: f64) -> f64 {
        let s = &self.scatter / (self.n() - 2.0);
        let p = self.p();
        let mut q = 0.0;
        for i in 0..p {
            for j in 0..p {
                let v = s[[i, j]];
                if i != j && v.abs() > tau {
                    q += v * v;
                }
            }
        }
        q + self.pooled_diag_u()
    }

    /// `(tr Σ₁², tr Σ₂², tr Σ₁Σ₂)` estimates; with `tau`, off-diagonal
    /// contributions are restricted to entries where the unbiased pooled
    /// covariance exceeds `tau` in magnitude.
    pub fn cq_traces(&self, tau: Option<f64>) -> (f64, f64, f64) {
        let p = self.p();
        let pooled = &self.scatter / (self.n() - 2.0);
        let (mut t1, mut t2, mut cross) = (0.0, 0.0, 0.0);
        for a in 0..p {
            for b in 0..p {
                let keep = a == b || tau.is_none_or(|t| pooled[[a, b]].abs() > t);
                if keep {
                    t1 += self.u1[[a, b]];
                    t2 += self.u2[[a, b]];
                    cross += self.s1[[a, b]] * self.s2[[a, b]];
                }
            }
        }
        (t1, t2, cross)
    }

    /// `T = ‖X̄₁ − X̄₂‖² − tr(S₁)/n₁ − tr(S₂)/n₂`, the unbiased U-statistic
    /// for `‖μ₁ − μ₂‖²`.
    pub fn cq_statistic(&self) -> f64 {
        self.diff.dot(&self.diff) - self.s1.diag().sum() / self.n1() - self.s2.diag().sum() / self.n2()
    }

    fn cq_variance(&self, t1: f64, t2: f64, cross: f64) -> f64 {
        let (n1, n2) = (self.n1(), self.n2());
        2.0 / (n1 * (n1 - 1.0)) * t1 + 2.0 / (n2 * (n2 - 1.0)) * t2 + 4.0 / (n1 * n2) * cross
    }

    pub fn bs(&self, opts: &WaldOptions, tau: Option<f64>) -> Result<TwoSampleReport> {
        let m = self.bs_statistic();
        let (nn, p) = (self.x1.n() + self.x2.n(), self.p());
        let (method, frob) = match tau {
            None => (TwoSampleMethod::Bs, fe(self.bs_b2()?, FunctionalKind::BsB2, None, nn, p, "pooled B²")),
            Some(t) => (TwoSampleMethod::NewBs, fe(self.thresholded_frob(t), FunctionalKind::TotalFrobSq, Some(t), nn, p, "pooled thresholded Q + D")),
        };
        wald(method, m, self.bs_var_factor() * frob.value, opts, tau, vec![frob])
    }

    pub fn cq(&self, opts: &WaldOptions, tau: Option<f64>) -> Result<TwoSampleReport> {
        let t = self.cq_statistic();
        let (t1, t2, cross) = self.cq_traces(tau);
        let method = if tau.is_some() { TwoSampleMethod::NewCq } else { TwoSampleMethod::Cq };
        let p = self.p();
        let functionals = vec![
            fe(t1, FunctionalKind::CqTrSigmaSq, tau, self.x1.n(), p, "sample 1"),
            fe(t2, FunctionalKind::CqTrSigmaSq, tau, self.x2.n(), p, "sample 2"),
            fe(cross, FunctionalKind::CqTrSigma12, tau, self.x1.n() + self.x2.n(), p, "samples 1 and 2"),
        ];
        wald(method, t, self.cq_variance(t1, t2, cross), opts, tau, functionals)
    }
}

/// Resolves the pooled threshold for the thresholded variants.
pub fn pooled_threshold(x1: &SampleMatrix, x2: &SampleMatrix, spec: &ThresholdSpec) -> Result<f64> {
    let work = TwoSampleWork::new(x1, x2)?;
    Ok(estimators::resolve_threshold(spec, work.pooled_sample())?.tau)
}

/// Bai–Saranadasa test; with `spec`, the variance uses the thresholded
/// `‖Σ‖²_F` estimate instead of `B²` (newBS).
pub fn bs_test(x1: &SampleMatrix, x2: &SampleMatrix, opts: &WaldOptions, spec: Option<&ThresholdSpec>) -> Result<TwoSampleReport> {
    let work = TwoSampleWork::new(x1, x2)?;
    let tau = spec.map(|s| estimators::resolve_threshold(s, work.pooled_sample())).transpose()?.map(|r| r.tau);
    work.bs(opts, tau)
}

/// Chen–Qin test; with `spec`, thresholded trace estimates (newCQ).
pub fn cq_test(x1: &SampleMatrix, x2: &SampleMatrix, opts: &WaldOptions, spec: Option<&ThresholdSpec>) -> Result<TwoSampleReport> {
    let work = TwoSampleWork::new(x1, x2)?;
    let tau = spec.map(|s| estimators::resolve_threshold(s, work.pooled_sample())).transpose()?.map(|r| r.tau);
    work.cq(opts, tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correction {
    Bonferroni,
    Bh,
}

/// Coordinatewise two-sided two-sample t-test p-values.
pub fn marginal_p_values(x1: &SampleMatrix, x2: &SampleMatrix, variance: MarginalVariance) -> Result<Vec<f64>> {
    check_pair(x1, x2, 2)?;
    let (n1, n2) = (x1.n() as f64, x2.n() as f64);
    let m1 = linalg::column_means(x1.view());
    let m2 = linalg::column_means(x2.view());
    let z1 = linalg::centered(x1.view());
    let z2 = linalg::centered(x2.view());
    let mut out = Vec::with_capacity(x1.p());
    let mut flat = 0usize;
    for k in 0..x1.p() {
        let v1 = z1.column(k).iter().map(|v| v * v).sum::<f64>() / (n1 - 1.0);
        let v2 = z2.column(k).iter().map(|v| v * v).sum::<f64>() / (n2 - 1.0);
        let d = m1[k] - m2[k];
        let (se2, df) = match variance {
            MarginalVariance::Pooled => {
                let sp = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0);
                (sp * (1.0 / n1 + 1.0 / n2), n1 + n2 - 2.0)
            }
            MarginalVariance::Welch => {
                let (a, b) = (v1 / n1, v2 / n2);
                let df = (a + b).powi(2) / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0));
                (a + b, df)
            }
        };
        if !(se2 > 0.0) {
            flat += 1;
            out.push(1.0);
            continue;
        }
        out.push(stats::t_two_sided(d / se2.sqrt(), df));
    }
    if flat > 0 {
        log::warn!("{flat} coordinate(s) have zero variance; their p-values are set to 1");
    }
    Ok(out)
}

/// Whether the Benjamini–Hochberg step-up rule makes any discovery at level
/// `alpha`, and how many.
pub fn bh_discoveries(p_values: &[f64], alpha: f64) -> usize {
    let mut sorted = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    sorted.iter().enumerate().filter(|(i, &p)| p <= alpha * (*i as f64 + 1.0) / m).map(|(i, _)| i + 1).max().unwrap_or(0)
}

/// Global test from `p` marginal t-tests. The reported p-value is the
/// adjusted global p-value: `min(1, p·min p_k)` for Bonferroni and
/// `min_k p_(k)·p/k` for BH, so `reject ⟺ p_value < alpha` up to the
/// BH boundary case `p_(k) = alpha·k/p`, which BH accepts as a discovery.
pub fn marginal_tests(x1: &SampleMatrix, x2: &SampleMatrix, alpha: f64, correction: Correction, variance: MarginalVariance) -> Result<TwoSampleReport> {
    let pv = marginal_p_values(x1, x2, variance)?;
    let m = pv.len() as f64;
    let (method, p_value, reject) = match correction {
        Correction::Bonferroni => {
            let min = pv.iter().cloned().fold(1.0, f64::min);
            (TwoSampleMethod::Bonferroni, (min * m).min(1.0), min < alpha / m)
        }
        Correction::Bh => {
            let mut sorted = pv.clone();
            sorted.sort_by(f64::total_cmp);
            let adj = sorted.iter().enumerate().map(|(i, p)| p * m / (i as f64 + 1.0)).fold(1.0, f64::min);
            (TwoSampleMethod::Bh, adj.min(1.0), bh_discoveries(&pv, alpha) > 0)
        }
    };
    let min_p = pv.iter().cloned().fold(1.0, f64::min);
    Ok(TwoSampleReport { method, statistic: min_p, z: None, null_variance: None, p_value, reject, tau: None, functionals: vec![] })
}

/// All six methods on one pair of samples, sharing the pooled threshold
/// between newBS and newCQ.
pub fn run_all(x1: &SampleMatrix, x2: &SampleMatrix, opts: &WaldOptions, spec: &ThresholdSpec, variance: MarginalVariance) -> Result<Vec<TwoSampleReport>> {
    let work = TwoSampleWork::new(x1, x2)?;
    let tau = estimators::resolve_threshold(spec, work.pooled_sample())?.tau;
    Ok(vec![
        work.bs(opts, None)?,
        work.bs(opts, Some(tau))?,
        work.cq(opts, None)?,
        work.cq(opts, Some(tau))?,
        marginal_tests(x1, x2, opts.alpha, Correction::Bonferroni, variance)?,
        marginal_tests(x1, x2, opts.alpha, Correction::Bh, variance)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matgen::{make_model, sample_gaussian, ModelKind};
    use crate::rng::RngSeed;
    use approx::assert_abs_diff_eq;

    fn pair(p: usize, n: usize) -> (SampleMatrix, SampleMatrix) {
        let m = make_model(ModelKind::m1(), p).unwrap();
        (
            sample_gaussian(&m, n, None, RngSeed::new(1)).unwrap(),
            sample_gaussian(&m, n + 3, None, RngSeed::new(2)).unwrap(),
        )
    }

    #[test]
    fn identical_samples() {
        let (x1, _) = pair(20, 12);
        let opts = WaldOptions { sidedness: Sidedness::Upper, ..WaldOptions::default() };
        let r = bs_test(&x1, &x1, &opts, None).unwrap();
        let tr = estimators::empirical_cov_array(x1.view(), Centering::CenterByColumnMean).unwrap().diag().sum();
        assert_abs_diff_eq!(r.statistic, -(24.0 / 144.0) * tr, epsilon = 1e-10);
        assert!(r.z.unwrap() < 0.0 && !r.reject);
        for c in [Correction::Bonferroni, Correction::Bh] {
            assert!(!marginal_tests(&x1, &x1, 0.05, c, MarginalVariance::Pooled).unwrap().reject);
        }
    }

    #[test]
    fn new_variants_share_statistics() {
        let (x1, x2) = pair(15, 10);
        let opts = WaldOptions::default();
        let spec = ThresholdSpec::explicit(0.2);
        let a = bs_test(&x1, &x2, &opts, None).unwrap();
        let b = bs_test(&x1, &x2, &opts, Some(&spec)).unwrap();
        assert_eq!(a.statistic, b.statistic);
        let c = cq_test(&x1, &x2, &opts, None).unwrap();
        let d = cq_test(&x1, &x2, &opts, Some(&spec)).unwrap();
        assert_eq!(c.statistic, d.statistic);
        // tau = 0 keeps every entry with nonzero pooled covariance
        let e = cq_test(&x1, &x2, &opts, Some(&ThresholdSpec::explicit(0.0))).unwrap();
        assert_abs_diff_eq!(e.null_variance.unwrap(), c.null_variance.unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn cq_traces_match_estimators() {
        let (x1, x2) = pair(12, 9);
        let w = TwoSampleWork::new(&x1, &x2).unwrap();
        let (t1, t2, cross) = w.cq_traces(None);
        let (a, b, c) = estimators::cq_functionals(&x1, &x2).unwrap();
        assert_abs_diff_eq!(t1, a.value, epsilon = 1e-9);
        assert_abs_diff_eq!(t2, b.value, epsilon = 1e-9);
        assert_abs_diff_eq!(cross, c.value, epsilon = 1e-9);
    }

    #[test]
    fn cq_statistic_is_shift_invariant() {
        let (x1, x2) = pair(10, 8);
        let shift = Array1::from_elem(10, 4.0);
        let y1 = SampleMatrix::new(x1.data() + &shift, Centering::CenterByColumnMean).unwrap();
        let y2 = SampleMatrix::new(x2.data() + &shift, Centering::CenterByColumnMean).unwrap();
        let opts = WaldOptions::default();
        let a = cq_test(&x1, &x2, &opts, None).unwrap();
        let b = cq_test(&y1, &y2, &opts, None).unwrap();
        assert_abs_diff_eq!(a.statistic, b.statistic, epsilon = 1e-9);
    }

    #[test]
    fn bh_step_up() {
        assert_eq!(bh_discoveries(&[0.01, 0.02, 0.03, 0.5], 0.05), 3);
        assert_eq!(bh_discoveries(&[0.2, 0.3], 0.05), 0);
        // step-up: the largest k with p_(k) ≤ αk/m counts, even past a gap
        assert_eq!(bh_discoveries(&[0.04, 0.045, 0.9], 0.1), 2);
    }

    #[test]
    fn flat_coordinate_gets_unit_p_value() {
        let mut d1 = Array2::<f64>::zeros((5, 2));
        let mut d2 = Array2::<f64>::zeros((5, 2));
        for k in 0..5 {
            d1[[k, 1]] = k as f64;
            d2[[k, 1]] = (k * k) as f64;
        }
        let x1 = SampleMatrix::new(d1, Centering::CenterByColumnMean).unwrap();
        let x2 = SampleMatrix::new(d2, Centering::CenterByColumnMean).unwrap();
        let pv = marginal_p_values(&x1, &x2, MarginalVariance::Pooled).unwrap();
        assert_eq!(pv[0], 1.0);
        assert!(pv[1] < 1.0);
    }
}
