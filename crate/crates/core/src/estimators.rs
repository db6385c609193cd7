//! Empirical covariance, entrywise thresholding and the functional estimators
//! built on it.
//!
//! Notation: `Σ̂` is the empirical covariance, `Σ̃_τ` its thresholded version
//! with `σ̃_ij = σ̂_ij·1{|σ̂_ij| > τ}` off the diagonal and `σ̃_ii = σ̂_ii`.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2};

use crate::cvselect::{self, CvConfig, CvTrace};
use crate::error::{invalid, Result};
use crate::linalg;
use crate::matgen::{Centering, CovarianceModel, SampleMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunctionalKind {
    Qoff,
    Ddiag,
    TotalFrobSq,
    Lr(f64),
    BsB2,
    CqTrSigmaSq,
    CqTrSigma12,
}

impl fmt::Display for FunctionalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalKind::Qoff => write!(f, "Qoff"),
            FunctionalKind::Ddiag => write!(f, "Ddiag"),
            FunctionalKind::TotalFrobSq => write!(f, "TotalFrobSq"),
            FunctionalKind::Lr(r) => write!(f, "Lr({r})"),
            FunctionalKind::BsB2 => write!(f, "BS_B2"),
            FunctionalKind::CqTrSigmaSq => write!(f, "CQ_TrSigmaSq"),
            FunctionalKind::CqTrSigma12 => write!(f, "CQ_TrSigma12"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalEstimate {
    pub value: f64,
    pub kind: FunctionalKind,
    pub tau: Option<f64>,
    pub n: usize,
    pub p: usize,
    pub inputs_digest: String,
}

impl FunctionalEstimate {
    fn new(value: f64, kind: FunctionalKind, tau: Option<f64>, n: usize, p: usize, digest: impl Into<String>) -> Self {
        FunctionalEstimate { value, kind, tau, n, p, inputs_digest: digest.into() }
    }
}

/// How `τ` is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdMode {
    Explicit(f64),
    /// `τ = 2·C₀·√(γ log p / n)`. With `theory_faithful` the constants must
    /// satisfy `C₀ ≥ 4`, `γ > 8`.
    Rule { c0: f64, gamma: f64, theory_faithful: bool },
    CrossValidated(CvConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSpec {
    pub mode: ThresholdMode,
    /// Filled by [`ThresholdSpec::resolve`].
    pub resolved_tau: Option<f64>,
}

impl ThresholdSpec {
    pub fn explicit(tau: f64) -> Self {
        Self::from_mode(ThresholdMode::Explicit(tau))
    }

    /// `τ = c·√(log p / n)`, the practical form with a constant near 1.5.
    pub fn practical(c: f64) -> Self {
        Self::from_mode(ThresholdMode::Rule { c0: c / 2.0, gamma: 1.0, theory_faithful: false })
    }

    pub fn theory(c0: f64, gamma: f64) -> Self {
        Self::from_mode(ThresholdMode::Rule { c0, gamma, theory_faithful: true })
    }

    pub fn cross_validated(cfg: CvConfig) -> Self {
        Self::from_mode(ThresholdMode::CrossValidated(cfg))
    }

    pub fn from_mode(mode: ThresholdMode) -> Self {
        ThresholdSpec { mode, resolved_tau: None }
    }

    /// Resolves `τ` for the sample `x`, storing it in `resolved_tau`.
    pub fn resolve(&mut self, x: &SampleMatrix) -> Result<Resolution> {
        let res = resolve_threshold(self, x)?;
        self.resolved_tau = Some(res.tau);
        Ok(res)
    }
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        Self::cross_validated(CvConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub tau: f64,
    pub warnings: Vec<String>,
    pub cv: Option<CvTrace>,
}

/// `2·C₀·√(γ log p / n)` with its standing-assumption warnings.
pub fn rule_threshold(c0: f64, gamma: f64, theory_faithful: bool, p: usize, n: usize) -> Result<Resolution> {
    if p < 2 || n < 2 {
        return invalid(format!("threshold rule needs p, n ≥ 2, got p = {p}, n = {n}"));
    }
    if !(c0 > 0.0 && gamma > 0.0) {
        return invalid(format!("threshold constants must be positive, got C0 = {c0}, gamma = {gamma}"));
    }
    if theory_faithful && !(c0 >= 4.0 && gamma > 8.0) {
        return invalid(format!("theory-faithful threshold needs C0 ≥ 4 and gamma > 8, got C0 = {c0}, gamma = {gamma}"));
    }
    let lp = (p as f64).ln();
    let tau = 2.0 * c0 * (gamma * lp / n as f64).sqrt();
    let mut warnings = Vec::new();
    if gamma * lp >= n as f64 {
        warnings.push(format!("gamma·log p = {:.3} is not below n = {n}", gamma * lp));
    }
    if theory_faithful && tau > 1.0 {
        warnings.push(format!("threshold {tau:.4} exceeds 1"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Resolution { tau, warnings, cv: None })
}

pub fn resolve_threshold(spec: &ThresholdSpec, x: &SampleMatrix) -> Result<Resolution> {
    match &spec.mode {
        ThresholdMode::Explicit(tau) => {
            if !(*tau >= 0.0) {
                return invalid(format!("threshold must be nonnegative, got {tau}"));
            }
            Ok(Resolution { tau: *tau, warnings: vec![], cv: None })
        }
        ThresholdMode::Rule { c0, gamma, theory_faithful } => rule_threshold(*c0, *gamma, *theory_faithful, x.p(), x.n()),
        ThresholdMode::CrossValidated(cfg) => {
            let trace = cvselect::cv_threshold(x, cfg)?;
            Ok(Resolution { tau: trace.tau_final, warnings: vec![], cv: Some(trace) })
        }
    }
}

/// `XᵀX/n` for known zero mean, `ZᵀZ/(n−1)` after column centering.
pub fn empirical_cov(x: &SampleMatrix) -> Result<CovarianceModel> {
    Ok(CovarianceModel::estimated(empirical_cov_array(x.view(), x.centering())?))
}

pub fn empirical_cov_array(x: ArrayView2<f64>, centering: Centering) -> Result<Array2<f64>> {
    let n = x.nrows();
    match centering {
        Centering::KnownZeroMean => {
            if n < 1 {
                return invalid("empty sample");
            }
            Ok(linalg::crossprod(x) / n as f64)
        }
        Centering::CenterByColumnMean => {
            if n < 2 {
                return invalid(format!("centered covariance needs n ≥ 2, got {n}"));
            }
            let z = linalg::centered(x);
            Ok(linalg::crossprod(z.view()) / (n as f64 - 1.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdedEstimate {
    pub base: Array2<f64>,
    pub tau: f64,
    pub entries: Array2<f64>,
    /// Off-diagonal survivors; the diagonal is always `false`.
    pub kept_mask: Array2<bool>,
}

impl ThresholdedEstimate {
    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    pub fn n_kept(&self) -> usize {
        self.kept_mask.iter().filter(|k| **k).count()
    }
}

pub fn threshold(sigma_hat: &CovarianceModel, tau: f64) -> Result<ThresholdedEstimate> {
    threshold_array(sigma_hat.entries(), tau)
}

pub fn threshold_array(base: &Array2<f64>, tau: f64) -> Result<ThresholdedEstimate> {
    if !(tau >= 0.0) {
        return invalid(format!("threshold must be nonnegative, got {tau}"));
    }
    let p = base.nrows();
    let mut entries = base.clone();
    let mut kept_mask = Array2::from_elem((p, p), false);
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            if base[[i, j]].abs() > tau {
                kept_mask[[i, j]] = true;
            } else {
                entries[[i, j]] = 0.0;
            }
        }
    }
    Ok(ThresholdedEstimate { base: base.clone(), tau, entries, kept_mask })
}

/// Plug-in for the kept off-diagonal entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QPlugin {
    /// `Σ σ̂_ij²` over survivors.
    #[default]
    Raw,
    /// Survivors contribute the unbiased per-entry estimate of `σ_ij²`
    /// instead of `σ̂_ij²`, removing the `var(σ̂_ij)` inflation.
    Unbiased,
}

/// `Q(Σ̃_τ) = Σ_{i≠j} σ̂_ij²·1{|σ̂_ij| > τ}`.
pub fn q_offdiag(est: &ThresholdedEstimate) -> FunctionalEstimate {
    let mut s = 0.0;
    for ((i, j), &v) in est.entries.indexed_iter() {
        if i != j {
            s += v * v;
        }
    }
    FunctionalEstimate::new(s, FunctionalKind::Qoff, Some(est.tau), 0, est.dim(), "thresholded plug-in")
}

/// `q_offdiag` with a choice of plug-in for the kept entries; `x` must be
/// the sample `est` was built from.
pub fn q_offdiag_with(est: &ThresholdedEstimate, x: &SampleMatrix, plugin: QPlugin) -> Result<FunctionalEstimate> {
    match plugin {
        QPlugin::Raw => {
            let mut f = q_offdiag(est);
            f.n = x.n();
            Ok(f)
        }
        QPlugin::Unbiased => {
            let u = unbiased_sq_entries(x)?;
            let mut s = 0.0;
            for ((i, j), &k) in est.kept_mask.indexed_iter() {
                if k {
                    s += u[[i, j]];
                }
            }
            Ok(FunctionalEstimate::new(s, FunctionalKind::Qoff, Some(est.tau), x.n(), x.p(), "thresholded unbiased plug-in"))
        }
    }
}

/// Unbiased estimate of `D(Σ) = Σ_i σ_ii²`.
///
/// Under `KnownZeroMean` this is `(1/(n(n−1)))·Σ_i Σ_{k≠j} X_ki² X_ji²`
/// (needs `n ≥ 2`). Under `CenterByColumnMean` the location-invariant
/// fourth-order U-statistic is used instead (needs `n ≥ 4`).
pub fn d_diag(x: &SampleMatrix) -> Result<FunctionalEstimate> {
    let (n, p) = (x.n(), x.p());
    let value = match x.centering() {
        Centering::KnownZeroMean => {
            let nf = n as f64;
            let mut s = 0.0;
            for col in x.view().columns() {
                let s2: f64 = col.iter().map(|v| v * v).sum();
                let s4: f64 = col.iter().map(|v| v.powi(4)).sum();
                s += s2 * s2 - s4;
            }
            s / (nf * (nf - 1.0))
        }
        Centering::CenterByColumnMean => unbiased_tr_sq_parts(x)?.diag,
    };
    Ok(FunctionalEstimate::new(value, FunctionalKind::Ddiag, None, n, p, "diagonal U-statistic"))
}

/// `Q(Σ̃_τ) + D̂`, or `Q(Σ̃_τ) + p` when the diagonal is known to be one.
pub fn frobenius_sq(est: &ThresholdedEstimate, x: &SampleMatrix, known_unit_diag: bool) -> Result<FunctionalEstimate> {
    if est.dim() != x.p() {
        return Err(crate::Error::DimensionMismatch(format!("estimate is {}-dimensional, sample has p = {}", est.dim(), x.p())));
    }
    let q = q_offdiag(est).value;
    let d = if known_unit_diag { x.p() as f64 } else { d_diag(x)?.value };
    Ok(FunctionalEstimate::new(q + d, FunctionalKind::TotalFrobSq, Some(est.tau), x.n(), x.p(), "Q + D"))
}

/// `max_i Σ_j |σ̃_ij|^r`, diagonal included.
pub fn lr_functional(est: &ThresholdedEstimate, r: f64) -> Result<FunctionalEstimate> {
    if !(r > 0.0) {
        return invalid(format!("exponent r must be positive, got {r}"));
    }
    let value = lr_of(est.entries.view(), r);
    Ok(FunctionalEstimate::new(value, FunctionalKind::Lr(r), Some(est.tau), 0, est.dim(), "thresholded row functional"))
}

pub(crate) fn lr_of(m: ArrayView2<f64>, r: f64) -> f64 {
    let pow = |v: f64| if r == 1.0 { v.abs() } else { v.abs().powf(r) };
    m.rows()
        .into_iter()
        .map(|row| row.iter().map(|&v| pow(v)).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `n²/((n+2)(n−1))·[‖Σ̂‖²_F − (tr Σ̂)²/n]` from a covariance estimate.
pub fn bs_b2_from_cov(sigma_hat: ArrayView2<f64>, n: usize) -> Result<f64> {
    if n < 2 {
        return invalid(format!("B² needs n ≥ 2, got {n}"));
    }
    let nf = n as f64;
    let frob: f64 = sigma_hat.iter().map(|v| v * v).sum();
    let tr: f64 = sigma_hat.diag().sum();
    Ok(nf * nf / ((nf + 2.0) * (nf - 1.0)) * (frob - tr * tr / nf))
}

/// Bai–Saranadasa ratio-consistent estimator of `‖Σ‖²_F`.
pub fn bs_b2(x: &SampleMatrix) -> Result<FunctionalEstimate> {
    let s = empirical_cov_array(x.view(), x.centering())?;
    let v = bs_b2_from_cov(s.view(), x.n())?;
    Ok(FunctionalEstimate::new(v, FunctionalKind::BsB2, None, x.n(), x.p(), "Bai-Saranadasa B²"))
}

/// Unbiased estimate of `tr(Σ²)` split into its diagonal and off-diagonal
/// parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrSqParts {
    pub total: f64,
    pub diag: f64,
}

impl TrSqParts {
    pub fn offdiag(&self) -> f64 {
        self.total - self.diag
    }
}

/// Sum over `a, b` of the unbiased per-entry estimates of `σ_ab²` (see
/// [`unbiased_sq_entries`]), computed in `O(n²p)` through the Gram matrix.
pub fn unbiased_tr_sq_parts(x: &SampleMatrix) -> Result<TrSqParts> {
    let n = x.n();
    let nf = n as f64;
    match x.centering() {
        Centering::KnownZeroMean => {
            let xv = x.view();
            let g = xv.dot(&xv.t());
            let frob: f64 = g.iter().map(|v| v * v).sum();
            let row_sq: f64 = g.diag().iter().map(|v| v * v).sum();
            let mut diag_a = 0.0;
            let mut diag_b = 0.0;
            for col in xv.columns() {
                let s2: f64 = col.iter().map(|v| v * v).sum();
                diag_a += s2 * s2;
                diag_b += col.iter().map(|v| v.powi(4)).sum::<f64>();
            }
            let denom = nf * (nf - 1.0);
            Ok(TrSqParts { total: (frob - row_sq) / denom, diag: (diag_a - diag_b) / denom })
        }
        Centering::CenterByColumnMean => {
            if n < 4 {
                return invalid(format!("location-invariant U-statistic needs n ≥ 4, got {n}"));
            }
            let z = linalg::centered(x.view());
            let g = z.dot(&z.t());
            let m = nf - 1.0;
            let c = m / (nf * (nf - 2.0) * (nf - 3.0));
            let tr_s2 = g.iter().map(|v| v * v).sum::<f64>() / (m * m);
            let tr_s = g.diag().sum() / m;
            let q = g.diag().iter().map(|v| v * v).sum::<f64>() / m;
            let total = c * ((nf - 1.0) * (nf - 2.0) * tr_s2 + tr_s * tr_s - nf * q);
            let mut diag = 0.0;
            for col in z.columns() {
                let s = col.iter().map(|v| v * v).sum::<f64>() / m;
                let q4 = col.iter().map(|v| v.powi(4)).sum::<f64>() / m;
                diag += c * ((nf - 1.0) * (nf - 2.0) * s * s + s * s - nf * q4);
            }
            Ok(TrSqParts { total, diag })
        }
    }
}

/// Matrix of unbiased estimates of `σ_ab²`.
///
/// Known zero mean: `((Σ_k X_ka X_kb)² − Σ_k X_ka² X_kb²)/(n(n−1))`.
/// Centered: with `S = ZᵀZ/(n−1)` and `q_ab = Σ_k Z_ka² Z_kb²/(n−1)`,
/// `(n−1)/(n(n−2)(n−3))·[(n−1)(n−2)s_ab² + s_aa s_bb − n q_ab]`, which is
/// the order-4 U-statistic with kernel
/// `¼(X₁a−X₂a)(X₁b−X₂b)(X₃a−X₄a)(X₃b−X₄b)` and therefore location invariant.
pub fn unbiased_sq_entries(x: &SampleMatrix) -> Result<Array2<f64>> {
    let n = x.n();
    let nf = n as f64;
    match x.centering() {
        Centering::KnownZeroMean => {
            let g = linalg::crossprod(x.view());
            let sq = x.view().mapv(|v| v * v);
            let g4 = linalg::crossprod(sq.view());
            let denom = nf * (nf - 1.0);
            Ok(ndarray::Zip::from(&g).and(&g4).map_collect(|a, b| (a * a - b) / denom))
        }
        Centering::CenterByColumnMean => {
            if n < 4 {
                return invalid(format!("location-invariant U-statistic needs n ≥ 4, got {n}"));
            }
            let z = linalg::centered(x.view());
            let m = nf - 1.0;
            let s = linalg::crossprod(z.view()) / m;
            let sq = z.mapv(|v| v * v);
            let q = linalg::crossprod(sq.view()) / m;
            let c = m / (nf * (nf - 2.0) * (nf - 3.0));
            let d: Array1<f64> = s.diag().to_owned();
            let p = x.p();
            let mut u = Array2::<f64>::zeros((p, p));
            for a in 0..p {
                for b in 0..p {
                    let sab = s[[a, b]];
                    u[[a, b]] = c * ((nf - 1.0) * (nf - 2.0) * sab * sab + d[a] * d[b] - nf * q[[a, b]]);
                }
            }
            Ok(u)
        }
    }
}

/// Location-invariant unbiased estimates of `tr(Σ₁²)`, `tr(Σ₂²)` and
/// `tr(Σ₁Σ₂)`. The cross term is `tr(S₁S₂)` with `Sᵢ` the unbiased sample
/// covariances, which is unbiased because the two samples are independent.
pub fn cq_functionals(x1: &SampleMatrix, x2: &SampleMatrix) -> Result<(FunctionalEstimate, FunctionalEstimate, FunctionalEstimate)> {
    if x1.p() != x2.p() {
        return Err(crate::Error::DimensionMismatch(format!("samples have p = {} and p = {}", x1.p(), x2.p())));
    }
    if x1.n() < 4 || x2.n() < 4 {
        return invalid(format!("CQ U-statistics need n ≥ 4 per sample, got {} and {}", x1.n(), x2.n()));
    }
    let c1 = x1.clone().with_centering(Centering::CenterByColumnMean);
    let c2 = x2.clone().with_centering(Centering::CenterByColumnMean);
    let t1 = unbiased_tr_sq_parts(&c1)?.total;
    let t2 = unbiased_tr_sq_parts(&c2)?.total;
    let cross = cross_trace(&c1, &c2);
    let p = x1.p();
    Ok((
        FunctionalEstimate::new(t1, FunctionalKind::CqTrSigmaSq, None, x1.n(), p, "sample 1"),
        FunctionalEstimate::new(t2, FunctionalKind::CqTrSigmaSq, None, x2.n(), p, "sample 2"),
        FunctionalEstimate::new(cross, FunctionalKind::CqTrSigma12, None, x1.n() + x2.n(), p, "samples 1 and 2"),
    ))
}

/// `tr(S₁S₂) = ‖Z₁Z₂ᵀ‖²_F / ((n₁−1)(n₂−1))`.
fn cross_trace(x1: &SampleMatrix, x2: &SampleMatrix) -> f64 {
    let z1 = linalg::centered(x1.view());
    let z2 = linalg::centered(x2.view());
    let g = z1.dot(&z2.t());
    g.iter().map(|v| v * v).sum::<f64>() / ((x1.n() as f64 - 1.0) * (x2.n() as f64 - 1.0))
}

/// Sorted off-diagonal magnitudes with suffix sums of per-entry weights, so
/// that `Σ_{i≠j} w_ij·1{|σ̂_ij| > τ}` is a binary search for any `τ`.
#[derive(Debug, Clone)]
pub struct OffDiagProfile {
    keys: Vec<f64>,
    suffix: Vec<f64>,
}

impl OffDiagProfile {
    /// Weights `σ̂_ij²`: evaluates `q_offdiag(threshold(Σ̂, τ))`.
    pub fn squares(sigma_hat: ArrayView2<f64>) -> Self {
        Self::build(sigma_hat, None)
    }

    /// Upper-triangle pairs `(|σ̂_ij|, w_ij)`; both matrices symmetric.
    pub fn weighted(sigma_hat: ArrayView2<f64>, weights: ArrayView2<f64>) -> Self {
        Self::build(sigma_hat, Some(weights))
    }

    fn build(sigma_hat: ArrayView2<f64>, weights: Option<ArrayView2<f64>>) -> Self {
        let p = sigma_hat.nrows();
        let mut pairs = Vec::with_capacity(p * (p.saturating_sub(1)) / 2);
        for i in 0..p {
            for j in (i + 1)..p {
                let s = sigma_hat[[i, j]];
                let w = weights.map_or(s * s, |w| w[[i, j]]);
                pairs.push((s.abs(), w));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let keys = pairs.iter().map(|p| p.0).collect();
        let mut suffix = vec![0.0; pairs.len() + 1];
        for k in (0..pairs.len()).rev() {
            suffix[k] = suffix[k + 1] + pairs[k].1;
        }
        OffDiagProfile { keys, suffix }
    }

    /// Sum over ordered pairs `i ≠ j` of the weights with `|σ̂_ij| > τ`.
    pub fn eval(&self, tau: f64) -> f64 {
        let k = self.keys.partition_point(|&a| a <= tau);
        2.0 * self.suffix[k]
    }

    pub fn max_abs(&self) -> f64 {
        self.keys.last().copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matgen::{make_model, sample_gaussian, ModelKind};
    use crate::rng::RngSeed;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn sample(data: Array2<f64>, c: Centering) -> SampleMatrix {
        SampleMatrix::new(data, c).unwrap()
    }

    #[test]
    fn empirical_cov_examples() {
        let s = empirical_cov(&sample(array![[1.0, 0.0], [0.0, 1.0]], Centering::KnownZeroMean)).unwrap();
        assert_eq!(s.entries(), &(Array2::<f64>::eye(2) * 0.5));
        let s = empirical_cov(&sample(array![[1.0], [3.0]], Centering::KnownZeroMean)).unwrap();
        assert_eq!(s.entries()[[0, 0]], 5.0);
        let s = empirical_cov(&sample(array![[1.0], [3.0]], Centering::CenterByColumnMean)).unwrap();
        assert_eq!(s.entries()[[0, 0]], 2.0);
    }

    #[test]
    fn rule_examples() {
        // p = e so log p = 1; n = 576
        let r = rule_threshold(4.0, 9.0, true, 3, 576).unwrap();
        assert_abs_diff_eq!(r.tau, 2.0 * 4.0 * (9.0 * 3f64.ln() / 576.0).sqrt(), epsilon = 1e-15);
        let tau_e = 2.0 * 4.0 * (9.0f64 * 1.0 / 576.0).sqrt();
        assert_abs_diff_eq!(tau_e, 1.0, epsilon = 1e-15);
        let r = rule_threshold(4.0, 9.0, true, 100, 20).unwrap();
        assert!(!r.warnings.is_empty());
        assert!(rule_threshold(1.0, 9.0, true, 100, 2000).is_err());
        let r = rule_threshold(0.75, 1.0, false, 500, 100).unwrap();
        assert_abs_diff_eq!(r.tau, 1.5 * (500f64.ln() / 100.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn threshold_examples() {
        let a = array![[1.0, 0.2], [0.2, 1.0]];
        let t = threshold_array(&a, 0.3).unwrap();
        assert_eq!(t.entries, Array2::<f64>::eye(2));
        let b = array![[1.0, 0.3], [0.3, 1.0]];
        let t = threshold_array(&b, 0.3).unwrap();
        assert_eq!(t.entries, Array2::<f64>::eye(2));
        let t = threshold_array(&b, 0.0).unwrap();
        assert_eq!(t.entries, b);
        assert_eq!(t.n_kept(), 2);
        assert!(threshold_array(&b, -0.1).is_err());
    }

    #[test]
    fn q_and_lr_on_exact_models() {
        let m2 = make_model(ModelKind::m2(), 4).unwrap();
        let t = threshold(&m2, 0.0).unwrap();
        assert_abs_diff_eq!(q_offdiag(&t).value, 0.54, epsilon = 1e-12);
        let m2 = make_model(ModelKind::m2(), 5).unwrap();
        let t = threshold(&m2, 0.0).unwrap();
        assert_abs_diff_eq!(lr_functional(&t, 1.0).unwrap().value, 1.6, epsilon = 1e-12);
        let id = make_model(ModelKind::Identity, 7).unwrap();
        let t = threshold(&id, 0.1).unwrap();
        assert_eq!(q_offdiag(&t).value, 0.0);
        assert_eq!(lr_functional(&t, 2.5).unwrap().value, 1.0);
    }

    #[test]
    fn d_diag_examples() {
        let x = sample(array![[2.0], [3.0]], Centering::KnownZeroMean);
        assert_abs_diff_eq!(d_diag(&x).unwrap().value, 36.0, epsilon = 1e-12);
        let z = sample(Array2::zeros((5, 3)), Centering::KnownZeroMean);
        assert_eq!(d_diag(&z).unwrap().value, 0.0);
    }

    #[test]
    fn frobenius_known_diag() {
        let x = sample(Array2::zeros((5, 3)), Centering::KnownZeroMean);
        let s = empirical_cov(&x).unwrap();
        let t = threshold(&s, 0.0).unwrap();
        assert_eq!(frobenius_sq(&t, &x, false).unwrap().value, 0.0);
        assert_eq!(frobenius_sq(&t, &x, true).unwrap().value, 3.0);
    }

    #[test]
    fn b2_closed_form() {
        let v = bs_b2_from_cov(Array2::<f64>::eye(2).view(), 3).unwrap();
        assert_abs_diff_eq!(v, 0.6, epsilon = 1e-12);
    }

    /// Brute force over ordered 4-tuples of distinct rows.
    fn brute_u(x: &Array2<f64>, a: usize, b: usize) -> f64 {
        let n = x.nrows();
        let mut s = 0.0;
        let mut cnt = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        if i == j || i == k || i == l || j == k || j == l || k == l {
                            continue;
                        }
                        s += 0.25
                            * (x[[i, a]] - x[[j, a]])
                            * (x[[i, b]] - x[[j, b]])
                            * (x[[k, a]] - x[[l, a]])
                            * (x[[k, b]] - x[[l, b]]);
                        cnt += 1.0;
                    }
                }
            }
        }
        s / cnt
    }

    #[test]
    fn unbiased_entries_match_brute_force() {
        let m = make_model(ModelKind::m1(), 3).unwrap();
        let x = sample_gaussian(&m, 7, None, RngSeed::new(11)).unwrap();
        let u = unbiased_sq_entries(&x).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_abs_diff_eq!(u[[a, b]], brute_u(x.data(), a, b), epsilon = 1e-10);
            }
        }
        let parts = unbiased_tr_sq_parts(&x).unwrap();
        assert_abs_diff_eq!(parts.total, u.sum(), epsilon = 1e-10);
        assert_abs_diff_eq!(parts.diag, u.diag().sum(), epsilon = 1e-10);
    }

    #[test]
    fn zero_mean_entries_match_gram_form() {
        let m = make_model(ModelKind::m2(), 4).unwrap();
        let x = sample_gaussian(&m, 9, None, RngSeed::new(5)).unwrap().with_centering(Centering::KnownZeroMean);
        let u = unbiased_sq_entries(&x).unwrap();
        let parts = unbiased_tr_sq_parts(&x).unwrap();
        assert_abs_diff_eq!(parts.total, u.sum(), epsilon = 1e-10);
        assert_abs_diff_eq!(parts.diag, d_diag(&x).unwrap().value, epsilon = 1e-10);
    }

    #[test]
    fn cq_is_location_invariant() {
        let m = make_model(ModelKind::m1(), 5).unwrap();
        let x1 = sample_gaussian(&m, 8, None, RngSeed::new(1)).unwrap();
        let x2 = sample_gaussian(&m, 9, None, RngSeed::new(2)).unwrap();
        let shift = Array1::from(vec![3.0, -1.0, 0.5, 10.0, 2.0]);
        let x2s = SampleMatrix::new(x2.data() + &shift, Centering::CenterByColumnMean).unwrap();
        let x1s = SampleMatrix::new(x1.data() - &shift, Centering::CenterByColumnMean).unwrap();
        let (a1, a2, a3) = cq_functionals(&x1, &x2).unwrap();
        let (b1, b2, b3) = cq_functionals(&x1s, &x2s).unwrap();
        assert_abs_diff_eq!(a1.value, b1.value, epsilon = 1e-9);
        assert_abs_diff_eq!(a2.value, b2.value, epsilon = 1e-9);
        assert_abs_diff_eq!(a3.value, b3.value, epsilon = 1e-9);
    }

    #[test]
    fn profile_matches_direct_threshold() {
        let m = make_model(ModelKind::m2(), 30).unwrap();
        let x = sample_gaussian(&m, 40, None, RngSeed::new(3)).unwrap();
        let s = empirical_cov(&x).unwrap();
        let prof = OffDiagProfile::squares(s.view());
        for tau in [0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0] {
            let direct = q_offdiag(&threshold(&s, tau).unwrap()).value;
            assert_abs_diff_eq!(prof.eval(tau), direct, epsilon = 1e-10);
        }
    }
}
