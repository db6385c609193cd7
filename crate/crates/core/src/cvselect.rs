//! Split-sample cross-validation of the threshold.
//!
//! For each of `m` random splits the training part (size `n₁`) is thresholded
//! on the grid `τ_j = jΔ√(log p / n₁)`, `j = 1..J`, and compared with a
//! non-thresholded unbiased reference computed on the held-out part. The
//! minimiser `j*` of the mean absolute discrepancy is rescaled to the full
//! sample as `τ = j*Δ√(log p / n)`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::estimators::{self, lr_of, OffDiagProfile};
use crate::matgen::SampleMatrix;
use crate::rng::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRule {
    /// `n₁ = round(n / log n)`.
    NOverLogN,
    /// `n₁ = round(f·n)`.
    Fraction(f64),
}

impl SplitRule {
    pub fn training_size(&self, n: usize) -> usize {
        let nf = n as f64;
        match self {
            SplitRule::NOverLogN => (nf / nf.ln()).round() as usize,
            SplitRule::Fraction(f) => (f * nf).round() as usize,
        }
    }
}

/// Functional the threshold is tuned for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CvTarget {
    /// Off-diagonal quadratic functional `Q(Σ)`.
    QFunctional,
    /// Row functional `l_r`; the reference is the unthresholded plug-in.
    LrFunctional(f64),
    /// Off-diagonal sum of squared correlations; thresholds apply to the
    /// sample correlation matrix.
    RhoBarSq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub m: usize,
    pub j: usize,
    pub split_rule: SplitRule,
    pub target: CvTarget,
    pub seed: RngSeed,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { m: 10, j: 50, split_rule: SplitRule::NOverLogN, target: CvTarget::QFunctional, seed: RngSeed::new(0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvTrace {
    /// Training-scale grid `τ_1..τ_J`.
    pub grid: Vec<f64>,
    pub losses: Vec<f64>,
    /// 1-based index of the first minimiser.
    pub j_star: usize,
    pub delta: f64,
    pub n1: usize,
    pub m_hat: f64,
    pub tau_final: f64,
}

impl CvTrace {
    /// `Δ√(log p / n)`, the full-sample grid step.
    pub fn full_step(&self, p: usize, n: usize) -> f64 {
        self.delta * ((p as f64).ln() / n as f64).sqrt()
    }
}

/// Covariance, or correlation for [`CvTarget::RhoBarSq`].
fn working_matrix(x: &SampleMatrix, target: CvTarget) -> Result<Array2<f64>> {
    let s = estimators::empirical_cov_array(x.view(), x.centering())?;
    Ok(match target {
        CvTarget::RhoBarSq => correlation(&s),
        _ => s,
    })
}

/// `D^{-1/2} S D^{-1/2}`; zero-variance coordinates get zero correlations.
pub fn correlation(s: &Array2<f64>) -> Array2<f64> {
    let p = s.nrows();
    let inv: Vec<f64> = s.diag().iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let mut r = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..p {
            r[[i, j]] = if i == j { 1.0 } else { s[[i, j]] * inv[i] * inv[j] };
        }
    }
    r
}

/// Unthresholded reference computed on a held-out sample.
///
/// `QFunctional`: the off-diagonal part of the unbiased `tr(Σ²)` U-statistic.
/// `RhoBarSq`: `Σ_{a≠b} U_ab / (s_aa s_bb)`, the same per-entry estimates of
/// `σ_ab²` scaled to the correlation level. `LrFunctional(r)`: `l_r` of the
/// held-out covariance with `τ = 0`.
///
/// The value is not invariant to duplicating rows: `(X; X)` is not an i.i.d.
/// sample, and the U-statistics then estimate a different quantity.
pub fn reference_estimate(x_test: &SampleMatrix, target: CvTarget) -> Result<f64> {
    match target {
        CvTarget::QFunctional => Ok(estimators::unbiased_tr_sq_parts(x_test)?.offdiag()),
        CvTarget::RhoBarSq => {
            let u = estimators::unbiased_sq_entries(x_test)?;
            let s = estimators::empirical_cov_array(x_test.view(), x_test.centering())?;
            let p = s.nrows();
            let mut total = 0.0;
            for a in 0..p {
                for b in 0..p {
                    let d = s[[a, a]] * s[[b, b]];
                    if a != b && d > 0.0 {
                        total += u[[a, b]] / d;
                    }
                }
            }
            Ok(total)
        }
        CvTarget::LrFunctional(r) => {
            let s = estimators::empirical_cov_array(x_test.view(), x_test.centering())?;
            Ok(lr_of(s.view(), r))
        }
    }
}

fn training_curve(train: &Array2<f64>, grid: &[f64], target: CvTarget) -> Vec<f64> {
    match target {
        CvTarget::QFunctional | CvTarget::RhoBarSq => {
            let prof = OffDiagProfile::squares(train.view());
            grid.iter().map(|&t| prof.eval(t)).collect()
        }
        CvTarget::LrFunctional(r) => grid
            .iter()
            .map(|&t| {
                let p = train.nrows();
                let mut best = 0.0f64;
                for i in 0..p {
                    let mut s = 0.0;
                    for j in 0..p {
                        let v = train[[i, j]];
                        if i == j || v.abs() > t {
                            s += v.abs().powf(r);
                        }
                    }
                    best = best.max(s);
                }
                best
            })
            .collect(),
    }
}

pub fn cv_threshold(x: &SampleMatrix, cfg: &CvConfig) -> Result<CvTrace> {
    let (n, p) = (x.n(), x.p());
    if n < 8 {
        return invalid(format!("cross-validation needs n ≥ 8, got {n}"));
    }
    if p < 2 {
        return invalid(format!("cross-validation needs p ≥ 2, got {p}"));
    }
    if cfg.m < 1 || cfg.j < 2 {
        return invalid(format!("need m ≥ 1 splits and J ≥ 2 grid points, got m = {}, J = {}", cfg.m, cfg.j));
    }
    let n1 = cfg.split_rule.training_size(n);
    if n1 < 2 || n - n1.min(n) < 2 {
        return invalid(format!("degenerate split: n = {n}, n1 = {n1}"));
    }
    let full = working_matrix(x, cfg.target)?;
    let m_hat = full.diag().iter().cloned().fold(0.0, f64::max);
    let lp = (p as f64).ln();
    let train_scale = (lp / n1 as f64).sqrt();
    let delta = m_hat / (cfg.j as f64 * train_scale);
    let grid: Vec<f64> = (1..=cfg.j).map(|j| j as f64 * delta * train_scale).collect();

    let per_split: Vec<Vec<f64>> = (0..cfg.m)
        .into_par_iter()
        .map(|v| -> Result<Vec<f64>> {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut cfg.seed.child(v as u64).rng());
            let (tr, te) = idx.split_at(n1);
            let train = working_matrix(&x.select_rows(tr)?, cfg.target)?;
            let reference = reference_estimate(&x.select_rows(te)?, cfg.target)?;
            Ok(training_curve(&train, &grid, cfg.target).into_iter().map(|q| (q - reference).abs()).collect())
        })
        .collect::<Result<_>>()?;

    let mut losses = vec![0.0; cfg.j];
    for split in &per_split {
        for (l, d) in losses.iter_mut().zip(split) {
            *l += d;
        }
    }
    losses.iter_mut().for_each(|l| *l /= cfg.m as f64);
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(crate::Error::Numerical("cross-validation loss is not finite".into()));
    }
    let mut j_star = 1;
    for (k, &l) in losses.iter().enumerate() {
        if l < losses[j_star - 1] {
            j_star = k + 1;
        }
    }
    let tau_final = j_star as f64 * delta * (lp / n as f64).sqrt();
    Ok(CvTrace { grid, losses, j_star, delta, n1, m_hat, tau_final })
}
