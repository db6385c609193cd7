//! Testing zero pricing errors in linear factor models.
//!
//! Each asset's excess return is regressed on an intercept and `K` factors,
//! `Y_t = α + B f_t + ε_t`. The Wald statistic ignoring cross-sectional
//! correlation, `W_d = (1ᵀM_F1)·α̂ᵀD̂⁻¹α̂`, is standardised with its null mean
//! `νN/(ν−2)` and a variance inflated by the average squared residual
//! correlation `ρ̄²`, which is estimated from thresholded correlations.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;

use crate::cvselect;
use crate::error::{invalid, Error, Result};
use crate::estimators::{self, ThresholdSpec};
use crate::linalg;
use crate::matgen::{Centering, SampleMatrix};
use crate::rng::RngSeed;
use crate::stats;

/// `T × N` excess returns and `T × K` factors. Returns may contain `NaN`
/// for missing observations; factors may not.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanel {
    pub returns: Array2<f64>,
    pub factors: Array2<f64>,
    pub asset_ids: Vec<String>,
    pub dates: Vec<String>,
}

impl FactorPanel {
    pub fn new(returns: Array2<f64>, factors: Array2<f64>, asset_ids: Vec<String>, dates: Vec<String>) -> Result<Self> {
        let (t, n) = returns.dim();
        if factors.nrows() != t {
            return Err(Error::DimensionMismatch(format!("returns have {t} rows, factors {}", factors.nrows())));
        }
        if asset_ids.len() != n || dates.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "{} asset ids for {n} assets, {} dates for {t} periods",
                asset_ids.len(),
                dates.len()
            )));
        }
        if factors.iter().any(|v| !v.is_finite()) {
            return invalid("factors contain missing or non-finite values");
        }
        if returns.iter().any(|v| v.is_infinite()) {
            return invalid("returns contain infinite values");
        }
        Ok(FactorPanel { returns, factors, asset_ids, dates })
    }

    /// Panel with generated labels.
    pub fn unlabeled(returns: Array2<f64>, factors: Array2<f64>) -> Result<Self> {
        let ids = (0..returns.ncols()).map(|i| format!("a{i}")).collect();
        let dates = (0..returns.nrows()).map(|t| t.to_string()).collect();
        Self::new(returns, factors, ids, dates)
    }

    pub fn t(&self) -> usize {
        self.returns.nrows()
    }
    pub fn n(&self) -> usize {
        self.returns.ncols()
    }
    pub fn k(&self) -> usize {
        self.factors.ncols()
    }

    /// Rows `start..end`, keeping only assets fully observed there. Returns
    /// the sub-panel and the number of dropped assets.
    pub fn window(&self, start: usize, end: usize) -> Result<(FactorPanel, usize)> {
        let block = self.returns.slice(s![start..end, ..]);
        let keep: Vec<usize> = (0..self.n()).filter(|&i| block.column(i).iter().all(|v| v.is_finite())).collect();
        let dropped = self.n() - keep.len();
        let panel = FactorPanel {
            returns: block.select(Axis(1), &keep),
            factors: self.factors.slice(s![start..end, ..]).to_owned(),
            asset_ids: keep.iter().map(|&i| self.asset_ids[i].clone()).collect(),
            dates: self.dates[start..end].to_vec(),
        };
        Ok((panel, dropped))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    pub alpha: Array1<f64>,
    /// `N × K` loadings.
    pub beta: Array2<f64>,
    /// `T × N` residuals.
    pub residuals: Array2<f64>,
    /// `ε̂ᵀε̂ / ν`.
    pub residual_cov: Array2<f64>,
    pub nu: usize,
}

/// Per-asset OLS on `[1, F]` through the Cholesky factor of the normal
/// equations.
pub fn ols_factor_fit(panel: &FactorPanel) -> Result<FactorFit> {
    let (t, k) = (panel.t(), panel.k());
    if t < k + 2 {
        return invalid(format!("need T ≥ K + 2 observations, got T = {t}, K = {k}"));
    }
    if panel.returns.iter().any(|v| !v.is_finite()) {
        return invalid("returns contain missing values; select a complete window first");
    }
    let mut design = Array2::<f64>::ones((t, k + 1));
    design.slice_mut(s![.., 1..]).assign(&panel.factors);
    let gram = linalg::crossprod(design.view());
    let l = linalg::cholesky(gram.view()).ok_or_else(|| Error::RankDeficient("[1, F] does not have full column rank".into()))?;
    let coef = linalg::cholesky_solve(&l, design.t().dot(&panel.returns).view());
    let residuals = &panel.returns - &design.dot(&coef);
    let nu = t - k - 1;
    let residual_cov = linalg::crossprod(residuals.view()) / nu as f64;
    Ok(FactorFit {
        alpha: coef.row(0).to_owned(),
        beta: coef.slice(s![1.., ..]).t().to_owned(),
        residuals,
        residual_cov,
        nu,
    })
}

/// `1ᵀ M_F 1` with `M_F = I − F(FᵀF)⁻¹Fᵀ` built from the raw factors.
pub fn ones_mf_ones(factors: ArrayView2<f64>) -> Result<f64> {
    let t = factors.nrows() as f64;
    if factors.ncols() == 0 {
        return Ok(t);
    }
    let ftf = linalg::crossprod(factors);
    let l = linalg::cholesky(ftf.view()).ok_or_else(|| Error::RankDeficient("factor matrix F is rank deficient".into()))?;
    let f1 = factors.sum_axis(Axis(0)).insert_axis(Axis(1));
    let sol = linalg::cholesky_solve(&l, f1.view());
    Ok(t - f1.column(0).dot(&sol.column(0)))
}

/// `(W_d, ν)` from a completed fit.
pub fn wd_from_fit(panel: &FactorPanel, fit: &FactorFit) -> Result<f64> {
    let d = fit.residual_cov.diag();
    if let Some(i) = d.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Numerical(format!("asset {} has zero residual variance", panel.asset_ids[i])));
    }
    let quad: f64 = fit.alpha.iter().zip(d.iter()).map(|(a, v)| a * a / v).sum();
    Ok(ones_mf_ones(panel.factors.view())? * quad)
}

pub fn wd_statistic(panel: &FactorPanel) -> Result<(f64, usize)> {
    let fit = ols_factor_fit(panel)?;
    Ok((wd_from_fit(panel, &fit)?, fit.nu))
}

/// `(2/(N(N−1)))·Σ_{i<j} ρ̂_ij²·1{|ρ̂_ij| > τ}` and the `τ` used.
pub fn rho_bar_sq(residuals: &Array2<f64>, spec: &ThresholdSpec) -> Result<(f64, f64)> {
    let n_assets = residuals.ncols();
    if n_assets < 2 {
        return invalid("need at least two assets for residual correlations");
    }
    let x = SampleMatrix::new(residuals.clone(), Centering::KnownZeroMean)?;
    let tau = estimators::resolve_threshold(spec, &x)?.tau;
    let s = linalg::crossprod(residuals.view());
    if s.diag().iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Numerical("zero residual variance".into()));
    }
    Ok((rho_bar_sq_at(&cvselect::correlation(&s), tau), tau))
}

fn rho_bar_sq_at(corr: &Array2<f64>, tau: f64) -> f64 {
    let n = corr.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..i {
            let r = corr[[i, j]];
            if r.abs() > tau {
                s += r * r;
            }
        }
    }
    2.0 * s / (n as f64 * (n as f64 - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTestReport {
    pub w_d: f64,
    pub e_wd: f64,
    pub var_wd: f64,
    pub rho_bar_sq_hat: f64,
    pub j_alpha: f64,
    pub p_value: f64,
    pub reject: bool,
    pub nu: usize,
    pub n_assets: usize,
    pub tau_used: f64,
}

/// Upper-tail test of `H₀: α = 0` based on `J_α = (W_d − E W_d)/√var(W_d)`
/// with `var(W_d) = 2N(ν−1)/(ν−4)·(ν/(ν−2))²·[1 + (N−1)ρ̄²]`; the
/// `O(ν^{−1/2})` remainder of the variance is dropped.
pub fn j_alpha_test(panel: &FactorPanel, spec: &ThresholdSpec, alpha_level: f64) -> Result<AlphaTestReport> {
    let fit = ols_factor_fit(panel)?;
    let nu = fit.nu;
    if nu <= 4 {
        return invalid(format!("need ν = T − K − 1 > 4, got {nu}"));
    }
    let w_d = wd_from_fit(panel, &fit)?;
    let (rho2, tau) = rho_bar_sq(&fit.residuals, spec)?;
    let (nf, nuf) = (panel.n() as f64, nu as f64);
    let e_wd = nuf * nf / (nuf - 2.0);
    let var_wd = 2.0 * nf * (nuf - 1.0) / (nuf - 4.0) * (nuf / (nuf - 2.0)).powi(2) * (1.0 + (nf - 1.0) * rho2);
    let j_alpha = (w_d - e_wd) / var_wd.sqrt();
    let p_value = stats::normal_sf(j_alpha);
    Ok(AlphaTestReport { w_d, e_wd, var_wd, rho_bar_sq_hat: rho2, j_alpha, p_value, reject: p_value < alpha_level, nu, n_assets: panel.n(), tau_used: tau })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingReport {
    pub window_end: String,
    pub end_index: usize,
    pub dropped_assets: usize,
    pub report: AlphaTestReport,
}

/// One test per window of `window_t` consecutive periods, ordered by end
/// date. Assets with a missing return inside a window are excluded from it;
/// windows that cannot be tested are skipped with a warning.
pub fn rolling_alpha_tests(panel: &FactorPanel, window_t: usize, spec: &ThresholdSpec, alpha_level: f64) -> Result<Vec<RollingReport>> {
    if window_t > panel.t() || window_t == 0 {
        return invalid(format!("window of {window_t} periods does not fit {} observations", panel.t()));
    }
    let ends: Vec<usize> = (window_t..=panel.t()).collect();
    let out: Vec<Option<RollingReport>> = ends
        .par_iter()
        .map(|&end| {
            let label = panel.dates[end - 1].clone();
            let (w, dropped) = match panel.window(end - window_t, end) {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("window ending {label} skipped: {e}");
                    return None;
                }
            };
            if dropped > 0 {
                log::info!("window ending {label}: {dropped} asset(s) with missing returns excluded");
            }
            match j_alpha_test(&w, spec, alpha_level) {
                Ok(report) => Some(RollingReport { window_end: label, end_index: end - 1, dropped_assets: dropped, report }),
                Err(e) => {
                    log::warn!("window ending {label} skipped: {e}");
                    None
                }
            }
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

/// Gaussian factor-model panel for simulation studies.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub t: usize,
    pub n: usize,
    pub k: usize,
    /// Pricing errors in force from period `switch_at` on (all periods when
    /// `switch_at = 0`).
    pub alpha: Array1<f64>,
    pub switch_at: usize,
    pub noise_sd: f64,
}

impl SyntheticPanel {
    pub fn null(t: usize, n: usize, k: usize) -> Self {
        SyntheticPanel { t, n, k, alpha: Array1::zeros(n), switch_at: 0, noise_sd: 1.0 }
    }

    /// Factors i.i.d. `N(0, 1)`, loadings `U(0.5, 1.5)`, independent
    /// `N(0, noise_sd²)` errors.
    pub fn draw(&self, seed: RngSeed) -> Result<FactorPanel> {
        if self.alpha.len() != self.n {
            return Err(Error::DimensionMismatch(format!("alpha has length {}, N = {}", self.alpha.len(), self.n)));
        }
        let mut rng = seed.rng();
        let factors = Array2::from_shape_simple_fn((self.t, self.k), || StandardNormal.sample(&mut rng));
        let load = Uniform::new(0.5, 1.5).map_err(|e| Error::Numerical(e.to_string()))?;
        let beta = Array2::from_shape_simple_fn((self.n, self.k), || load.sample(&mut rng));
        let mut returns = factors.dot(&beta.t());
        for (tt, mut row) in returns.rows_mut().into_iter().enumerate() {
            let active = tt >= self.switch_at;
            for (i, v) in row.iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += self.noise_sd * e + if active { self.alpha[i] } else { 0.0 };
            }
        }
        FactorPanel::unlabeled(returns, factors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_affine_returns() {
        let sp = SyntheticPanel::null(30, 4, 2);
        let p = sp.draw(RngSeed::new(3)).unwrap();
        let alpha = Array1::from(vec![0.1, -0.2, 0.3, 0.0]);
        let beta = ndarray::array![[1.0, 0.5], [0.2, 0.1], [0.0, 2.0], [1.0, 1.0]];
        let y = p.factors.dot(&beta.t()) + &alpha;
        let panel = FactorPanel::unlabeled(y, p.factors.clone()).unwrap();
        let fit = ols_factor_fit(&panel).unwrap();
        for (a, b) in fit.alpha.iter().zip(alpha.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert!(fit.residuals.iter().all(|v| v.abs() < 1e-10));
        assert_abs_diff_eq!(fit.beta[[2, 1]], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn intercept_only_gives_means() {
        let y = ndarray::array![[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]];
        let panel = FactorPanel::unlabeled(y, Array2::zeros((3, 0))).unwrap();
        let fit = ols_factor_fit(&panel).unwrap();
        assert_abs_diff_eq!(fit.alpha[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.alpha[1], 3.0, epsilon = 1e-12);
        assert_eq!(ones_mf_ones(panel.factors.view()).unwrap(), 3.0);
    }

    #[test]
    fn rank_deficient_design() {
        let f = ndarray::array![[1.0], [1.0], [1.0], [1.0]];
        let panel = FactorPanel::unlabeled(Array2::zeros((4, 2)), f).unwrap();
        assert!(matches!(ols_factor_fit(&panel), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn zero_alpha_gives_zero_wd() {
        let sp = SyntheticPanel::null(20, 3, 1);
        let p = sp.draw(RngSeed::new(1)).unwrap();
        let fit = ols_factor_fit(&p).unwrap();
        let y = &p.returns - &fit.alpha;
        let panel = FactorPanel::unlabeled(y, p.factors.clone()).unwrap();
        let (w, nu) = wd_statistic(&panel).unwrap();
        assert!(w.abs() < 1e-20);
        assert_eq!(nu, 18);
    }

    #[test]
    fn rho_bar_edges() {
        let sp = SyntheticPanel::null(40, 6, 1);
        let p = sp.draw(RngSeed::new(8)).unwrap();
        let fit = ols_factor_fit(&p).unwrap();
        let (v, _) = rho_bar_sq(&fit.residuals, &ThresholdSpec::explicit(1.0)).unwrap();
        assert_eq!(v, 0.0);
        let (full, _) = rho_bar_sq(&fit.residuals, &ThresholdSpec::explicit(0.0)).unwrap();
        let (half, _) = rho_bar_sq(&fit.residuals, &ThresholdSpec::explicit(0.1)).unwrap();
        assert!(half <= full && full > 0.0);
        let diag = Array2::from_diag(&Array1::from(vec![1.0, 2.0]));
        assert_eq!(rho_bar_sq_at(&cvselect::correlation(&diag), 0.0), 0.0);
    }

    #[test]
    fn expected_wd_closed_form() {
        let (nu, n) = (56.0, 276.0);
        assert_abs_diff_eq!(nu * n / (nu - 2.0), 286.22, epsilon = 5e-3);
    }

    #[test]
    fn small_nu_rejected() {
        let sp = SyntheticPanel::null(8, 3, 3);
        let p = sp.draw(RngSeed::new(2)).unwrap();
        assert!(j_alpha_test(&p, &ThresholdSpec::explicit(0.5), 0.05).is_err());
    }

    #[test]
    fn window_drops_incomplete_assets() {
        let sp = SyntheticPanel::null(12, 3, 1);
        let mut p = sp.draw(RngSeed::new(2)).unwrap();
        p.returns[[5, 1]] = f64::NAN;
        let (w, dropped) = p.window(0, 8).unwrap();
        assert_eq!((w.n(), dropped), (2, 1));
        let (w, dropped) = p.window(6, 12).unwrap();
        assert_eq!((w.n(), dropped), (3, 0));
    }
}
