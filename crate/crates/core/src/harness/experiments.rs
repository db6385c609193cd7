//! The simulation studies.

use std::io::Write;

use ndarray::Array1;

use super::{replicate, ExperimentConfig, ResultRow, ResultTable};
use crate::error::{invalid, Result};
use crate::estimators::{self, QPlugin};
use crate::factortest::{self, SyntheticPanel};
use crate::matgen::{make_model, Centering, GaussianSampler, ModelKind, TwoSampleDesign};
use crate::rng::RngSeed;
use crate::stats::{self, Moments};
use crate::twosample::{self, MarginalVariance, TwoSampleMethod, TwoSampleWork, WaldOptions};

struct RowKey<'a> {
    experiment: &'a str,
    p: usize,
    n: usize,
    model: &'a str,
    setting: &'a str,
}

impl RowKey<'_> {
    fn row(&self, method: &str, metric: &str, value: f64, mc_se: f64) -> ResultRow {
        ResultRow {
            experiment: self.experiment.into(),
            method: method.into(),
            p: self.p,
            n: self.n,
            model: self.model.into(),
            setting: self.setting.into(),
            metric: metric.into(),
            value,
            mc_se,
        }
    }
}

fn rate_se(k: f64, reps: usize) -> f64 {
    let r = reps as f64;
    let ph = k / r;
    (ph * (1.0 - ph) / r).sqrt()
}

/// Sum of `σ̂_ij²` over off-diagonal entries with `|σ̂_ij| > tau`, or of the
/// matching entries of `weights` when given.
fn thresholded_q(s: &ndarray::Array2<f64>, weights: Option<&ndarray::Array2<f64>>, tau: f64) -> f64 {
    let p = s.nrows();
    let mut q = 0.0;
    for i in 0..p {
        for j in 0..p {
            let v = s[[i, j]];
            if i != j && v.abs() > tau {
                q += weights.map_or(v * v, |w| w[[i, j]]);
            }
        }
    }
    q
}

const FE_METHODS: [&str; 6] = ["thresholded", "BS", "CQ", "thresholded-offdiag", "BS-offdiag", "CQ-offdiag"];

/// Mean absolute error of `‖Σ‖²_F` estimates (and of their off-diagonal
/// parts) on zero-mean samples, per model and sample size. Emits `mae` and
/// `log2_mae` rows.
pub fn run_functional_error(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let mut table = ResultTable::default();
    let root = RngSeed::new(cfg.seed);
    for (mi, kind) in cfg.models.iter().enumerate() {
        let model = make_model(kind.clone(), cfg.p)?;
        let sampler = GaussianSampler::new(&model)?;
        let truth_total = model.frobenius_sq();
        let truth_q = model.q_offdiag();
        let label = kind.label();
        for &n in &cfg.n_grid {
            let seed = root.child(mi as u64).child(n as u64);
            let errs = replicate(cfg.replications, seed, |s| {
                let x = sampler.sample(n, None, s.child(0))?.with_centering(Centering::KnownZeroMean);
                let spec = cfg.threshold.spec(&cfg.cv, kind, s.child(1));
                let tau = estimators::resolve_threshold(&spec, &x)?.tau;
                let sh = estimators::empirical_cov_array(x.view(), Centering::KnownZeroMean)?;
                let u = match cfg.plugin {
                    QPlugin::Raw => None,
                    QPlugin::Unbiased => Some(estimators::unbiased_sq_entries(&x)?),
                };
                let q = thresholded_q(&sh, u.as_ref(), tau);
                let d = estimators::d_diag(&x)?.value;
                let bs = estimators::bs_b2_from_cov(sh.view(), n)?;
                let cq = estimators::unbiased_tr_sq_parts(&x.clone().with_centering(Centering::CenterByColumnMean))?.total;
                Ok([
                    (q + d - truth_total).abs(),
                    (bs - truth_total).abs(),
                    (cq - truth_total).abs(),
                    (q - truth_q).abs(),
                    (bs - d - truth_q).abs(),
                    (cq - d - truth_q).abs(),
                ])
            })?;
            let key = RowKey { experiment: "functional_error", p: cfg.p, n, model: &label, setting: "" };
            for (k, method) in FE_METHODS.iter().enumerate() {
                let m = Moments::from_slice(&errs.iter().map(|e| e[k]).collect::<Vec<_>>());
                table.push(key.row(method, "mae", m.mean(), m.se()));
                table.push(key.row(method, "log2_mae", m.mean().log2(), m.se() / (m.mean() * std::f64::consts::LN_2)));
            }
        }
    }
    table.sort();
    Ok(table)
}

/// Rejection rates and relative errors of the two-sample study.
struct TwoSampleOutcome {
    rejects: [bool; 6],
    /// Percent relative errors of the `‖Σ‖²_F` estimates behind BS, newBS,
    /// CQ and newCQ. The CQ entries average the two per-sample estimates.
    rel: [f64; 4],
}

const REL_METHODS: [TwoSampleMethod; 4] = [TwoSampleMethod::Bs, TwoSampleMethod::NewBs, TwoSampleMethod::Cq, TwoSampleMethod::NewCq];

fn two_sample_model(cfg: &ExperimentConfig) -> ModelKind {
    if cfg.models.len() == 1 && !matches!(cfg.models[0], ModelKind::Ar1 { .. }) {
        return cfg.models[0].clone();
    }
    ModelKind::TwoByTwoBlocks { rho: cfg.block_rho, n_blocks: 250 }
}

/// Runs the two-sample design once per proportion of equal coordinates and
/// returns both the rejection-rate and the relative-error rows.
pub fn two_sample_study(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let kind = two_sample_model(cfg);
    let model = make_model(kind.clone(), cfg.p)?;
    let sampler = GaussianSampler::new(&model)?;
    let truth = model.frobenius_sq();
    let label = kind.label();
    let opts = WaldOptions { alpha: cfg.alpha, sidedness: cfg.sidedness };
    let mut table = ResultTable::default();
    let root = RngSeed::new(cfg.seed);
    let mut rel_all: Vec<Vec<f64>> = vec![Vec::new(); 4];
    for (pi, &prop) in cfg.props.iter().enumerate() {
        let eta = if prop >= 1.0 { 0.0 } else { cfg.eta };
        let design = TwoSampleDesign { n1: cfg.n1, n2: cfg.n2, prop_equal: prop, eta, convention: cfg.convention };
        let mu2 = design.mean_shift(&model)?;
        let outcomes = replicate(cfg.replications, root.child(pi as u64), |s| {
            let (x1, x2) = design.draw(&sampler, &mu2, s)?;
            let work = TwoSampleWork::new(&x1, &x2)?;
            let spec = cfg.threshold.spec(&cfg.cv, &kind, s.child(3));
            let tau = estimators::resolve_threshold(&spec, work.pooled_sample())?.tau;
            let reports = [
                work.bs(&opts, None)?,
                work.bs(&opts, Some(tau))?,
                work.cq(&opts, None)?,
                work.cq(&opts, Some(tau))?,
                twosample::marginal_tests(&x1, &x2, cfg.alpha, twosample::Correction::Bonferroni, MarginalVariance::Pooled)?,
                twosample::marginal_tests(&x1, &x2, cfg.alpha, twosample::Correction::Bh, MarginalVariance::Pooled)?,
            ];
            let pct = |v: f64| 100.0 * (v - truth).abs() / truth;
            let cq_rel = |r: &twosample::TwoSampleReport| (pct(r.functionals[0].value) + pct(r.functionals[1].value)) / 2.0;
            let rel = [pct(reports[0].functionals[0].value), pct(reports[1].functionals[0].value), cq_rel(&reports[2]), cq_rel(&reports[3])];
            Ok(TwoSampleOutcome { rejects: std::array::from_fn(|k| reports[k].reject), rel })
        })?;
        let setting = format!("prop={prop}");
        let key = RowKey { experiment: "two_sample", p: cfg.p, n: cfg.n1 + cfg.n2, model: &label, setting: &setting };
        for (k, method) in TwoSampleMethod::ALL.iter().enumerate() {
            let hits = outcomes.iter().filter(|o| o.rejects[k]).count() as f64;
            let metric = if eta == 0.0 { "size" } else { "power" };
            table.push(key.row(&method.to_string(), metric, hits / cfg.replications as f64, rate_se(hits, cfg.replications)));
        }
        let key = RowKey { experiment: "relative_error", ..key };
        for (k, method) in REL_METHODS.iter().enumerate() {
            let v: Vec<f64> = outcomes.iter().map(|o| o.rel[k]).collect();
            let m = Moments::from_slice(&v);
            table.push(key.row(&method.to_string(), "rel_err_mean_pct", m.mean(), m.se()));
            table.push(key.row(&method.to_string(), "rel_err_sd_pct", m.sd(), m.sd() / (2.0 * (m.count as f64 - 1.0)).sqrt()));
            rel_all[k].extend(v);
        }
    }
    let key = RowKey { experiment: "relative_error", p: cfg.p, n: cfg.n1 + cfg.n2, model: &label, setting: "average" };
    for (k, method) in REL_METHODS.iter().enumerate() {
        let m = Moments::from_slice(&rel_all[k]);
        table.push(key.row(&method.to_string(), "rel_err_mean_pct", m.mean(), m.se()));
        table.push(key.row(&method.to_string(), "rel_err_sd_pct", m.sd(), m.sd() / (2.0 * (m.count as f64 - 1.0)).sqrt()));
    }
    table.sort();
    Ok(table)
}

/// Empirical size and power of the six two-sample tests.
pub fn run_two_sample(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let all = two_sample_study(cfg)?;
    Ok(ResultTable { rows: all.rows.into_iter().filter(|r| r.experiment == "two_sample").collect() })
}

/// Percent relative errors of the `‖Σ‖²_F` estimates used by BS, newBS, CQ
/// and newCQ, per proportion and averaged over proportions.
pub fn run_relative_error(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let all = two_sample_study(cfg)?;
    Ok(ResultTable { rows: all.rows.into_iter().filter(|r| r.experiment == "relative_error").collect() })
}

/// Replicate values of `ℓ_r(Σ̂)` and `ℓ_r(Σ̃_τ)` under the identity null and
/// the planted-block alternative.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSeries {
    pub h0_raw: Vec<f64>,
    pub h0_thresholded: Vec<f64>,
    pub h1_raw: Vec<f64>,
    pub h1_thresholded: Vec<f64>,
}

impl DetectionSeries {
    fn named(&self) -> [(&'static str, &'static str, &Vec<f64>); 4] {
        [
            ("raw", "H0", &self.h0_raw),
            ("thresholded", "H0", &self.h0_thresholded),
            ("raw", "H1", &self.h1_raw),
            ("thresholded", "H1", &self.h1_thresholded),
        ]
    }

    /// `max H₀ − min H₁`; negative when the two samples are separated.
    pub fn overlap(h0: &[f64], h1: &[f64]) -> f64 {
        let max0 = h0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min1 = h1.iter().cloned().fold(f64::INFINITY, f64::min);
        max0 - min1
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["replicate", "h0_raw", "h0_thresholded", "h1_raw", "h1_thresholded"])?;
        for i in 0..self.h0_raw.len() {
            wr.write_record([
                i.to_string(),
                super::fmt_f64(self.h0_raw[i]),
                super::fmt_f64(self.h0_thresholded[i]),
                super::fmt_f64(self.h1_raw[i]),
                super::fmt_f64(self.h1_thresholded[i]),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutput {
    pub table: ResultTable,
    pub series: DetectionSeries,
}

/// Order statistics (`min`, `max`, `overlap`) carry a NaN standard error.
pub fn run_detection_hist(cfg: &ExperimentConfig) -> Result<DetectionOutput> {
    let n = cfg.n_grid[0];
    if cfg.support < 2 || cfg.support > cfg.p {
        return invalid(format!("support size {} must lie in [2, p]", cfg.support));
    }
    let null = GaussianSampler::new(&make_model(ModelKind::Identity, cfg.p)?)?;
    let root = RngSeed::new(cfg.seed);
    let pairs = replicate(cfg.replications, root, |s| {
        let kind = ModelKind::planted_block(cfg.rho, cfg.support, cfg.p, s.child(0))?;
        let alt = GaussianSampler::new(&make_model(kind.clone(), cfg.p)?)?;
        let x0 = null.sample(n, None, s.child(1))?.with_centering(Centering::KnownZeroMean);
        let x1 = alt.sample(n, None, s.child(2))?.with_centering(Centering::KnownZeroMean);
        let (r0, t0, _) = crate::detect::lr_pair(&x0, cfg.r, &cfg.threshold.spec(&cfg.cv, &ModelKind::Identity, s.child(3)))?;
        let (r1, t1, _) = crate::detect::lr_pair(&x1, cfg.r, &cfg.threshold.spec(&cfg.cv, &kind, s.child(4)))?;
        Ok([r0, t0, r1, t1])
    })?;
    let series = DetectionSeries {
        h0_raw: pairs.iter().map(|v| v[0]).collect(),
        h0_thresholded: pairs.iter().map(|v| v[1]).collect(),
        h1_raw: pairs.iter().map(|v| v[2]).collect(),
        h1_thresholded: pairs.iter().map(|v| v[3]).collect(),
    };
    let mut table = ResultTable::default();
    let setting = format!("rho={},support={},r={}", cfg.rho, cfg.support, cfg.r);
    for (method, hyp, values) in series.named() {
        let key = RowKey { experiment: "detection_hist", p: cfg.p, n, model: hyp, setting: &setting };
        let m = Moments::from_slice(values);
        table.push(key.row(method, "mean", m.mean(), m.se()));
        table.push(key.row(method, "min", values.iter().cloned().fold(f64::INFINITY, f64::min), f64::NAN));
        table.push(key.row(method, "max", values.iter().cloned().fold(f64::NEG_INFINITY, f64::max), f64::NAN));
    }
    let key = RowKey { experiment: "detection_hist", p: cfg.p, n, model: "H0-H1", setting: &setting };
    table.push(key.row("raw", "overlap", DetectionSeries::overlap(&series.h0_raw, &series.h1_raw), f64::NAN));
    table.push(key.row("thresholded", "overlap", DetectionSeries::overlap(&series.h0_thresholded, &series.h1_thresholded), f64::NAN));
    table.sort();
    Ok(DetectionOutput { table, series })
}

fn synthetic_alpha(cfg: &ExperimentConfig) -> Array1<f64> {
    let k = (cfg.alpha_frac * cfg.n_assets as f64).round() as usize;
    let mut a = Array1::zeros(cfg.n_assets);
    if cfg.switch_at.is_some() {
        a.slice_mut(ndarray::s![..k.min(cfg.n_assets)]).fill(cfg.alpha_scale);
    }
    a
}

/// Rolling-window alpha tests on synthetic panels. Without a switch point
/// the pricing errors are zero throughout and the rows report the fraction
/// of windows rejecting at level `alpha`; with one, windows ending before the
/// switch and windows lying entirely after it are reported separately.
pub fn run_rolling_alpha(cfg: &ExperimentConfig) -> Result<ResultTable> {
    if cfg.window > cfg.t_total {
        return invalid(format!("window {} exceeds the panel length {}", cfg.window, cfg.t_total));
    }
    let panel_spec = SyntheticPanel {
        t: cfg.t_total,
        n: cfg.n_assets,
        k: cfg.k_factors,
        alpha: synthetic_alpha(cfg),
        switch_at: cfg.switch_at.unwrap_or(0),
        noise_sd: 1.0,
    };
    let switch = cfg.switch_at;
    let fractions = replicate(cfg.replications, RngSeed::new(cfg.seed), |s| {
        let panel = panel_spec.draw(s.child(0))?;
        let spec = cfg.threshold.spec(&cfg.cv, &ModelKind::Identity, s.child(1));
        let reports = factortest::rolling_alpha_tests(&panel, cfg.window, &spec, cfg.alpha)?;
        let frac = |pred: &dyn Fn(usize) -> bool| {
            let sel: Vec<bool> = reports.iter().filter(|r| pred(r.end_index)).map(|r| r.report.reject).collect();
            if sel.is_empty() {
                f64::NAN
            } else {
                sel.iter().filter(|&&b| b).count() as f64 / sel.len() as f64
            }
        };
        Ok(match switch {
            None => [frac(&|_| true), f64::NAN],
            Some(sw) => [frac(&|end| end < sw), frac(&|end| end + 1 >= sw + cfg.window)],
        })
    })?;
    let mut table = ResultTable::default();
    let model = format!("K={}", cfg.k_factors);
    let setting = match switch {
        None => "alpha=0".to_string(),
        Some(sw) => format!("switch_at={sw},alpha={}", cfg.alpha_scale),
    };
    let key = RowKey { experiment: "rolling_alpha", p: cfg.n_assets, n: cfg.window, model: &model, setting: &setting };
    let labels: &[&str] = if switch.is_none() { &["all_windows"] } else { &["pre_switch", "post_switch"] };
    for (k, label) in labels.iter().enumerate() {
        let v: Vec<f64> = fractions.iter().map(|f| f[k]).filter(|x| x.is_finite()).collect();
        let m = Moments::from_slice(&v);
        table.push(key.row("J_alpha", &format!("reject_frac_{label}"), m.mean(), m.se()));
    }
    table.sort();
    Ok(table)
}

/// Mean squared error of the thresholded `Q` estimate as `n` grows, with
/// the least-squares slope of `log MSE` on `log n`.
pub fn run_rate_slope(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let kind = cfg.models[0].clone();
    let model = make_model(kind.clone(), cfg.p)?;
    let sampler = GaussianSampler::new(&model)?;
    let truth = model.q_offdiag();
    let label = kind.label();
    let root = RngSeed::new(cfg.seed);
    let mut table = ResultTable::default();
    let (mut log_n, mut log_mse, mut log_se) = (Vec::new(), Vec::new(), Vec::new());
    for &n in &cfg.n_grid {
        let sq = replicate(cfg.replications, root.child(n as u64), |s| {
            let x = sampler.sample(n, None, s.child(0))?.with_centering(Centering::KnownZeroMean);
            let spec = cfg.threshold.spec(&cfg.cv, &kind, s.child(1));
            let tau = estimators::resolve_threshold(&spec, &x)?.tau;
            let sh = estimators::empirical_cov_array(x.view(), Centering::KnownZeroMean)?;
            let u = match cfg.plugin {
                QPlugin::Raw => None,
                QPlugin::Unbiased => Some(estimators::unbiased_sq_entries(&x)?),
            };
            Ok((thresholded_q(&sh, u.as_ref(), tau) - truth).powi(2))
        })?;
        let m = Moments::from_slice(&sq);
        let key = RowKey { experiment: "rate_slope", p: cfg.p, n, model: &label, setting: "" };
        table.push(key.row("thresholded", "mse", m.mean(), m.se()));
        log_n.push((n as f64).ln());
        log_mse.push(m.mean().ln());
        log_se.push(m.se() / m.mean());
    }
    let slope = stats::ols_slope(&log_n, &log_mse);
    let xbar = log_n.iter().sum::<f64>() / log_n.len() as f64;
    let sxx: f64 = log_n.iter().map(|x| (x - xbar).powi(2)).sum();
    let slope_se = log_n.iter().zip(&log_se).map(|(x, se)| ((x - xbar) / sxx * se).powi(2)).sum::<f64>().sqrt();
    let key = RowKey { experiment: "rate_slope", p: cfg.p, n: 0, model: &label, setting: "fit" };
    table.push(key.row("thresholded", "slope_log_mse_log_n", slope, slope_se));
    table.sort();
    Ok(table)
}

/// Null calibration of `W_d` and `J_α` on synthetic factor panels.
pub fn run_factor_calibration(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let panel_spec = SyntheticPanel::null(cfg.t_total, cfg.n_assets, cfg.k_factors);
    let reps = replicate(cfg.replications, RngSeed::new(cfg.seed), |s| {
        let panel = panel_spec.draw(s.child(0))?;
        let spec = cfg.threshold.spec(&cfg.cv, &ModelKind::Identity, s.child(1));
        let r = factortest::j_alpha_test(&panel, &spec, cfg.alpha)?;
        Ok((r.w_d, r.reject, r.e_wd))
    })?;
    let w = Moments::from_slice(&reps.iter().map(|r| r.0).collect::<Vec<_>>());
    let hits = reps.iter().filter(|r| r.1).count() as f64;
    let key = RowKey { experiment: "factor_calibration", p: cfg.n_assets, n: cfg.t_total, model: &format!("K={}", cfg.k_factors), setting: "null" };
    let mut table = ResultTable::default();
    table.push(key.row("W_d", "mean", w.mean(), w.se()));
    table.push(key.row("W_d", "expected", reps[0].2, 0.0));
    table.push(key.row("J_alpha", "reject_rate", hits / cfg.replications as f64, rate_se(hits, cfg.replications)));
    table.sort();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ExperimentKind, ThresholdChoice};

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(kind);
        c.replications = 8;
        c.p = 20;
        c
    }

    #[test]
    fn functional_error_deterministic() {
        let mut c = small(ExperimentKind::FunctionalError);
        c.n_grid = vec![30];
        let a = run_functional_error(&c).unwrap().to_csv_string().unwrap();
        let b = run_functional_error(&c).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 1 + 4 * 6 * 2);
    }

    #[test]
    fn two_sample_rows() {
        let mut c = small(ExperimentKind::TwoSamplePowerSize);
        c.n1 = 15;
        c.n2 = 15;
        let t = two_sample_study(&c).unwrap();
        assert_eq!(t.filter(|r| r.experiment == "two_sample").count(), 6 * 4);
        let size = t.find("CQ", "prop=1", "size").unwrap();
        assert!((0.0..=1.0).contains(&size.value));
        assert!(t.find("newBS", "average", "rel_err_mean_pct").is_some());
    }

    #[test]
    fn rate_slope_has_fit_row() {
        let mut c = small(ExperimentKind::RateSlope);
        c.n_grid = vec![40, 80];
        c.threshold = ThresholdChoice::Practical(1.5);
        let t = run_rate_slope(&c).unwrap();
        assert!(t.find("thresholded", "fit", "slope_log_mse_log_n").unwrap().value.is_finite());
    }

    #[test]
    fn rolling_with_switch() {
        let mut c = small(ExperimentKind::RollingAlpha);
        c.replications = 2;
        c.t_total = 40;
        c.window = 20;
        c.n_assets = 10;
        c.switch_at = Some(20);
        c.alpha_scale = 2.0;
        let t = run_rolling_alpha(&c).unwrap();
        let post = t.rows.iter().find(|r| r.metric == "reject_frac_post_switch").unwrap();
        assert!(post.value > 0.5);
    }
}
