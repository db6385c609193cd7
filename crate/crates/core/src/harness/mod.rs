//! Monte Carlo experiments, configuration and CSV I/O behind the `sparsecov`
//! binary.
//!
//! Every experiment is a pure function of its [`ExperimentConfig`]:
//! replicate `r` of a setting draws from stream `r` of a seed derived from
//! the setting, replicates run on the rayon pool, and results are reduced in
//! replicate order, so output does not depend on the number of threads.

pub mod config;
pub mod experiments;
pub mod io;

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::cvselect::{CvConfig, CvTarget, SplitRule};
use crate::error::{Error, Result};
use crate::estimators::{QPlugin, ThresholdSpec};
use crate::matgen::{ModelKind, SignalConvention};
use crate::rng::RngSeed;
use crate::twosample::Sidedness;

pub use config::KvConfig;
pub use experiments::*;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub method: String,
    pub p: usize,
    pub n: usize,
    pub model: String,
    pub setting: String,
    pub metric: String,
    pub value: f64,
    pub mc_se: f64,
}

/// Long-format results, one value and its Monte Carlo standard error per row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub const HEADER: [&'static str; 9] = ["experiment", "method", "p", "n", "model", "setting", "metric", "value", "mc_se"];

    pub fn push(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: ResultTable) {
        self.rows.extend(other.rows);
    }

    /// First row matching all given fields.
    pub fn find(&self, method: &str, setting: &str, metric: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.method == method && r.setting == setting && r.metric == metric)
    }

    pub fn filter<'a>(&'a self, pred: impl Fn(&ResultRow) -> bool + 'a) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| pred(r))
    }

    /// Rows ordered by every key column, then by metric.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (&a.experiment, &a.model, &a.setting, a.p, a.n, &a.method, &a.metric).cmp(&(&b.experiment, &b.model, &b.setting, b.p, b.n, &b.method, &b.metric))
        });
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::HEADER)?;
        for r in &self.rows {
            wr.write_record([
                r.experiment.clone(),
                r.method.clone(),
                r.p.to_string(),
                r.n.to_string(),
                r.model.clone(),
                r.setting.clone(),
                r.metric.clone(),
                fmt_f64(r.value),
                fmt_f64(r.mc_se),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Numerical(e.to_string()))
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

/// Which experiment `simulate` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    FunctionalError,
    TwoSamplePowerSize,
    RelativeError,
    DetectionHist,
    RollingAlpha,
    RateSlope,
    FactorCalibration,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "functional-error" => ExperimentKind::FunctionalError,
            "two-sample" | "twosample" => ExperimentKind::TwoSamplePowerSize,
            "relative-error" => ExperimentKind::RelativeError,
            "detection-hist" | "detection" => ExperimentKind::DetectionHist,
            "rolling-alpha" => ExperimentKind::RollingAlpha,
            "rate-slope" => ExperimentKind::RateSlope,
            "factor-calibration" => ExperimentKind::FactorCalibration,
            _ => return Err(Error::Config(format!("unknown experiment `{s}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::FunctionalError => "functional_error",
            ExperimentKind::TwoSamplePowerSize => "two_sample",
            ExperimentKind::RelativeError => "relative_error",
            ExperimentKind::DetectionHist => "detection_hist",
            ExperimentKind::RollingAlpha => "rolling_alpha",
            ExperimentKind::RateSlope => "rate_slope",
            ExperimentKind::FactorCalibration => "factor_calibration",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How experiments pick the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdChoice {
    CrossValidated,
    Practical(f64),
    Explicit(f64),
    Theory { c0: f64, gamma: f64 },
    /// `τ = C√(log p/n)` with `C = 1.75` for the identity model and `1.5`
    /// otherwise.
    ModelDefault,
}

impl ThresholdChoice {
    /// `cv`, `practical:<C>`, `explicit:<tau>`, `theory:<C0>:<gamma>`,
    /// `model-default`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::Config(format!("threshold `{s}` is missing a parameter")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("threshold `{s}`: {e}")))
        };
        Ok(match parts[0].to_ascii_lowercase().as_str() {
            "cv" => ThresholdChoice::CrossValidated,
            "practical" => ThresholdChoice::Practical(num(1)?),
            "explicit" => ThresholdChoice::Explicit(num(1)?),
            "theory" => ThresholdChoice::Theory { c0: num(1)?, gamma: num(2)? },
            "model-default" => ThresholdChoice::ModelDefault,
            _ => return Err(Error::Config(format!("unknown threshold mode `{s}`"))),
        })
    }

    pub fn spec(&self, cv: &CvParams, model: &ModelKind, seed: RngSeed) -> ThresholdSpec {
        match *self {
            ThresholdChoice::CrossValidated => ThresholdSpec::cross_validated(cv.config(seed)),
            ThresholdChoice::Practical(c) => ThresholdSpec::practical(c),
            ThresholdChoice::Explicit(t) => ThresholdSpec::explicit(t),
            ThresholdChoice::Theory { c0, gamma } => ThresholdSpec::theory(c0, gamma),
            ThresholdChoice::ModelDefault => ThresholdSpec::practical(if *model == ModelKind::Identity { 1.75 } else { 1.5 }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvParams {
    pub m: usize,
    pub j: usize,
    pub split: SplitRule,
    pub target: CvTarget,
}

impl Default for CvParams {
    fn default() -> Self {
        CvParams { m: 10, j: 50, split: SplitRule::NOverLogN, target: CvTarget::QFunctional }
    }
}

impl CvParams {
    pub fn config(&self, seed: RngSeed) -> CvConfig {
        CvConfig { m: self.m, j: self.j, split_rule: self.split, target: self.target, seed }
    }
}

pub fn parse_split(s: &str) -> Result<SplitRule> {
    let lower = s.trim().to_ascii_lowercase();
    if lower == "n-over-log-n" || lower == "nlogn" {
        return Ok(SplitRule::NOverLogN);
    }
    if let Some(f) = lower.strip_prefix("fraction:") {
        let f: f64 = f.parse().map_err(|e| Error::Config(format!("split `{s}`: {e}")))?;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("split fraction {f} must lie in (0, 1)")));
        }
        return Ok(SplitRule::Fraction(f));
    }
    Err(Error::Config(format!("unknown split rule `{s}` (use n-over-log-n or fraction:<f>)")))
}

pub fn parse_cv_target(s: &str) -> Result<CvTarget> {
    let lower = s.trim().to_ascii_lowercase();
    Ok(match lower.as_str() {
        "q" | "quadratic" => CvTarget::QFunctional,
        "rho-bar-sq" | "rhobarsq" => CvTarget::RhoBarSq,
        _ => match lower.strip_prefix("lr:") {
            Some(r) => CvTarget::LrFunctional(r.parse().map_err(|e| Error::Config(format!("cv target `{s}`: {e}")))?),
            None => return Err(Error::Config(format!("unknown cv target `{s}`"))),
        },
    })
}

/// Full description of one simulation study. Fields irrelevant to the chosen
/// experiment are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub replications: usize,
    pub p: usize,
    pub n_grid: Vec<usize>,
    pub models: Vec<ModelKind>,
    pub threshold: ThresholdChoice,
    pub cv: CvParams,
    pub plugin: QPlugin,
    pub alpha: f64,
    // two-sample design
    pub n1: usize,
    pub n2: usize,
    pub eta: f64,
    pub props: Vec<f64>,
    pub convention: SignalConvention,
    pub sidedness: Sidedness,
    pub block_rho: f64,
    // detection
    pub rho: f64,
    pub support: usize,
    pub r: f64,
    // factor models
    pub t_total: usize,
    pub window: usize,
    pub n_assets: usize,
    pub k_factors: usize,
    pub alpha_frac: f64,
    pub alpha_scale: f64,
    pub switch_at: Option<usize>,
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 31] = [
        "experiment", "seed", "replications", "p", "n", "n-grid", "models", "threshold", "cv-m", "cv-j", "cv-split", "cv-target",
        "plugin", "alpha", "n1", "n2", "eta", "props", "convention", "sidedness", "block-rho", "rho", "support", "r", "t-total",
        "window", "n-assets", "k-factors", "alpha-frac", "alpha-scale", "switch-at",
    ];

    /// Defaults reproducing the desk-scale version of the corresponding
    /// study.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut c = ExperimentConfig {
            experiment: kind,
            seed: 20140101,
            replications: 500,
            p: 500,
            n_grid: vec![30, 40, 50, 60, 70, 80, 90, 100],
            models: vec![ModelKind::m1(), ModelKind::m2(), ModelKind::m3(), ModelKind::m4()],
            threshold: ThresholdChoice::ModelDefault,
            cv: CvParams::default(),
            plugin: QPlugin::Raw,
            alpha: 0.05,
            n1: 50,
            n2: 50,
            eta: 0.1,
            props: vec![0.0, 0.5, 0.95, 1.0],
            convention: SignalConvention::SquaredNorm,
            sidedness: Sidedness::TwoSided,
            block_rho: 0.3,
            rho: 0.8,
            support: 25,
            r: 1.0,
            t_total: 120,
            window: 60,
            n_assets: 200,
            k_factors: 3,
            alpha_frac: 0.1,
            alpha_scale: 0.5,
            switch_at: None,
        };
        match kind {
            ExperimentKind::FunctionalError => {}
            ExperimentKind::TwoSamplePowerSize | ExperimentKind::RelativeError => {
                c.threshold = ThresholdChoice::CrossValidated;
                c.cv.split = SplitRule::Fraction(0.5);
            }
            ExperimentKind::DetectionHist => {
                c.replications = 1000;
                c.n_grid = vec![100];
                c.threshold = ThresholdChoice::CrossValidated;
            }
            ExperimentKind::RollingAlpha => {
                c.replications = 100;
                c.n_assets = 50;
                c.threshold = ThresholdChoice::CrossValidated;
                c.cv.target = CvTarget::RhoBarSq;
            }
            ExperimentKind::RateSlope => {
                c.replications = 200;
                c.p = 200;
                c.n_grid = vec![50, 100, 200, 400, 800];
                c.models = vec![ModelKind::m2()];
                c.threshold = ThresholdChoice::CrossValidated;
            }
            ExperimentKind::FactorCalibration => {
                c.t_total = 60;
                c.threshold = ThresholdChoice::CrossValidated;
                c.cv.target = CvTarget::RhoBarSq;
            }
        }
        c
    }

    /// Defaults for the experiment named in `kv` (or `fallback`), then every
    /// key present in `kv`.
    pub fn from_kv(kv: &KvConfig, fallback: Option<ExperimentKind>) -> Result<Self> {
        kv.check_keys(&Self::KEYS)?;
        let kind = match kv.raw("experiment") {
            Some(s) => ExperimentKind::parse(s)?,
            None => fallback.ok_or_else(|| Error::Config("no experiment given".into()))?,
        };
        let mut c = Self::defaults(kind);
        if let Some(v) = kv.get("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.get("replications")? {
            c.replications = v;
        }
        if let Some(v) = kv.get("p")? {
            c.p = v;
        }
        if let Some(v) = kv.get_list("n-grid")? {
            c.n_grid = v;
        }
        if let Some(v) = kv.get("n")? {
            c.n_grid = vec![v];
        }
        if let Some(v) = kv.raw("models") {
            c.models = v.split(',').map(ModelKind::parse).collect::<Result<_>>()?;
        }
        if let Some(v) = kv.raw("threshold") {
            c.threshold = ThresholdChoice::parse(v)?;
        }
        if let Some(v) = kv.get("cv-m")? {
            c.cv.m = v;
        }
        if let Some(v) = kv.get("cv-j")? {
            c.cv.j = v;
        }
        if let Some(v) = kv.raw("cv-split") {
            c.cv.split = parse_split(v)?;
        }
        if let Some(v) = kv.raw("cv-target") {
            c.cv.target = parse_cv_target(v)?;
        }
        if let Some(v) = kv.raw("plugin") {
            c.plugin = match v.to_ascii_lowercase().as_str() {
                "raw" => QPlugin::Raw,
                "unbiased" => QPlugin::Unbiased,
                _ => return Err(Error::Config(format!("unknown plugin `{v}`"))),
            };
        }
        if let Some(v) = kv.get("alpha")? {
            c.alpha = v;
        }
        if let Some(v) = kv.get("n1")? {
            c.n1 = v;
        }
        if let Some(v) = kv.get("n2")? {
            c.n2 = v;
        }
        if let Some(v) = kv.get("eta")? {
            c.eta = v;
        }
        if let Some(v) = kv.get_list("props")? {
            c.props = v;
        }
        if let Some(v) = kv.raw("convention") {
            c.convention = match v.to_ascii_lowercase().as_str() {
                "norm" => SignalConvention::Norm,
                "squared-norm" | "squared" => SignalConvention::SquaredNorm,
                _ => return Err(Error::Config(format!("unknown signal convention `{v}`"))),
            };
        }
        if let Some(v) = kv.raw("sidedness") {
            c.sidedness = match v.to_ascii_lowercase().as_str() {
                "upper" | "one-sided" => Sidedness::Upper,
                "two-sided" | "two" => Sidedness::TwoSided,
                _ => return Err(Error::Config(format!("unknown sidedness `{v}`"))),
            };
        }
        macro_rules! set {
            ($($key:literal => $field:ident),*) => {$(
                if let Some(v) = kv.get($key)? {
                    c.$field = v;
                }
            )*};
        }
        set!("block-rho" => block_rho, "rho" => rho, "support" => support, "r" => r, "t-total" => t_total,
             "window" => window, "n-assets" => n_assets, "k-factors" => k_factors, "alpha-frac" => alpha_frac,
             "alpha-scale" => alpha_scale);
        if let Some(v) = kv.get("switch-at")? {
            c.switch_at = Some(v);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.replications < 1 {
            return bad("replications must be at least 1".into());
        }
        if self.n_grid.is_empty() || self.models.is_empty() || self.props.is_empty() {
            return bad("grids must be nonempty".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.p < 2 {
            return bad(format!("p must be at least 2, got {}", self.p));
        }
        if self.cv.m < 1 || self.cv.j < 2 {
            return bad("cv-m must be ≥ 1 and cv-j ≥ 2".into());
        }
        Ok(())
    }

    pub fn run(&self) -> Result<ResultTable> {
        self.validate()?;
        match self.experiment {
            ExperimentKind::FunctionalError => run_functional_error(self),
            ExperimentKind::TwoSamplePowerSize => run_two_sample(self),
            ExperimentKind::RelativeError => run_relative_error(self),
            ExperimentKind::DetectionHist => Ok(run_detection_hist(self)?.table),
            ExperimentKind::RollingAlpha => run_rolling_alpha(self),
            ExperimentKind::RateSlope => run_rate_slope(self),
            ExperimentKind::FactorCalibration => run_factor_calibration(self),
        }
    }
}

/// Runs `f` for replicates `0..reps` on the rayon pool; replicate `r`
/// receives `seed.with_stream(r)`. Results come back in replicate order.
pub fn replicate<T, F>(reps: usize, seed: RngSeed, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(RngSeed) -> Result<T> + Sync,
{
    (0..reps as u64).into_par_iter().map(|r| f(seed.with_stream(r))).collect()
}
