use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sparsecov::cvselect::{self, CvConfig};
use sparsecov::detect;
use sparsecov::estimators::{self, ThresholdSpec};
use sparsecov::factortest;
use sparsecov::harness::{self, io as csvio, ExperimentConfig, ExperimentKind, KvConfig, ThresholdChoice};
use sparsecov::rates::{self, RateQuery};
use sparsecov::twosample::{self, MarginalVariance, Sidedness, TwoSampleMethod, WaldOptions};
use sparsecov::{Centering, Error, ModelKind, Result, RngSeed, SampleMatrix};

#[derive(Parser, Debug)]
#[command(name = "sparsecov", version, about = "Thresholding estimators of covariance functionals and the tests built on them")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output CSV path (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Flat `key = value` configuration file; flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ThresholdArgs {
    /// `cv`, `practical:<C>`, `explicit:<tau>` or `theory:<C0>:<gamma>`.
    #[arg(long)]
    threshold: Option<String>,
    /// Number of CV splits.
    #[arg(long)]
    cv_m: Option<usize>,
    /// Number of CV grid points.
    #[arg(long)]
    cv_j: Option<usize>,
    /// `n-over-log-n` or `fraction:<f>`.
    #[arg(long)]
    cv_split: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate covariance functionals from a sample CSV.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        /// Treat the data as mean zero instead of centering columns.
        #[arg(long)]
        zero_mean: bool,
        /// Exponent of the row functional.
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[command(flatten)]
        th: ThresholdArgs,
    },
    /// Cross-validate the threshold and print the loss curve.
    Cv {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        zero_mean: bool,
        /// `q`, `rho-bar-sq` or `lr:<r>`.
        #[arg(long)]
        target: Option<String>,
        #[command(flatten)]
        th: ThresholdArgs,
    },
    /// Two-sample tests of equal means.
    Twosample {
        #[arg(long)]
        x1: PathBuf,
        #[arg(long)]
        x2: PathBuf,
        /// Comma-separated methods (BS, newBS, CQ, newCQ, Bonf, BH) or `all`.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Reject only in the upper tail.
        #[arg(long)]
        one_sided: bool,
        /// Welch instead of pooled variances for the marginal t-tests.
        #[arg(long)]
        welch: bool,
        #[command(flatten)]
        th: ThresholdArgs,
    },
    /// Test for zero pricing errors in a factor model.
    FactorTest {
        /// Dated returns CSV: `date,asset1,...`.
        #[arg(long)]
        returns: PathBuf,
        /// Dated factors CSV: `date,factor1,...`.
        #[arg(long)]
        factors: PathBuf,
        /// Rolling window length; the whole sample when omitted.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        th: ThresholdArgs,
    },
    /// Detect correlation with the thresholded row functional.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        zero_mean: bool,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        /// Rejection cutoff `s`; calibrated by simulation under the identity when omitted.
        #[arg(long)]
        cutoff: Option<f64>,
        /// Null draws used for calibration.
        #[arg(long, default_value_t = 1000)]
        null_draws: usize,
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        th: ThresholdArgs,
    },
    /// Evaluate rate, threshold and detection-boundary formulas.
    Rates {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        /// Sparsity index.
        #[arg(long)]
        q: Option<f64>,
        /// Sparsity radius.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        c0: Option<f64>,
        /// Envelope constant.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Signal strength for the detection envelope.
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Run a Monte Carlo experiment.
    Simulate {
        /// functional-error, two-sample, relative-error, detection-hist,
        /// rolling-alpha, rate-slope or factor-calibration.
        experiment: String,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        /// Comma-separated sample sizes.
        #[arg(long)]
        n_grid: Option<String>,
        /// Comma-separated models (m1..m4, identity, ar1:<rho>, ...).
        #[arg(long)]
        models: Option<String>,
        #[arg(long)]
        threshold: Option<String>,
        /// Any configuration key, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Per-replicate series CSV (detection-hist only).
        #[arg(long)]
        series_out: Option<PathBuf>,
    },
}

struct Ctx {
    kv: KvConfig,
    seed: u64,
    out: Option<PathBuf>,
}

impl Ctx {
    fn pick<T: std::str::FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => self.kv.get_or(key, default),
        }
    }

    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(File::create(p)?),
            None => Box::new(io::stdout().lock()),
        })
    }

    fn threshold(&self, th: &ThresholdArgs, default: &str) -> Result<ThresholdSpec> {
        let choice = ThresholdChoice::parse(&self.pick(th.threshold.clone(), "threshold", default.to_string())?)?;
        let mut cv = harness::CvParams { m: self.pick(th.cv_m, "cv-m", 10)?, j: self.pick(th.cv_j, "cv-j", 50)?, ..Default::default() };
        if let Some(s) = th.cv_split.clone().or_else(|| self.kv.raw("cv-split").map(str::to_string)) {
            cv.split = harness::parse_split(&s)?;
        }
        if let Some(s) = self.kv.raw("cv-target") {
            cv.target = harness::parse_cv_target(s)?;
        }
        Ok(choice.spec(&cv, &ModelKind::Custom, RngSeed::new(self.seed)))
    }
}

fn centering(zero_mean: bool) -> Centering {
    if zero_mean {
        Centering::KnownZeroMean
    } else {
        Centering::CenterByColumnMean
    }
}

fn load_sample(path: &Path, zero_mean: bool) -> Result<SampleMatrix> {
    csvio::read_sample_csv(path, centering(zero_mean))
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn write_rows(w: Box<dyn Write>, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header)?;
    for r in rows {
        wr.write_record(r)?;
    }
    wr.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let kv = match &cli.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::default(),
    };
    let seed = match cli.seed {
        Some(s) => s,
        None => kv.get_or("seed", 20140101)?,
    };
    if let Some(t) = cli.threads.or(kv.get("threads")?) {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().map_err(|e| Error::Config(e.to_string()))?;
    }
    let ctx = Ctx { kv, seed, out: cli.out };
    match cli.command {
        Command::Estimate { input, zero_mean, r, th } => {
            let x = load_sample(&input, zero_mean)?;
            let spec = ctx.threshold(&th, "cv")?;
            let res = estimators::resolve_threshold(&spec, &x)?;
            for w in &res.warnings {
                log::warn!("{w}");
            }
            let t = estimators::threshold(&estimators::empirical_cov(&x)?, res.tau)?;
            let q = estimators::q_offdiag(&t).value;
            let d = estimators::d_diag(&x)?.value;
            let rows = vec![
                ("Qoff", q, Some(res.tau)),
                ("Ddiag", d, None),
                ("TotalFrobSq", q + d, Some(res.tau)),
                ("Lr", estimators::lr_functional(&t, r)?.value, Some(res.tau)),
                ("BsB2", estimators::bs_b2(&x)?.value, None),
                ("UnbiasedTrSq", estimators::unbiased_tr_sq_parts(&x)?.total, None),
            ];
            let rows = rows.into_iter().map(|(k, v, tau)| vec![k.to_string(), fmt(v), opt(tau), x.n().to_string(), x.p().to_string(), t.n_kept().to_string()]).collect();
            write_rows(ctx.writer()?, &["functional", "value", "tau", "n", "p", "kept_offdiag"], rows)
        }
        Command::Cv { input, zero_mean, target, th } => {
            let x = load_sample(&input, zero_mean)?;
            let target = match target.or_else(|| ctx.kv.raw("cv-target").map(str::to_string)) {
                Some(t) => harness::parse_cv_target(&t)?,
                None => cvselect::CvTarget::QFunctional,
            };
            let mut cfg = CvConfig { m: ctx.pick(th.cv_m, "cv-m", 10)?, j: ctx.pick(th.cv_j, "cv-j", 50)?, target, seed: RngSeed::new(ctx.seed), ..Default::default() };
            if let Some(s) = th.cv_split.or_else(|| ctx.kv.raw("cv-split").map(str::to_string)) {
                cfg.split_rule = harness::parse_split(&s)?;
            }
            let trace = cvselect::cv_threshold(&x, &cfg)?;
            log::info!("j* = {}, tau = {}", trace.j_star, trace.tau_final);
            let step = trace.full_step(x.p(), x.n());
            let rows = trace
                .grid
                .iter()
                .zip(&trace.losses)
                .enumerate()
                .map(|(i, (g, l))| vec![(i + 1).to_string(), fmt(*g), fmt((i + 1) as f64 * step), fmt(*l), (i + 1 == trace.j_star).to_string()])
                .collect();
            write_rows(ctx.writer()?, &["j", "tau_train", "tau_full", "loss", "selected"], rows)
        }
        Command::Twosample { x1, x2, methods, alpha, one_sided, welch, th } => {
            let x1 = load_sample(&x1, false)?;
            let x2 = load_sample(&x2, false)?;
            let alpha = ctx.pick(alpha, "alpha", 0.05)?;
            let sidedness = if one_sided { Sidedness::Upper } else { Sidedness::TwoSided };
            let variance = if welch { MarginalVariance::Welch } else { MarginalVariance::Pooled };
            let wanted: Vec<TwoSampleMethod> = match methods.or_else(|| ctx.kv.raw("methods").map(str::to_string)) {
                None => TwoSampleMethod::ALL.to_vec(),
                Some(s) if s.eq_ignore_ascii_case("all") => TwoSampleMethod::ALL.to_vec(),
                Some(s) => s.split(',').map(|m| TwoSampleMethod::parse(m.trim())).collect::<Result<_>>()?,
            };
            let spec = ctx.threshold(&th, "cv")?;
            let reports = twosample::run_all(&x1, &x2, &WaldOptions { alpha, sidedness }, &spec, variance)?;
            let rows = reports
                .into_iter()
                .filter(|r| wanted.contains(&r.method))
                .map(|r| vec![r.method.to_string(), fmt(r.statistic), opt(r.z), opt(r.null_variance), fmt(r.p_value), r.reject.to_string(), opt(r.tau)])
                .collect();
            write_rows(ctx.writer()?, &["method", "statistic", "z", "null_variance", "p_value", "reject", "tau"], rows)
        }
        Command::FactorTest { returns, factors, window, alpha, th } => {
            let panel = csvio::read_factor_panel(&returns, &factors)?;
            let alpha = ctx.pick(alpha, "alpha", 0.05)?;
            let mut spec = ctx.threshold(&th, "cv")?;
            if let estimators::ThresholdMode::CrossValidated(cfg) = &mut spec.mode {
                if ctx.kv.raw("cv-target").is_none() {
                    cfg.target = cvselect::CvTarget::RhoBarSq;
                }
            }
            let header = ["window_end", "n_assets", "dropped_assets", "nu", "w_d", "e_wd", "var_wd", "rho_bar_sq", "j_alpha", "p_value", "reject", "tau"];
            let row = |end: &str, dropped: usize, r: &factortest::AlphaTestReport| {
                vec![
                    end.to_string(),
                    r.n_assets.to_string(),
                    dropped.to_string(),
                    r.nu.to_string(),
                    fmt(r.w_d),
                    fmt(r.e_wd),
                    fmt(r.var_wd),
                    fmt(r.rho_bar_sq_hat),
                    fmt(r.j_alpha),
                    fmt(r.p_value),
                    r.reject.to_string(),
                    fmt(r.tau_used),
                ]
            };
            let rows = match window.or(ctx.kv.get("window")?) {
                Some(w) => factortest::rolling_alpha_tests(&panel, w, &spec, alpha)?.iter().map(|r| row(&r.window_end, r.dropped_assets, &r.report)).collect(),
                None => {
                    let (full, dropped) = panel.window(0, panel.t())?;
                    let r = factortest::j_alpha_test(&full, &spec, alpha)?;
                    vec![row(full.dates.last().map(String::as_str).unwrap_or(""), dropped, &r)]
                }
            };
            write_rows(ctx.writer()?, &header, rows)
        }
        Command::Detect { input, zero_mean, r, cutoff, null_draws, alpha, th } => {
            let x = load_sample(&input, zero_mean)?;
            let spec = ctx.threshold(&th, "cv")?;
            let alpha = ctx.pick(alpha, "alpha", 0.05)?;
            let cutoff = match cutoff.or(ctx.kv.get("cutoff")?) {
                Some(c) => c,
                None => detect::calibrate_cutoff(null_draws, x.p(), x.n(), r, &spec, alpha, x.centering(), RngSeed::new(ctx.seed).child(1))?.cutoff,
            };
            let (raw, _, _) = detect::lr_pair(&x, r, &spec)?;
            let rep = detect::detect_test(&x, r, &spec, cutoff)?;
            write_rows(
                ctx.writer()?,
                &["r", "l_r_raw", "l_r_thresholded", "cutoff", "reject", "tau"],
                vec![vec![fmt(r), fmt(raw), fmt(rep.l_r_value), fmt(rep.cutoff_s), rep.reject.to_string(), fmt(rep.tau)]],
            )
        }
        Command::Rates { n, p, q, radius, r, gamma, c0, c, delta, kappa } => {
            let d = RateQuery::default();
            let qr = RateQuery {
                n: ctx.pick(n, "n", d.n)?,
                p: ctx.pick(p, "p", d.p)?,
                q: ctx.pick(q, "q", d.q)?,
                radius: ctx.pick(radius, "radius", d.radius)?,
                r: ctx.pick(r, "r", d.r)?,
                gamma: ctx.pick(gamma, "gamma", d.gamma)?,
                c0: ctx.pick(c0, "c0", d.c0)?,
                nu_const: d.nu_const,
            };
            let mut rows: Vec<Vec<String>> = Vec::new();
            let mut push = |name: &str, v: Result<f64>| match v {
                Ok(v) => rows.push(vec![name.to_string(), fmt(v)]),
                Err(e) => log::warn!("{name}: {e}"),
            };
            push("threshold_tau", estimators::rule_threshold(qr.c0, qr.gamma, false, qr.p, qr.n).map(|r| r.tau));
            push("psi_quad", rates::psi_quad(&qr));
            push("phi_quad", rates::phi_quad(&qr));
            push("psi_lr", rates::psi_lr(&qr));
            push("phi_lr", rates::phi_lr(&qr));
            push("kappa_bar", rates::kappa_bar(&qr, c, delta));
            push("kappa_lower", rates::kappa_lower(&qr));
            if let Some(k) = kappa {
                match rates::envelope(&qr, c, delta, k) {
                    Ok(env) => {
                        rows.push(vec!["s0".into(), fmt(env.s0)]);
                        rows.push(vec!["s1".into(), fmt(env.s1)]);
                        rows.push(vec!["separates".into(), env.separates().to_string()]);
                    }
                    Err(e) => return Err(e),
                }
            }
            write_rows(ctx.writer()?, &["quantity", "value"], rows)
        }
        Command::Simulate { experiment, replications, p, n_grid, models, threshold, set, series_out } => {
            let kind = ExperimentKind::parse(&experiment)?;
            let mut kv = ctx.kv.clone();
            kv.set("experiment", experiment.as_str());
            kv.set("seed", ctx.seed.to_string());
            for (key, v) in [("replications", replications.map(|v| v.to_string())), ("p", p.map(|v| v.to_string())), ("n-grid", n_grid), ("models", models), ("threshold", threshold)] {
                if let Some(v) = v {
                    kv.set(key, v);
                }
            }
            for s in &set {
                let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
                kv.set(k, v.trim());
            }
            if kv.raw("threads").is_some() {
                let mut clean = KvConfig::default();
                for k in kv.keys().filter(|k| *k != "threads") {
                    clean.set(k, kv.raw(k).unwrap_or_default());
                }
                kv = clean;
            }
            let cfg = ExperimentConfig::from_kv(&kv, Some(kind))?;
            log::info!("running {} with {} replications", cfg.experiment, cfg.replications);
            let table = if kind == ExperimentKind::DetectionHist {
                let out = harness::run_detection_hist(&cfg)?;
                if let Some(path) = series_out {
                    out.series.write_csv(File::create(path)?)?;
                }
                out.table
            } else {
                cfg.run()?
            };
            table.write_csv(ctx.writer()?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
