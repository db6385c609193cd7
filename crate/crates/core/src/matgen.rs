//! Structured covariance models and seeded Gaussian sampling.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::rng::RngSeed;

/// Named covariance structures. Every built-in kind is a correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    /// `σ_ij = rho^|i−j|` (model M1 with `rho = 0.25`).
    Ar1 { rho: f64 },
    /// Unit diagonal, `rho` on the first off-diagonals (M2 with `rho = 0.3`).
    Banded1 { rho: f64 },
    /// A leading `floor(block_frac·p)` square block with off-diagonal `rho`
    /// (M3 with `rho = 0.3`, `block_frac = 1/20`).
    BlockCorner { rho: f64, block_frac: f64 },
    /// M4.
    Identity,
    /// `n_blocks` diagonal 2×2 blocks with off-diagonal `rho`, clipped to
    /// `floor(p/2)` blocks; remaining coordinates are independent.
    TwoByTwoBlocks { rho: f64, n_blocks: usize },
    /// `σ_ij = rho` for `i ≠ j` both in `support` (0-based).
    PlantedBlock { rho: f64, support: Vec<usize> },
    /// First row and column equal `a` on `support ⊂ {1, …, p−1}` (0-based),
    /// identity elsewhere.
    PlantedRow { a: f64, support: Vec<usize> },
    /// User-supplied matrix.
    Custom,
    /// Computed from data; not checked for definiteness.
    Estimated,
}

impl ModelKind {
    pub fn m1() -> Self {
        ModelKind::Ar1 { rho: 0.25 }
    }
    pub fn m2() -> Self {
        ModelKind::Banded1 { rho: 0.3 }
    }
    pub fn m3() -> Self {
        ModelKind::BlockCorner { rho: 0.3, block_frac: 1.0 / 20.0 }
    }
    pub fn m4() -> Self {
        ModelKind::Identity
    }

    /// Planted block on a support of `size` coordinates drawn uniformly
    /// without replacement from `{0, …, p−1}`.
    pub fn planted_block(rho: f64, size: usize, p: usize, seed: RngSeed) -> Result<Self> {
        if size > p {
            return invalid(format!("support size {size} exceeds dimension {p}"));
        }
        let mut support = index::sample(&mut seed.rng(), p, size).into_vec();
        support.sort_unstable();
        Ok(ModelKind::PlantedBlock { rho, support })
    }

    /// Short label used in result tables (`M1`…`M4` for the standard models).
    pub fn label(&self) -> String {
        match self {
            k if *k == ModelKind::m1() => "M1".into(),
            k if *k == ModelKind::m2() => "M2".into(),
            k if *k == ModelKind::m3() => "M3".into(),
            ModelKind::Identity => "M4".into(),
            ModelKind::Ar1 { rho } => format!("AR1({rho})"),
            ModelKind::Banded1 { rho } => format!("Banded1({rho})"),
            ModelKind::BlockCorner { rho, block_frac } => format!("BlockCorner({rho},{block_frac})"),
            ModelKind::TwoByTwoBlocks { rho, n_blocks } => format!("TwoByTwo({rho},{n_blocks})"),
            ModelKind::PlantedBlock { rho, support } => format!("PlantedBlock({rho},{})", support.len()),
            ModelKind::PlantedRow { a, support } => format!("PlantedRow({a},{})", support.len()),
            ModelKind::Custom => "Custom".into(),
            ModelKind::Estimated => "Estimated".into(),
        }
    }

    /// Parses `M1`..`M4`, `identity`, `ar1:<rho>`, `banded1:<rho>`,
    /// `blockcorner:<rho>[:<frac>]`, `twobytwo:<rho>:<blocks>`.
    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let parts: Vec<&str> = lower.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::Config(format!("model `{s}` is missing parameter {i}")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("model `{s}`: {e}")))
        };
        Ok(match parts[0] {
            "m1" => ModelKind::m1(),
            "m2" => ModelKind::m2(),
            "m3" => ModelKind::m3(),
            "m4" | "identity" => ModelKind::Identity,
            "ar1" => ModelKind::Ar1 { rho: num(1)? },
            "banded1" => ModelKind::Banded1 { rho: num(1)? },
            "blockcorner" => ModelKind::BlockCorner {
                rho: num(1)?,
                block_frac: if parts.len() > 2 { num(2)? } else { 1.0 / 20.0 },
            },
            "twobytwo" => ModelKind::TwoByTwoBlocks { rho: num(1)?, n_blocks: num(2)? as usize },
            _ => return Err(Error::Config(format!("unknown model `{s}`"))),
        })
    }
}

/// A symmetric positive semi-definite `p × p` matrix with its provenance.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    entries: Array2<f64>,
    kind: ModelKind,
    factor: Option<Arc<Array2<f64>>>,
}

impl CovarianceModel {
    /// Validates symmetry and definiteness of a user matrix.
    pub fn custom(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "covariance must be square and nonempty, got {}×{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return invalid("covariance has non-finite entries");
        }
        if !linalg::is_symmetric_exact(entries.view()) {
            return invalid("covariance is not symmetric");
        }
        let factor = linalg::cholesky_with_jitter(entries.view())?;
        Ok(CovarianceModel { entries, kind: ModelKind::Custom, factor: Some(Arc::new(factor)) })
    }

    /// Wraps an estimate without a definiteness check.
    pub fn estimated(entries: Array2<f64>) -> Self {
        CovarianceModel { entries, kind: ModelKind::Estimated, factor: None }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.entries.view()
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }

    /// `Q(Σ) = Σ_{i≠j} σ_ij²`.
    pub fn q_offdiag(&self) -> f64 {
        let p = self.dim();
        let mut s = 0.0;
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    s += self.entries[[i, j]] * self.entries[[i, j]];
                }
            }
        }
        s
    }

    /// `D(Σ) = Σ_i σ_ii²`.
    pub fn d_diag(&self) -> f64 {
        self.entries.diag().iter().map(|v| v * v).sum()
    }

    /// `‖Σ‖²_F = tr(Σ²)`.
    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }

    /// `max_i Σ_j |σ_ij|^r`, diagonal included.
    pub fn lr(&self, r: f64) -> f64 {
        self.entries
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|v| v.abs().powf(r)).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Average squared off-diagonal correlation.
    pub fn rho_bar_sq(&self) -> f64 {
        let p = self.dim();
        if p < 2 {
            return 0.0;
        }
        let d = self.entries.diag();
        let mut s = 0.0;
        for i in 0..p {
            for j in 0..i {
                let r = self.entries[[i, j]] / (d[i] * d[j]).sqrt();
                s += r * r;
            }
        }
        2.0 * s / (p as f64 * (p as f64 - 1.0))
    }

    /// Lower Cholesky factor, cached for built-in and custom models.
    pub fn factor(&self) -> Result<Arc<Array2<f64>>> {
        match &self.factor {
            Some(f) => Ok(Arc::clone(f)),
            None => Ok(Arc::new(linalg::cholesky_with_jitter(self.entries.view())?)),
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > -1.0 && rho < 1.0) {
        return invalid(format!("correlation parameter {rho} must lie in (-1, 1)"));
    }
    Ok(())
}

fn check_support(support: &[usize], p: usize, lo: usize) -> Result<()> {
    let mut seen = vec![false; p];
    for &s in support {
        if s < lo || s >= p {
            return invalid(format!("support index {s} outside {lo}..{p}"));
        }
        if seen[s] {
            return invalid(format!("support index {s} repeated"));
        }
        seen[s] = true;
    }
    Ok(())
}

/// Builds the named model. Both triangles are written from the same value, and
/// the result is verified positive semi-definite through a Cholesky
/// factorisation, which is cached for sampling.
pub fn make_model(kind: ModelKind, p: usize) -> Result<CovarianceModel> {
    if p < 2 {
        return invalid(format!("dimension must be at least 2, got {p}"));
    }
    let mut m = Array2::<f64>::eye(p);
    let mut set = |i: usize, j: usize, v: f64| {
        m[[i, j]] = v;
        m[[j, i]] = v;
    };
    match &kind {
        ModelKind::Ar1 { rho } => {
            check_rho(*rho)?;
            for i in 0..p {
                for j in 0..i {
                    set(i, j, rho.powi((i - j) as i32));
                }
            }
        }
        ModelKind::Banded1 { rho } => {
            check_rho(*rho)?;
            for i in 1..p {
                set(i, i - 1, *rho);
            }
        }
        ModelKind::BlockCorner { rho, block_frac } => {
            check_rho(*rho)?;
            if !(*block_frac > 0.0 && *block_frac <= 1.0) {
                return invalid(format!("block fraction {block_frac} must lie in (0, 1]"));
            }
            let b = (block_frac * p as f64).floor() as usize;
            for i in 0..b {
                for j in 0..i {
                    set(i, j, *rho);
                }
            }
        }
        ModelKind::Identity => {}
        ModelKind::TwoByTwoBlocks { rho, n_blocks } => {
            check_rho(*rho)?;
            let blocks = (*n_blocks).min(p / 2);
            for b in 0..blocks {
                set(2 * b + 1, 2 * b, *rho);
            }
        }
        ModelKind::PlantedBlock { rho, support } => {
            check_rho(*rho)?;
            check_support(support, p, 0)?;
            for (a, &i) in support.iter().enumerate() {
                for &j in &support[..a] {
                    set(i, j, *rho);
                }
            }
        }
        ModelKind::PlantedRow { a, support } => {
            check_support(support, p, 1)?;
            let k = support.len() as f64;
            if k * a * a >= 1.0 {
                return Err(Error::NotPositiveSemiDefinite(format!(
                    "planted row needs k·a² < 1, got {}",
                    k * a * a
                )));
            }
            for &j in support {
                set(0, j, *a);
            }
        }
        ModelKind::Custom | ModelKind::Estimated => {
            return invalid("custom and estimated models are built with CovarianceModel::custom/estimated");
        }
    }
    let factor = linalg::cholesky_with_jitter(m.view()).map_err(|_| {
        Error::NotPositiveSemiDefinite(format!("{} at p = {p} is not positive semi-definite", kind.label()))
    })?;
    Ok(CovarianceModel { entries: m, kind, factor: Some(Arc::new(factor)) })
}

/// How the mean is handled when forming the empirical covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    /// Rows are known to have mean zero: `Σ̂ = XᵀX/n`.
    KnownZeroMean,
    /// Subtract column means: `Σ̂ = ZᵀZ/(n−1)`.
    #[default]
    CenterByColumnMean,
}

/// An `n × p` data matrix, one observation per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    data: Array2<f64>,
    centering: Centering,
}

impl SampleMatrix {
    pub fn new(data: Array2<f64>, centering: Centering) -> Result<Self> {
        if data.nrows() < 2 {
            return invalid(format!("need at least 2 observations, got {}", data.nrows()));
        }
        if data.ncols() < 1 {
            return invalid("need at least one variable");
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("sample contains non-finite values");
        }
        Ok(SampleMatrix { data, centering })
    }

    pub fn with_centering(mut self, centering: Centering) -> Self {
        self.centering = centering;
        self
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn centering(&self) -> Centering {
        self.centering
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// Rows selected by `idx`, same centering policy.
    pub fn select_rows(&self, idx: &[usize]) -> Result<SampleMatrix> {
        SampleMatrix::new(self.data.select(ndarray::Axis(0), idx), self.centering)
    }
}

/// Reusable `N(mean, Σ)` sampler holding the sparse pattern of the Cholesky
/// factor, so that block and banded models sample in near-linear time.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    p: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl GaussianSampler {
    pub fn new(model: &CovarianceModel) -> Result<Self> {
        let l = model.factor()?;
        let p = l.nrows();
        let rows = (0..p)
            .map(|i| (0..=i).filter_map(|j| (l[[i, j]] != 0.0).then_some((j, l[[i, j]]))).collect())
            .collect();
        Ok(GaussianSampler { p, rows })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// Draws `n` rows. Standard normals are consumed row by row from the
    /// ChaCha stream of `seed`; the triangular product is a fixed-order loop so
    /// the output is bit-reproducible.
    pub fn sample(&self, n: usize, mean: Option<&Array1<f64>>, seed: RngSeed) -> Result<SampleMatrix> {
        if let Some(mu) = mean {
            if mu.len() != self.p {
                return Err(Error::DimensionMismatch(format!(
                    "mean has length {}, model dimension is {}",
                    mu.len(),
                    self.p
                )));
            }
        }
        let mut rng = seed.rng();
        let mut out = Array2::<f64>::zeros((n, self.p));
        let mut z = vec![0.0; self.p];
        for k in 0..n {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let mut row = out.row_mut(k);
            for (i, terms) in self.rows.iter().enumerate() {
                let mut s = 0.0;
                for &(j, lij) in terms {
                    s += lij * z[j];
                }
                row[i] = s + mean.map_or(0.0, |mu| mu[i]);
            }
        }
        SampleMatrix::new(out, Centering::CenterByColumnMean)
    }
}

/// One-shot `N(mean, Σ)` sample; see [`GaussianSampler`] for repeated draws.
pub fn sample_gaussian(
    model: &CovarianceModel,
    n: usize,
    mean: Option<&Array1<f64>>,
    seed: RngSeed,
) -> Result<SampleMatrix> {
    GaussianSampler::new(model)?.sample(n, mean, seed)
}

/// How the signal strength `eta` is mapped to the mean difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignalConvention {
    /// `‖μ₁ − μ₂‖ / √tr(Σ²) = eta`.
    #[default]
    Norm,
    /// `‖μ₁ − μ₂‖² / √tr(Σ²) = eta`, the scaling under which the test
    /// statistics have nontrivial power at `eta = 0.1`.
    SquaredNorm,
}

/// Two-sample mean-shift design.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSampleDesign {
    pub n1: usize,
    pub n2: usize,
    /// Fraction of coordinates where the two means agree.
    pub prop_equal: f64,
    pub eta: f64,
    pub convention: SignalConvention,
}

impl TwoSampleDesign {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prop_equal) {
            return invalid(format!("prop_equal {} outside [0, 1]", self.prop_equal));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return invalid(format!("eta must be a finite nonnegative number, got {}", self.eta));
        }
        if self.prop_equal == 1.0 && self.eta > 0.0 {
            return invalid("prop_equal = 1 leaves no coordinate to carry a positive eta");
        }
        Ok(())
    }

    /// Number of coordinates where `μ₂ ≠ 0`.
    pub fn n_shifted(&self, p: usize) -> usize {
        ((1.0 - self.prop_equal) * p as f64).round() as usize
    }

    /// `μ₂`: equal entries on the trailing `n_shifted` coordinates.
    pub fn mean_shift(&self, model: &CovarianceModel) -> Result<Array1<f64>> {
        self.validate()?;
        let p = model.dim();
        let k = self.n_shifted(p);
        let mut mu = Array1::<f64>::zeros(p);
        if k == 0 || self.eta == 0.0 {
            return Ok(mu);
        }
        let tr_sq = model.frobenius_sq();
        let norm_sq = match self.convention {
            SignalConvention::Norm => self.eta * self.eta * tr_sq,
            SignalConvention::SquaredNorm => self.eta * tr_sq.sqrt(),
        };
        let v = (norm_sq / k as f64).sqrt();
        mu.slice_mut(ndarray::s![p - k..]).fill(v);
        Ok(mu)
    }

    /// Draws `(X₁, X₂)` with `X₁ ~ N(0, Σ)` and `X₂ ~ N(μ₂, Σ)`.
    pub fn draw(&self, sampler: &GaussianSampler, mu2: &Array1<f64>, seed: RngSeed) -> Result<(SampleMatrix, SampleMatrix)> {
        let x1 = sampler.sample(self.n1, None, seed.child(1))?;
        let x2 = sampler.sample(self.n2, Some(mu2), seed.child(2))?;
        Ok((x1, x2))
    }
}

/// Two samples from the mean-shift design with `μ₁ = 0`.
pub fn two_sample_design(
    design: &TwoSampleDesign,
    sigma: &CovarianceModel,
    seed: RngSeed,
) -> Result<(SampleMatrix, SampleMatrix)> {
    let mu2 = design.mean_shift(sigma)?;
    design.draw(&GaussianSampler::new(sigma)?, &mu2, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_is_identity() {
        let m = make_model(ModelKind::Identity, 4).unwrap();
        assert_eq!(m.entries(), &Array2::<f64>::eye(4));
    }

    #[test]
    fn banded_q() {
        let m = make_model(ModelKind::Banded1 { rho: 0.3 }, 4).unwrap();
        assert_abs_diff_eq!(m.q_offdiag(), 0.54, epsilon = 1e-12);
    }

    #[test]
    fn two_by_two_q_is_45() {
        let m = make_model(ModelKind::TwoByTwoBlocks { rho: 0.3, n_blocks: 250 }, 500).unwrap();
        assert_abs_diff_eq!(m.q_offdiag(), 45.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.frobenius_sq(), 545.0, epsilon = 1e-9);
    }

    #[test]
    fn block_corner_rounds_down() {
        let m = make_model(ModelKind::m3(), 45).unwrap();
        // floor(45/20) = 2
        assert_abs_diff_eq!(m.q_offdiag(), 2.0 * 0.09, epsilon = 1e-12);
    }

    #[test]
    fn planted_row_rejects_non_psd() {
        let err = make_model(ModelKind::PlantedRow { a: 0.5, support: vec![1, 2, 3, 4] }, 6).unwrap_err();
        assert!(matches!(err, Error::NotPositiveSemiDefinite(_)));
        assert!(make_model(ModelKind::PlantedRow { a: 0.49, support: vec![1, 2, 3, 4] }, 6).is_ok());
        assert!(make_model(ModelKind::PlantedRow { a: 0.1, support: vec![0] }, 6).is_err());
    }

    #[test]
    fn planted_block_support_is_seeded() {
        let a = ModelKind::planted_block(0.8, 25, 500, RngSeed::new(3)).unwrap();
        let b = ModelKind::planted_block(0.8, 25, 500, RngSeed::new(3)).unwrap();
        assert_eq!(a, b);
        let m = make_model(a, 500).unwrap();
        assert_abs_diff_eq!(m.lr(1.0), 1.0 + 24.0 * 0.8, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_model(ModelKind::Ar1 { rho: 1.0 }, 5).is_err());
        assert!(make_model(ModelKind::Identity, 1).is_err());
        // banded with rho 0.6 is indefinite for large p
        assert!(make_model(ModelKind::Banded1 { rho: 0.6 }, 50).is_err());
    }

    #[test]
    fn sample_is_deterministic() {
        let m = make_model(ModelKind::m1(), 6).unwrap();
        let a = sample_gaussian(&m, 10, None, RngSeed::new(9).with_stream(4)).unwrap();
        let b = sample_gaussian(&m, 10, None, RngSeed::new(9).with_stream(4)).unwrap();
        let c = sample_gaussian(&m, 10, None, RngSeed::new(9).with_stream(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn design_counts_and_scaling() {
        let sigma = make_model(ModelKind::TwoByTwoBlocks { rho: 0.3, n_blocks: 250 }, 500).unwrap();
        let d = TwoSampleDesign { n1: 5, n2: 5, prop_equal: 0.0, eta: 0.1, convention: SignalConvention::Norm };
        let mu = d.mean_shift(&sigma).unwrap();
        assert_abs_diff_eq!(mu.dot(&mu), 5.45, epsilon = 1e-10);
        let d = TwoSampleDesign { convention: SignalConvention::SquaredNorm, ..d };
        let mu = d.mean_shift(&sigma).unwrap();
        assert_abs_diff_eq!(mu.dot(&mu), 0.1 * 545f64.sqrt(), epsilon = 1e-10);

        let small = make_model(ModelKind::Identity, 100).unwrap();
        let d = TwoSampleDesign { n1: 5, n2: 5, prop_equal: 0.95, eta: 0.1, convention: SignalConvention::Norm };
        let mu = d.mean_shift(&small).unwrap();
        assert_eq!(mu.iter().filter(|v| **v != 0.0).count(), 5);
        assert!(mu.slice(ndarray::s![95..]).iter().all(|v| *v > 0.0));

        let null = TwoSampleDesign { prop_equal: 1.0, eta: 0.0, ..d.clone() };
        assert!(null.mean_shift(&small).unwrap().iter().all(|v| *v == 0.0));
        let bad = TwoSampleDesign { prop_equal: 1.0, eta: 0.1, ..d };
        assert!(bad.mean_shift(&small).is_err());
    }

    #[test]
    fn parse_models() {
        assert_eq!(ModelKind::parse("M2").unwrap(), ModelKind::m2());
        assert_eq!(ModelKind::parse("ar1:0.5").unwrap(), ModelKind::Ar1 { rho: 0.5 });
        assert_eq!(
            ModelKind::parse("twobytwo:0.3:250").unwrap(),
            ModelKind::TwoByTwoBlocks { rho: 0.3, n_blocks: 250 }
        );
        assert!(ModelKind::parse("m9").is_err());
        assert_eq!(ModelKind::m3().label(), "M3");
    }
}
