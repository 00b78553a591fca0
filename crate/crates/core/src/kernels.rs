//! Kernel functions, Gram matrices, centering and bandwidth selection.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, degenerate, input, HsicError, Result};

/// Kernel family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Linear,
    Polynomial,
    Brownian,
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Linear => "linear",
            KernelFamily::Polynomial => "polynomial",
            KernelFamily::Brownian => "brownian",
        }
    }
}

/// A fully specified kernel.
///
/// * Gaussian: `exp(-|x-y|^2 / (2 sigma^2))`
/// * Linear: `x.y`
/// * Polynomial: `(x.y + 1)^degree`
/// * Brownian (fractional Brownian motion covariance):
///   `(|x|^{2H} + |y|^{2H} - |x-y|^{2H}) / 2`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    Gaussian { sigma: f64 },
    Linear,
    Polynomial { degree: u32 },
    Brownian { hurst: f64 },
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        let k = KernelSpec::Gaussian { sigma };
        k.validate()?;
        Ok(k)
    }

    pub fn linear() -> Self {
        KernelSpec::Linear
    }

    pub fn polynomial(degree: u32) -> Result<Self> {
        let k = KernelSpec::Polynomial { degree };
        k.validate()?;
        Ok(k)
    }

    pub fn brownian(hurst: f64) -> Result<Self> {
        let k = KernelSpec::Brownian { hurst };
        k.validate()?;
        Ok(k)
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            KernelSpec::Gaussian { .. } => KernelFamily::Gaussian,
            KernelSpec::Linear => KernelFamily::Linear,
            KernelSpec::Polynomial { .. } => KernelFamily::Polynomial,
            KernelSpec::Brownian { .. } => KernelFamily::Brownian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => config(
                format!("gaussian bandwidth must be positive and finite, got {sigma}"),
            ),
            KernelSpec::Polynomial { degree } if degree < 1 => {
                config("polynomial degree must be at least 1")
            }
            KernelSpec::Brownian { hurst } if !(hurst > 0.0 && hurst < 1.0) => {
                config(format!("hurst index must lie in (0, 1), got {hurst}"))
            }
            _ => Ok(()),
        }
    }

    /// Kernel value for two points of equal dimension. No dimension check.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { sigma } => (-sq_dist(x, y) / (2.0 * sigma * sigma)).exp(),
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Polynomial { degree } => (dot(x, y) + 1.0).powi(degree as i32),
            KernelSpec::Brownian { hurst } => {
                0.5 * (dot(x, x).powf(hurst) + dot(y, y).powf(hurst) - sq_dist(x, y).powf(hurst))
            }
        }
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelSpec::Gaussian { sigma } => write!(f, "gaussian(sigma={sigma})"),
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial { degree } => write!(f, "polynomial(degree={degree})"),
            KernelSpec::Brownian { hurst } => write!(f, "brownian(hurst={hurst})"),
        }
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// Evaluates `spec` at a pair of points.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return input(format!("dimension mismatch: {} vs {}", x.len(), y.len()));
    }
    if x.is_empty() {
        return input("points must have dimension at least 1");
    }
    spec.validate()?;
    Ok(spec.eval_unchecked(x, y))
}

/// Observations stored one per contiguous slice.
pub(crate) struct Rows {
    data: Vec<f64>,
    dim: usize,
}

impl Rows {
    pub(crate) fn new(m: &DMatrix<f64>) -> Self {
        Self {
            data: m.transpose().as_slice().to_vec(),
            dim: m.ncols(),
        }
    }

    #[inline]
    pub(crate) fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }
}

/// Processing state of a Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramState {
    Raw,
    /// `H K H` with `H = I - 11'/m`.
    Centered,
    /// Diagonal set to zero.
    DiagZeroed,
}

/// Symmetric `m x m` kernel matrix with its processing state.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    state: GramState,
}

impl GramMatrix {
    /// Wraps raw kernel values; checks shape and symmetry (relative 1e-12).
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return input("gram matrix must be square and non-empty");
        }
        let scale = entries.amax().max(f64::MIN_POSITIVE);
        let m = entries.nrows();
        for j in 0..m {
            for i in 0..j {
                if (entries[(i, j)] - entries[(j, i)]).abs() > 1e-12 * scale {
                    return input(format!("gram matrix is not symmetric at ({i}, {j})"));
                }
            }
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return input("gram matrix has non-finite entries");
        }
        Ok(Self {
            entries,
            state: GramState::Raw,
        })
    }

    pub(crate) fn with_state(entries: DMatrix<f64>, state: GramState) -> Self {
        Self { entries, state }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn state(&self) -> GramState {
        self.state
    }

    pub fn is_centered(&self) -> bool {
        self.state == GramState::Centered
    }

    pub fn is_diag_zeroed(&self) -> bool {
        self.state == GramState::DiagZeroed
    }

    /// `K[perm[i], perm[j]]`, i.e. the Gram matrix of the reordered observations.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        crate::sample::check_permutation(perm, self.size())?;
        let k = &self.entries;
        Ok(Self {
            entries: DMatrix::from_fn(perm.len(), perm.len(), |i, j| k[(perm[i], perm[j])]),
            state: self.state,
        })
    }

    /// Copy with the diagonal set to zero.
    pub fn zero_diagonal(&self) -> Result<Self> {
        if self.is_centered() {
            return input("cannot zero the diagonal of a centered gram matrix");
        }
        let mut entries = self.entries.clone();
        entries.fill_diagonal(0.0);
        Ok(Self {
            entries,
            state: GramState::DiagZeroed,
        })
    }
}

/// Kernel matrix of the rows of `x`. Exactly symmetric.
pub fn gram(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<GramMatrix> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return input("gram needs at least one row of dimension at least 1");
    }
    spec.validate()?;
    Ok(gram_rows(spec, &Rows::new(x)))
}

pub(crate) fn gram_rows(spec: &KernelSpec, rows: &Rows) -> GramMatrix {
    let m = rows.len();
    let mut k = DMatrix::<f64>::zeros(m, m);
    // Upper triangle column by column, then mirror.
    k.as_mut_slice()
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(j, col)| {
            let xj = rows.row(j);
            for (i, v) in col.iter_mut().enumerate().take(j + 1) {
                *v = spec.eval_unchecked(rows.row(i), xj);
            }
        });
    for j in 0..m {
        for i in 0..j {
            k[(j, i)] = k[(i, j)];
        }
    }
    GramMatrix::with_state(k, GramState::Raw)
}

/// `p x q` matrix of kernel values between rows of `a` and rows of `b`.
pub fn cross_gram(spec: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return input(format!(
            "dimension mismatch: {} vs {} columns",
            a.ncols(),
            b.ncols()
        ));
    }
    if a.ncols() == 0 {
        return input("points must have dimension at least 1");
    }
    spec.validate()?;
    Ok(cross_gram_rows(spec, &Rows::new(a), &Rows::new(b)))
}

pub(crate) fn cross_gram_rows(spec: &KernelSpec, a: &Rows, b: &Rows) -> DMatrix<f64> {
    let (p, q) = (a.len(), b.len());
    let mut k = DMatrix::<f64>::zeros(p, q);
    if p == 0 {
        return k;
    }
    k.as_mut_slice()
        .par_chunks_mut(p)
        .enumerate()
        .for_each(|(j, col)| {
            let bj = b.row(j);
            for (i, v) in col.iter_mut().enumerate() {
                *v = spec.eval_unchecked(a.row(i), bj);
            }
        });
    k
}

/// `H K H` with `H = I - 11'/m`. Idempotent; rejects diagonal-zeroed input.
pub fn center_gram(k: &GramMatrix) -> Result<GramMatrix> {
    if k.is_diag_zeroed() {
        return input("cannot center a diagonal-zeroed gram matrix");
    }
    Ok(GramMatrix::with_state(
        center_symmetric(&k.entries),
        GramState::Centered,
    ))
}

/// Double centering of a symmetric matrix; the result is exactly symmetric.
pub(crate) fn center_symmetric(k: &DMatrix<f64>) -> DMatrix<f64> {
    let m = k.nrows();
    let mf = m as f64;
    // Column means equal row means for symmetric input.
    let means: Vec<f64> = k.column_iter().map(|c| c.sum() / mf).collect();
    let grand = means.iter().sum::<f64>() / mf;
    let mut out = k.clone();
    out.as_mut_slice()
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(j, col)| {
            for (i, v) in col.iter_mut().enumerate() {
                *v = *v - (means[i] + means[j]) + grand;
            }
        });
    out
}

/// Configuration of the median-distance bandwidth heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianHeuristic {
    /// At most this many rows (uniformly subsampled) enter the pairwise median.
    pub max_points: usize,
    /// Take the median of squared distances and return its square root.
    pub squared: bool,
}

impl Default for MedianHeuristic {
    fn default() -> Self {
        Self {
            max_points: 1000,
            squared: false,
        }
    }
}

/// Median pairwise Euclidean distance over unordered pairs `i < j`.
///
/// When `m > max_points`, a uniform subsample of `max_points` rows drawn from
/// `rng` is used; otherwise every row is used and `rng` is not touched.
pub fn median_heuristic<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    cfg: &MedianHeuristic,
    rng: &mut R,
) -> Result<f64> {
    let m = x.nrows();
    if m < 2 {
        return input("median heuristic needs at least two rows");
    }
    if cfg.max_points < 2 {
        return config("median heuristic max_points must be at least 2");
    }
    let rows = Rows::new(x);
    let idx: Vec<usize> = if m > cfg.max_points {
        rand::seq::index::sample(rng, m, cfg.max_points).into_vec()
    } else {
        (0..m).collect()
    };
    let mut d2 = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            d2.push(sq_dist(rows.row(i), rows.row(j)));
        }
    }
    let sigma = if cfg.squared {
        median_in_place(&mut d2).sqrt()
    } else {
        let mut d: Vec<f64> = d2.into_iter().map(f64::sqrt).collect();
        median_in_place(&mut d)
    };
    if !(sigma > 0.0) {
        return degenerate("median pairwise distance is zero (rows are identical)");
    }
    Ok(sigma)
}

/// Median with the two-middle average for even lengths. `v` must be non-empty.
fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (lower, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *m;
    if n % 2 == 1 {
        hi
    } else {
        let lo = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Kernel selection rule applied to one side of a sample before testing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelChoice {
    /// Use this kernel as is.
    Fixed(KernelSpec),
    /// Gaussian kernel with bandwidth from the median heuristic.
    GaussianMedian(MedianHeuristic),
}

impl Default for KernelChoice {
    fn default() -> Self {
        KernelChoice::GaussianMedian(MedianHeuristic::default())
    }
}

impl KernelChoice {
    pub fn resolve<R: Rng + ?Sized>(&self, x: &DMatrix<f64>, rng: &mut R) -> Result<KernelSpec> {
        match self {
            KernelChoice::Fixed(spec) => {
                spec.validate()?;
                Ok(*spec)
            }
            KernelChoice::GaussianMedian(cfg) => {
                let sigma = median_heuristic(x, cfg, rng)?;
                KernelSpec::gaussian(sigma)
            }
        }
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            KernelChoice::Fixed(spec) => spec.family(),
            KernelChoice::GaussianMedian(_) => KernelFamily::Gaussian,
        }
    }
}

impl From<KernelSpec> for KernelChoice {
    fn from(spec: KernelSpec) -> Self {
        KernelChoice::Fixed(spec)
    }
}

/// Symmetric eigenvalues, checking for non-finite input first.
pub(crate) fn symmetric_eigenvalues(a: DMatrix<f64>) -> Result<Vec<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(HsicError::Numerical(
            "eigensolver input has non-finite entries".into(),
        ));
    }
    let ev = a.symmetric_eigenvalues();
    if ev.iter().any(|v| !v.is_finite()) {
        return Err(HsicError::Numerical(
            "eigensolver produced non-finite values".into(),
        ));
    }
    Ok(ev.iter().copied().collect())
}
