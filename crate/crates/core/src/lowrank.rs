//! Low-rank HSIC through explicit feature maps.
//!
//! A feature matrix `Phi` (m x n) stands in for the Gram matrix via
//! `K ~ Phi Phi'`. With column-centered features the biased HSIC becomes
//! `|(1/m) Phi_x' Phi_y|_F^2`, which costs `O(m n_x n_y)`, and the spectral null
//! uses the eigenvalues of the `n x n` covariance `(1/m) Phi' Phi`.
//!
//! * Nystrom: `Phi = K_mn (K_nn + ridge I)^(-1/2)` for `n` inducing points.
//! * Random Fourier features (Gaussian kernel only): `D/2` frequencies
//!   `w ~ N(0, sigma^-2 I)` and `z(x) = sqrt(2/D) (cos w'x, sin w'x, ...)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, input, HsicError, Result};
use crate::kernels::{cross_gram, gram, symmetric_eigenvalues, KernelFamily, KernelSpec};
use crate::null::EigenSpectrum;
use crate::null::{
    check_alpha, finalize_spectrum, spectral_null_sample_with, upper_tail_pvalue, SpectralConfig,
};
use crate::outcome::{Stopwatch, TestOutcome};
use crate::rng::{derive_seed, substream, StreamRng};
use crate::sample::PairedSample;

/// Eigenvalues at or below this fraction of the largest are dropped from `K_nn^(-1/2)`.
pub const PSEUDO_INVERSE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMethod {
    Nystrom,
    Rff,
}

impl FeatureMethod {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMethod::Nystrom => "nystrom",
            FeatureMethod::Rff => "rff",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    phi: DMatrix<f64>,
    centered: bool,
    method: FeatureMethod,
    source: KernelSpec,
}

impl FeatureMatrix {
    pub fn new(phi: DMatrix<f64>, method: FeatureMethod, source: KernelSpec) -> Result<Self> {
        if phi.ncols() == 0 || phi.nrows() == 0 {
            return input("feature matrix must have at least one row and one column");
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return input("feature matrix has non-finite entries");
        }
        Ok(Self {
            phi,
            centered: false,
            method,
            source,
        })
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn method(&self) -> FeatureMethod {
        self.method
    }

    pub fn source(&self) -> &KernelSpec {
        &self.source
    }

    pub fn nrows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.phi.ncols()
    }

    /// Same features with rows reordered: new row `i` is old row `perm[i]`.
    pub(crate) fn rows_permuted(&self, perm: &[usize]) -> Self {
        Self {
            phi: self.phi.select_rows(perm),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InducingStrategy {
    SubsampleData,
    ExternalDraw,
}

/// Nystrom landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingSet {
    points: DMatrix<f64>,
    strategy: InducingStrategy,
}

impl InducingSet {
    /// `n` distinct rows of `x`, chosen uniformly without replacement.
    pub fn subsample<R: Rng + ?Sized>(x: &DMatrix<f64>, n: usize, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return config("number of landmarks must be at least 1");
        }
        if n > x.nrows() {
            return input(format!(
                "cannot subsample {n} landmarks from {} rows",
                x.nrows()
            ));
        }
        let mut rows = index::sample(rng, x.nrows(), n).into_vec();
        rows.sort_unstable();
        Ok(Self {
            points: x.select_rows(&rows),
            strategy: InducingStrategy::SubsampleData,
        })
    }

    /// Landmarks supplied by the caller, e.g. fresh draws from the data distribution.
    pub fn external(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return input("inducing set must be non-empty");
        }
        if points.iter().any(|v| !v.is_finite()) {
            return input("inducing points must be finite");
        }
        Ok(Self {
            points,
            strategy: InducingStrategy::ExternalDraw,
        })
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn strategy(&self) -> InducingStrategy {
        self.strategy
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }
}

/// `1e-8 * trace(K_nn) / n`.
pub fn default_ridge(spec: &KernelSpec, inducing: &InducingSet) -> Result<f64> {
    let k = gram(spec, inducing.points())?;
    Ok(1e-8 * k.entries().trace() / inducing.len() as f64)
}

/// `(K + ridge I)^(-1/2)` restricted to eigenvalues above `PSEUDO_INVERSE_TOL` times the largest.
fn inverse_sqrt(mut k: DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    for i in 0..n {
        k[(i, i)] += ridge;
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(HsicError::Numerical(
            "landmark gram matrix has non-finite entries".into(),
        ));
    }
    let eig = SymmetricEigen::try_new(k, f64::EPSILON, 0).ok_or_else(|| {
        HsicError::Numerical("landmark eigendecomposition did not converge".into())
    })?;
    let largest = eig.eigenvalues.max();
    if !(largest > 0.0) {
        return Err(HsicError::Numerical(
            "landmark gram matrix has no positive eigenvalue".into(),
        ));
    }
    let floor = PSEUDO_INVERSE_TOL * largest;
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = if lam > floor { 1.0 / lam.sqrt() } else { 0.0 };
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(scaled * eig.eigenvectors.transpose())
}

pub fn nystrom_features(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    inducing: &InducingSet,
    ridge: f64,
) -> Result<FeatureMatrix> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return config(format!("ridge must be a nonnegative number, got {ridge}"));
    }
    if inducing.is_empty() {
        return input("inducing set must be non-empty");
    }
    if inducing.points().ncols() != x.ncols() {
        return input(format!(
            "inducing points have dimension {}, data has {}",
            inducing.points().ncols(),
            x.ncols()
        ));
    }
    let knn = gram(spec, inducing.points())?.into_entries();
    let root = inverse_sqrt(knn, ridge)?;
    let kmn = cross_gram(spec, x, inducing.points())?;
    FeatureMatrix::new(kmn * root, FeatureMethod::Nystrom, *spec)
}

/// Frequencies of a Gaussian kernel's random Fourier features.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySet {
    /// `D/2 x d`.
    omegas: DMatrix<f64>,
}

impl FrequencySet {
    pub fn sample<R: Rng + ?Sized>(
        spec: &KernelSpec,
        dim: usize,
        num_features: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let KernelSpec::Gaussian { sigma } = *spec else {
            return Err(HsicError::UnsupportedKernel(format!(
                "random Fourier features need a gaussian kernel, got {}",
                spec.family().name()
            )));
        };
        spec.validate()?;
        if num_features < 2 || !num_features.is_multiple_of(2) {
            return config(format!(
                "number of random features must be even and at least 2, got {num_features}"
            ));
        }
        if dim == 0 {
            return input("points must have dimension at least 1");
        }
        let half = num_features / 2;
        let omegas = DMatrix::from_fn(half, dim, |_, _| {
            rng.sample::<f64, _>(StandardNormal) / sigma
        });
        Ok(Self { omegas })
    }

    pub fn omegas(&self) -> &DMatrix<f64> {
        &self.omegas
    }

    /// `D`.
    pub fn num_features(&self) -> usize {
        2 * self.omegas.nrows()
    }

    fn features(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let proj = x * self.omegas.transpose();
        let scale = (2.0 / self.num_features() as f64).sqrt();
        let m = x.nrows();
        let mut z = DMatrix::zeros(m, self.num_features());
        z.as_mut_slice()
            .par_chunks_mut(2 * m)
            .enumerate()
            .for_each(|(j, pair)| {
                let (c, s) = pair.split_at_mut(m);
                for i in 0..m {
                    let (sin, cos) = proj[(i, j)].sin_cos();
                    c[i] = scale * cos;
                    s[i] = scale * sin;
                }
            });
        z
    }
}

pub fn rff_features<R: Rng + ?Sized>(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    num_features: usize,
    rng: &mut R,
) -> Result<FeatureMatrix> {
    let freqs = FrequencySet::sample(spec, x.ncols(), num_features, rng)?;
    rff_features_with(spec, x, &freqs)
}

pub fn rff_features_with(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    freqs: &FrequencySet,
) -> Result<FeatureMatrix> {
    if freqs.omegas().ncols() != x.ncols() {
        return input(format!(
            "frequencies have dimension {}, data has {}",
            freqs.omegas().ncols(),
            x.ncols()
        ));
    }
    FeatureMatrix::new(freqs.features(x), FeatureMethod::Rff, *spec)
}

/// Subtracts each column mean. Idempotent.
pub fn center_features(f: &FeatureMatrix) -> FeatureMatrix {
    if f.centered {
        return f.clone();
    }
    let mut phi = f.phi.clone();
    let m = phi.nrows() as f64;
    for mut col in phi.column_iter_mut() {
        let mean = col.sum() / m;
        col.add_scalar_mut(-mean);
    }
    FeatureMatrix {
        phi,
        centered: true,
        ..f.clone()
    }
}

fn centered_phi(f: &FeatureMatrix) -> std::borrow::Cow<'_, DMatrix<f64>> {
    if f.centered {
        std::borrow::Cow::Borrowed(&f.phi)
    } else {
        std::borrow::Cow::Owned(center_features(f).phi)
    }
}

/// `|(1/m) Phi_x' Phi_y|_F^2` on column-centered features.
pub fn feature_hsic(fx: &FeatureMatrix, fy: &FeatureMatrix) -> Result<f64> {
    if fx.nrows() != fy.nrows() {
        return input(format!(
            "feature matrices have {} and {} rows",
            fx.nrows(),
            fy.nrows()
        ));
    }
    let m = fx.nrows() as f64;
    let c = centered_phi(fx).tr_mul(&centered_phi(fy)) / m;
    Ok(c.norm_squared())
}

/// Eigenvalues of `(1/m) Phi' Phi`, clamped, sorted descending and truncated.
pub fn feature_spectrum(f: &FeatureMatrix, truncation_tol: f64) -> Result<Vec<f64>> {
    if !f.centered {
        return input("feature_spectrum expects centered features");
    }
    if !(0.0..1.0).contains(&truncation_tol) {
        return config("truncation_tol must lie in [0, 1)");
    }
    let cov = f.phi.tr_mul(&f.phi) / f.nrows() as f64;
    Ok(finalize_spectrum(
        symmetric_eigenvalues(cov)?,
        truncation_tol,
    ))
}

/// Draws `n` landmark points for one side of the sample.
pub type PointSampler = Arc<dyn Fn(usize, &mut StreamRng) -> Result<DMatrix<f64>> + Send + Sync>;

#[derive(Clone, Default)]
pub enum LandmarkSource {
    #[default]
    SubsampleData,
    /// Landmarks drawn from the marginal distributions of `X` and `Y`.
    External { x: PointSampler, y: PointSampler },
}

impl fmt::Debug for LandmarkSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl LandmarkSource {
    pub fn name(&self) -> &'static str {
        match self {
            LandmarkSource::SubsampleData => "subsample",
            LandmarkSource::External { .. } => "external",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Approximation {
    Nystrom {
        landmarks: usize,
        /// `None` selects [`default_ridge`].
        ridge: Option<f64>,
        source: LandmarkSource,
    },
    Rff {
        features: usize,
    },
}

impl Approximation {
    pub fn method(&self) -> FeatureMethod {
        match self {
            Approximation::Nystrom { .. } => FeatureMethod::Nystrom,
            Approximation::Rff { .. } => FeatureMethod::Rff,
        }
    }

    /// Features for one side; `side` is 0 for X and 1 for Y.
    fn features(
        &self,
        spec: &KernelSpec,
        data: &DMatrix<f64>,
        side: usize,
        rng: &mut StreamRng,
    ) -> Result<FeatureMatrix> {
        match self {
            Approximation::Nystrom {
                landmarks,
                ridge,
                source,
            } => {
                let inducing = match source {
                    LandmarkSource::SubsampleData => InducingSet::subsample(data, *landmarks, rng)?,
                    LandmarkSource::External { x, y } => {
                        let draw = if side == 0 { x } else { y };
                        InducingSet::external(draw(*landmarks, rng)?)?
                    }
                };
                let ridge = match ridge {
                    Some(r) => *r,
                    None => default_ridge(spec, &inducing)?,
                };
                nystrom_features(spec, data, &inducing, ridge)
            }
            Approximation::Rff { features } => rff_features(spec, data, *features, rng),
        }
    }

    fn record(&self, params: &mut BTreeMap<String, crate::ParamValue>) {
        match self {
            Approximation::Nystrom {
                landmarks,
                ridge,
                source,
            } => {
                params.insert("landmarks".into(), (*landmarks).into());
                params.insert(
                    "ridge".into(),
                    match ridge {
                        Some(r) => (*r).into(),
                        None => "default".into(),
                    },
                );
                params.insert("landmark_source".into(), source.name().into());
            }
            Approximation::Rff { features } => {
                params.insert("features".into(), (*features).into());
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LowRankNull {
    Spectral,
    /// Every shuffle redraws landmarks or frequencies for both sides.
    Permutation {
        num_permutations: usize,
    },
}

#[derive(Debug, Clone)]
pub struct LowRankConfig {
    pub approximation: Approximation,
    pub null: LowRankNull,
    pub spectral: SpectralConfig,
    pub alpha: f64,
}

impl LowRankConfig {
    pub fn nystrom(landmarks: usize) -> Self {
        Self::with(Approximation::Nystrom {
            landmarks,
            ridge: None,
            source: LandmarkSource::SubsampleData,
        })
    }

    pub fn rff(features: usize) -> Self {
        Self::with(Approximation::Rff { features })
    }

    fn with(approximation: Approximation) -> Self {
        Self {
            approximation,
            null: LowRankNull::Spectral,
            spectral: SpectralConfig::default(),
            alpha: 0.05,
        }
    }
}

/// Draws centered features for both sides from independent streams.
fn side_features(
    approx: &Approximation,
    sample: &PairedSample,
    spec_x: &KernelSpec,
    spec_y: &KernelSpec,
    rng_x: &mut StreamRng,
    rng_y: &mut StreamRng,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let fx = approx.features(spec_x, sample.x(), 0, rng_x)?;
    let fy = approx.features(spec_y, sample.y(), 1, rng_y)?;
    Ok((center_features(&fx), center_features(&fy)))
}

/// Test on `m * feature_hsic`.
///
/// X and Y features come from `substream(seed, 0)` and `substream(seed, 1)`.
/// Shuffle `i` of the permutation null draws its permutation and both feature
/// sets from substreams of `derive_seed(seed, 3)`.
pub fn lowrank_test(
    sample: &PairedSample,
    spec_x: &KernelSpec,
    spec_y: &KernelSpec,
    cfg: &LowRankConfig,
    seed: u64,
) -> Result<TestOutcome> {
    check_alpha(cfg.alpha)?;
    if let Approximation::Rff { .. } = cfg.approximation {
        for spec in [spec_x, spec_y] {
            if spec.family() != KernelFamily::Gaussian {
                return Err(HsicError::UnsupportedKernel(format!(
                    "random Fourier features need a gaussian kernel, got {}",
                    spec.family().name()
                )));
            }
        }
    }
    let m = sample.len();
    if m < 2 {
        return input("low-rank test needs at least 2 observations");
    }
    let mut sw = Stopwatch::start();
    let (fx, fy, stat) = sw.statistic(|| -> Result<_> {
        let (fx, fy) = side_features(
            &cfg.approximation,
            sample,
            spec_x,
            spec_y,
            &mut substream(seed, 0),
            &mut substream(seed, 1),
        )?;
        let stat = m as f64 * feature_hsic(&fx, &fy)?;
        Ok((fx, fy, stat))
    })?;
    let mut params = BTreeMap::new();
    params.insert("kernel_x".into(), spec_x.to_string().into());
    params.insert("kernel_y".into(), spec_y.to_string().into());
    cfg.approximation.record(&mut params);
    let p = match cfg.null {
        LowRankNull::Spectral => {
            cfg.spectral.validate()?;
            let null = sw.null(|| -> Result<_> {
                let spectrum = EigenSpectrum::new(
                    feature_spectrum(&fx, cfg.spectral.truncation_tol)?,
                    feature_spectrum(&fy, cfg.spectral.truncation_tol)?,
                    cfg.spectral.truncation_tol,
                )?;
                spectral_null_sample_with(&spectrum, &cfg.spectral, derive_seed(seed, 2))
            })?;
            params.insert("null".into(), "spectral".into());
            params.insert("draws".into(), cfg.spectral.num_draws.into());
            upper_tail_pvalue(null.samples().unwrap_or_default(), stat)
        }
        LowRankNull::Permutation { num_permutations } => {
            if num_permutations == 0 {
                return config("num_permutations must be at least 1");
            }
            let base = derive_seed(seed, 3);
            let null = sw.null(|| {
                (0..num_permutations)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = substream(base, 3 * i as u64);
                        let mut perm: Vec<usize> = (0..m).collect();
                        perm.shuffle(&mut rng);
                        let (fx, fy) = side_features(
                            &cfg.approximation,
                            sample,
                            spec_x,
                            spec_y,
                            &mut substream(base, 3 * i as u64 + 1),
                            &mut substream(base, 3 * i as u64 + 2),
                        )?;
                        Ok(m as f64 * feature_hsic(&fx, &fy.rows_permuted(&perm))?)
                    })
                    .collect::<Result<Vec<f64>>>()
            })?;
            params.insert("null".into(), "permutation".into());
            params.insert("permutations".into(), num_permutations.into());
            upper_tail_pvalue(&null, stat)
        }
    };
    Ok(TestOutcome {
        method: cfg.approximation.method().name().into(),
        statistic: stat,
        p_value: p,
        reject: p <= cfg.alpha,
        alpha: cfg.alpha,
        m,
        params,
        seed,
        seconds: sw.finish(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{center_gram, kernel_eval};
    use crate::null::gram_spectrum;
    use crate::quadratic::hsic_biased;
    use crate::GramMatrix;
    use proptest::prelude::*;
    use rand::Rng;

    fn normal(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = substream(seed, 41);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn g(sigma: f64) -> KernelSpec {
        KernelSpec::gaussian(sigma).unwrap()
    }

    fn all_points(x: &DMatrix<f64>) -> InducingSet {
        InducingSet::external(x.clone()).unwrap()
    }

    fn sym(a: DMatrix<f64>) -> GramMatrix {
        let s = (&a + a.transpose()) * 0.5;
        GramMatrix::from_entries(s).unwrap()
    }

    #[test]
    fn full_landmarks_reproduce_gram() {
        let x = normal(30, 2, 1);
        let f = nystrom_features(&g(1.0), &x, &all_points(&x), 0.0).unwrap();
        let k = gram(&g(1.0), &x).unwrap();
        let diff = (f.phi() * f.phi().transpose() - k.entries()).amax();
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn single_landmark_is_scaled_kernel_column() {
        let x = normal(9, 3, 2);
        let u = normal(1, 3, 3);
        let spec = KernelSpec::polynomial(2).unwrap();
        let f =
            nystrom_features(&spec, &x, &InducingSet::external(u.clone()).unwrap(), 0.0).unwrap();
        let kuu = kernel_eval(
            &spec,
            u.row(0).transpose().as_slice(),
            u.row(0).transpose().as_slice(),
        )
        .unwrap();
        for i in 0..9 {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let ui: Vec<f64> = u.row(0).iter().copied().collect();
            let want = kernel_eval(&spec, &xi, &ui).unwrap() / kuu.sqrt();
            assert!((f.phi()[(i, 0)] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn nystrom_matches_dense_products() {
        let x = normal(20, 2, 4);
        let u = normal(5, 2, 5);
        let spec = g(0.8);
        let f =
            nystrom_features(&spec, &x, &InducingSet::external(u.clone()).unwrap(), 0.0).unwrap();
        // K_mn K_nn^{-1} K_nm with an explicit inverse.
        let kmn = cross_gram(&spec, &x, &u).unwrap();
        let knn = gram(&spec, &u).unwrap().into_entries();
        let want = &kmn * knn.try_inverse().unwrap() * kmn.transpose();
        let diff = (f.phi() * f.phi().transpose() - want).amax();
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn subsample_draws_distinct_rows() {
        let x = normal(40, 1, 6);
        let set = InducingSet::subsample(&x, 40, &mut substream(1, 0)).unwrap();
        let mut v: Vec<f64> = set.points().iter().copied().collect();
        v.sort_by(f64::total_cmp);
        let mut all: Vec<f64> = x.iter().copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(v, all);
        assert!(InducingSet::subsample(&x, 41, &mut substream(1, 0)).is_err());
        assert_eq!(set.strategy(), InducingStrategy::SubsampleData);
    }

    #[test]
    fn rff_pair_is_cosine_of_difference() {
        let x = normal(6, 3, 7);
        let mut rng = substream(8, 0);
        let freqs = FrequencySet::sample(&g(1.3), 3, 2, &mut rng).unwrap();
        let z = rff_features_with(&g(1.3), &x, &freqs).unwrap();
        let w = freqs.omegas().row(0);
        for i in 0..6 {
            for j in 0..6 {
                let want = (w.dot(&(x.row(i) - x.row(j)))).cos();
                let got = z.phi().row(i).dot(&z.phi().row(j));
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rff_rows_have_unit_norm() {
        let x = normal(50, 4, 9);
        let z = rff_features(&g(0.5), &x, 64, &mut substream(1, 1)).unwrap();
        for i in 0..50 {
            assert!((z.phi().row(i).norm_squared() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rff_approximates_gaussian_kernel() {
        let x = normal(200, 3, 10);
        let z = rff_features(&g(1.0), &x, 2000, &mut substream(2, 0)).unwrap();
        let mut worst: f64 = 0.0;
        for p in 0..100 {
            let (i, j) = (2 * p, 2 * p + 1);
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let xj: Vec<f64> = x.row(j).iter().copied().collect();
            let k = kernel_eval(&g(1.0), &xi, &xj).unwrap();
            worst = worst.max((z.phi().row(i).dot(&z.phi().row(j)) - k).abs());
        }
        // Each estimate has standard deviation at most sqrt(0.5 / (D/2)) ~ 0.022.
        assert!(worst < 4.0 * (0.5f64 / 1000.0).sqrt(), "{worst}");
    }

    #[test]
    fn rff_kernel_estimate_is_unbiased() {
        let x = normal(2, 2, 11);
        let xi: Vec<f64> = x.row(0).iter().copied().collect();
        let xj: Vec<f64> = x.row(1).iter().copied().collect();
        let k = kernel_eval(&g(1.0), &xi, &xj).unwrap();
        let vals: Vec<f64> = (0..200)
            .map(|r| {
                let z = rff_features(&g(1.0), &x, 2, &mut substream(12, r)).unwrap();
                z.phi().row(0).dot(&z.phi().row(1))
            })
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - k).abs() < 3.0 * sd / n.sqrt(), "mean {mean} k {k}");
    }

    #[test]
    fn rff_rejects_other_families_and_odd_counts() {
        let x = normal(5, 1, 13);
        for spec in [
            KernelSpec::linear(),
            KernelSpec::polynomial(2).unwrap(),
            KernelSpec::brownian(0.5).unwrap(),
        ] {
            let err = rff_features(&spec, &x, 10, &mut substream(0, 0)).unwrap_err();
            assert_eq!(err.category(), "unsupported-kernel");
        }
        assert!(rff_features(&g(1.0), &x, 3, &mut substream(0, 0)).is_err());
        assert!(rff_features(&g(1.0), &x, 0, &mut substream(0, 0)).is_err());
    }

    #[test]
    fn centering_examples() {
        let f = FeatureMatrix::new(DMatrix::from_element(4, 2, 3.0), FeatureMethod::Rff, g(1.0))
            .unwrap();
        assert_eq!(center_features(&f).phi().amax(), 0.0);
        let one = FeatureMatrix::new(normal(1, 3, 14), FeatureMethod::Rff, g(1.0)).unwrap();
        assert_eq!(center_features(&one).phi().amax(), 0.0);
        let phi = normal(7, 3, 15);
        let f = FeatureMatrix::new(phi.clone(), FeatureMethod::Nystrom, g(1.0)).unwrap();
        let h = DMatrix::<f64>::identity(7, 7) - DMatrix::from_element(7, 7, 1.0 / 7.0);
        let c = center_features(&f);
        assert!(c.is_centered());
        assert!((c.phi() - h * phi).amax() < 1e-12);
    }

    #[test]
    fn feature_hsic_matches_induced_gram() {
        let fx = FeatureMatrix::new(normal(15, 4, 16), FeatureMethod::Rff, g(1.0)).unwrap();
        let fy = FeatureMatrix::new(normal(15, 4, 17), FeatureMethod::Rff, g(1.0)).unwrap();
        let kx = sym(fx.phi() * fx.phi().transpose());
        let ky = sym(fy.phi() * fy.phi().transpose());
        let want = hsic_biased(&kx, &ky).unwrap();
        assert!((feature_hsic(&fx, &fy).unwrap() - want).abs() < 1e-10);
        let flat = FeatureMatrix::new(
            DMatrix::from_element(15, 3, 0.7),
            FeatureMethod::Rff,
            g(1.0),
        )
        .unwrap();
        assert!(feature_hsic(&fx, &flat).unwrap() < 1e-25);
        let short = FeatureMatrix::new(normal(14, 4, 18), FeatureMethod::Rff, g(1.0)).unwrap();
        assert_eq!(feature_hsic(&fx, &short).unwrap_err().category(), "input");
    }

    #[test]
    fn full_landmarks_reduce_to_exact_pipeline() {
        let x = normal(30, 2, 19);
        let noise = normal(30, 1, 20);
        let y = DMatrix::from_fn(30, 1, |i, _| x[(i, 0)].sin() + 0.5 * noise[(i, 0)]);
        let spec = g(1.0);
        let fx = center_features(&nystrom_features(&spec, &x, &all_points(&x), 0.0).unwrap());
        let fy = center_features(&nystrom_features(&spec, &y, &all_points(&y), 0.0).unwrap());
        let kx = gram(&spec, &x).unwrap();
        let ky = gram(&spec, &y).unwrap();
        let exact = hsic_biased(&kx, &ky).unwrap();
        assert!((feature_hsic(&fx, &fy).unwrap() - exact).abs() < 1e-7);
        let tol = 1e-6;
        let a = feature_spectrum(&fx, tol).unwrap();
        let b = gram_spectrum(&center_gram(&kx).unwrap(), tol).unwrap();
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-7, "{p} vs {q}");
        }
    }

    #[test]
    fn primal_and_dual_spectra_agree() {
        let f = center_features(
            &FeatureMatrix::new(normal(25, 5, 21), FeatureMethod::Rff, g(1.0)).unwrap(),
        );
        let primal = feature_spectrum(&f, 0.0).unwrap();
        let dual = symmetric_eigenvalues(f.phi() * f.phi().transpose() / 25.0).unwrap();
        let dual = finalize_spectrum(dual, 1e-12);
        assert_eq!(primal.len(), 5);
        for (p, q) in primal.iter().zip(&dual) {
            assert!((p - q).abs() < 1e-9);
        }
        let v = normal(10, 1, 22);
        let one = center_features(&FeatureMatrix::new(v, FeatureMethod::Rff, g(1.0)).unwrap());
        let s = feature_spectrum(&one, 0.0).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0] - one.phi().norm_squared() / 10.0).abs() < 1e-14);
        let raw = FeatureMatrix::new(normal(4, 2, 1), FeatureMethod::Rff, g(1.0)).unwrap();
        assert!(feature_spectrum(&raw, 0.0).is_err());
    }

    #[test]
    fn draws_are_deterministic() {
        let x = normal(50, 2, 23);
        let a = rff_features(&g(1.0), &x, 20, &mut substream(5, 0)).unwrap();
        let b = rff_features(&g(1.0), &x, 20, &mut substream(5, 0)).unwrap();
        assert_eq!(a, b);
        let s = PairedSample::new(x.clone(), normal(50, 1, 24)).unwrap();
        let mut cfg = LowRankConfig::nystrom(10);
        cfg.spectral.num_draws = 200;
        let o1 = lowrank_test(&s, &g(1.0), &g(1.0), &cfg, 9).unwrap();
        let o2 = lowrank_test(&s, &g(1.0), &g(1.0), &cfg, 9).unwrap();
        assert_eq!((o1.statistic, o1.p_value), (o2.statistic, o2.p_value));
    }

    #[test]
    fn tests_detect_dependence() {
        let x = normal(300, 1, 25);
        let y = x.map(|v| v * v) + normal(300, 1, 26) * 0.3;
        let s = PairedSample::new(x, y).unwrap();
        let mut cfg = LowRankConfig::rff(50);
        cfg.spectral.num_draws = 1000;
        assert!(lowrank_test(&s, &g(1.0), &g(1.0), &cfg, 1).unwrap().p_value < 0.01);
        let mut cfg = LowRankConfig::nystrom(30);
        cfg.null = LowRankNull::Permutation {
            num_permutations: 200,
        };
        let o = lowrank_test(&s, &g(1.0), &g(1.0), &cfg, 2).unwrap();
        assert!(o.p_value < 0.01);
        assert_eq!(o.method, "nystrom");
    }

    #[test]
    fn external_landmarks_are_used() {
        let s = PairedSample::new(normal(40, 2, 27), normal(40, 1, 28)).unwrap();
        let cfg = LowRankConfig {
            approximation: Approximation::Nystrom {
                landmarks: 5,
                ridge: Some(0.0),
                source: LandmarkSource::External {
                    x: Arc::new(|n, rng| {
                        Ok(DMatrix::from_fn(n, 2, |_, _| rng.sample(StandardNormal)))
                    }),
                    y: Arc::new(|n, rng| {
                        Ok(DMatrix::from_fn(n, 1, |_, _| rng.sample(StandardNormal)))
                    }),
                },
            },
            null: LowRankNull::Permutation {
                num_permutations: 20,
            },
            spectral: SpectralConfig::default(),
            alpha: 0.05,
        };
        let o = lowrank_test(&s, &g(1.0), &g(1.0), &cfg, 3).unwrap();
        assert!(o.p_value > 0.0 && o.p_value <= 1.0);
        assert_eq!(o.params["landmark_source"], "external".into());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rotation_invariance(seed in 0u64..1000, angle in 0.0f64..6.3) {
            let fx = FeatureMatrix::new(normal(12, 2, seed), FeatureMethod::Rff, g(1.0)).unwrap();
            let fy = FeatureMatrix::new(normal(12, 3, seed + 1), FeatureMethod::Rff, g(1.0)).unwrap();
            let (s, c) = angle.sin_cos();
            let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let fr = FeatureMatrix::new(fx.phi() * rot, FeatureMethod::Rff, g(1.0)).unwrap();
            let a = feature_hsic(&fx, &fy).unwrap();
            let b = feature_hsic(&fr, &fy).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-10 * a.max(1.0));
        }
    }
}
