//! Null distributions for the quadratic-time statistics.
//!
//! Two routes are provided: resampling by permuting the `Y` rows, and the
//! spectral route which simulates `sum_ij lambda_i eta_j N_ij^2` from the
//! eigenvalues of the two centered Gram matrices.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, degenerate, input, Result};
use crate::kernels::{center_symmetric, gram, symmetric_eigenvalues, GramMatrix, KernelSpec};
use crate::outcome::{Stopwatch, TestOutcome};
use crate::quadratic::{dcor_centered, frobenius, hsic_biased_centered};
use crate::rng::{derive_seed, substream};
use crate::sample::PairedSample;

/// Eigenvalues for the X side (`lambdas`) and the Y side (`etas`), both
/// descending and strictly above `truncation_tol` times their largest value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSpectrum {
    lambdas: Vec<f64>,
    etas: Vec<f64>,
    truncation_tol: f64,
}

impl EigenSpectrum {
    pub fn new(lambdas: Vec<f64>, etas: Vec<f64>, truncation_tol: f64) -> Result<Self> {
        for (name, v) in [("lambdas", &lambdas), ("etas", &etas)] {
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return input(format!("{name} must be finite and nonnegative"));
            }
            if v.windows(2).any(|w| w[0] < w[1]) {
                return input(format!("{name} must be sorted in descending order"));
            }
        }
        Ok(Self {
            lambdas,
            etas,
            truncation_tol,
        })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    pub fn truncation_tol(&self) -> f64 {
        self.truncation_tol
    }

    /// `(sum lambda)(sum eta)`: the mean of the simulated null.
    pub fn null_mean(&self) -> f64 {
        self.lambdas.iter().sum::<f64>() * self.etas.iter().sum::<f64>()
    }

    /// `2 (sum lambda^2)(sum eta^2)`: the variance of the simulated null.
    pub fn null_variance(&self) -> f64 {
        2.0 * self.lambdas.iter().map(|v| v * v).sum::<f64>()
            * self.etas.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Estimated null distribution of a test statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NullModel {
    /// Simulated or resampled statistic values.
    Empirical(Vec<f64>),
    /// Zero-mean Gaussian with this variance.
    Gaussian { variance: f64 },
    /// Chi-square mixture described by its two spectra.
    Spectrum(EigenSpectrum),
}

impl NullModel {
    pub fn samples(&self) -> Option<&[f64]> {
        match self {
            NullModel::Empirical(s) => Some(s),
            _ => None,
        }
    }
}

/// `(1 + #{null >= observed}) / (1 + N)`.
pub fn upper_tail_pvalue(null: &[f64], observed: f64) -> f64 {
    let exceed = null.iter().filter(|&&v| v >= observed).count();
    (1 + exceed) as f64 / (1 + null.len()) as f64
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Observed statistic, add-one p-value and the resampled null.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationResult {
    pub observed: f64,
    pub p_value: f64,
    pub null: NullModel,
}

/// Permutation test for an arbitrary statistic of a paired sample.
///
/// X rows stay fixed and Y rows are shuffled uniformly; shuffle `i` draws from
/// `substream(seed, i)`.
pub fn permutation_pvalue<F>(
    statistic: F,
    sample: &PairedSample,
    num_permutations: usize,
    seed: u64,
) -> Result<PermutationResult>
where
    F: Fn(&PairedSample) -> Result<f64> + Sync,
{
    permutation_pvalue_indexed(
        |perm| match perm {
            None => statistic(sample),
            Some(p) => statistic(&sample.with_y_permuted(p)?),
        },
        sample.len(),
        num_permutations,
        seed,
    )
}

/// Like [`permutation_pvalue`], for statistics that can be evaluated directly
/// from a permutation of the Y indices (`None` means the observed pairing).
pub fn permutation_pvalue_indexed<F>(
    statistic: F,
    m: usize,
    num_permutations: usize,
    seed: u64,
) -> Result<PermutationResult>
where
    F: Fn(Option<&[usize]>) -> Result<f64> + Sync,
{
    if num_permutations == 0 {
        return config("num_permutations must be at least 1");
    }
    let observed = statistic(None)?;
    let null = (0..num_permutations)
        .into_par_iter()
        .map(|i| {
            let mut perm: Vec<usize> = (0..m).collect();
            perm.shuffle(&mut substream(seed, i as u64));
            statistic(Some(&perm))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PermutationResult {
        observed,
        p_value: upper_tail_pvalue(&null, observed),
        null: NullModel::Empirical(null),
    })
}

/// Settings of the spectral null sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    /// Number of simulated null statistics.
    pub num_draws: usize,
    /// Eigenvalues at or below this fraction of the largest are dropped.
    pub truncation_tol: f64,
    /// At most this many `lambda_i eta_j` weights are simulated.
    pub max_pairs: usize,
    /// Smallest weights are folded into their expectation while the variance
    /// they carry stays below this fraction of the total.
    pub tail_variance_tol: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            num_draws: 10_000,
            truncation_tol: 1e-10,
            max_pairs: 1_000_000,
            tail_variance_tol: 1e-5,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_draws == 0 {
            return config("num_draws must be at least 1");
        }
        if !(0.0..1.0).contains(&self.truncation_tol) {
            return config("truncation_tol must lie in [0, 1)");
        }
        if self.max_pairs == 0 {
            return config("max_pairs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.tail_variance_tol) {
            return config("tail_variance_tol must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Clamps negatives to zero, sorts descending and drops values at or below
/// `tol` times the largest.
pub(crate) fn finalize_spectrum(mut ev: Vec<f64>, tol: f64) -> Vec<f64> {
    for v in ev.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    ev.sort_by(|a, b| b.total_cmp(a));
    let largest = ev.first().copied().unwrap_or(0.0);
    if largest <= 0.0 {
        return Vec::new();
    }
    let floor = tol * largest;
    ev.retain(|&v| v > floor);
    ev
}

/// Eigenvalues of `K_c / m` for a centered Gram matrix, clamped, sorted and truncated.
pub fn gram_spectrum(k_centered: &GramMatrix, truncation_tol: f64) -> Result<Vec<f64>> {
    if !k_centered.is_centered() {
        return input("gram_spectrum expects a centered gram matrix");
    }
    centered_spectrum(k_centered.entries(), truncation_tol)
}

pub(crate) fn centered_spectrum(kc: &DMatrix<f64>, truncation_tol: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&truncation_tol) {
        return config("truncation_tol must lie in [0, 1)");
    }
    let m = kc.nrows() as f64;
    let ev = symmetric_eigenvalues(kc / m)?;
    Ok(finalize_spectrum(ev, truncation_tol))
}

/// Weighted chi-square mixture `offset + sum_k w_k N_k^2`, weights descending.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ChiSquareMixture {
    pub(crate) weights: Vec<f64>,
    pub(crate) offset: f64,
}

impl ChiSquareMixture {
    pub(crate) fn from_spectrum(s: &EigenSpectrum, cfg: &SpectralConfig) -> Result<Self> {
        if s.lambdas.is_empty() || s.etas.is_empty() {
            return degenerate("empty eigenvalue spectrum; the centered gram matrix is zero");
        }
        let mut w: Vec<f64> = s
            .lambdas
            .iter()
            .flat_map(|&l| s.etas.iter().map(move |&e| l * e))
            .collect();
        w.sort_by(|a, b| b.total_cmp(a));
        let total_var: f64 = w.iter().map(|v| v * v).sum();
        let budget = cfg.tail_variance_tol * total_var;
        // Shortest prefix whose complement carries at most `budget` variance.
        let mut keep = w.len();
        let mut tail_var = 0.0;
        while keep > 1 {
            let v = w[keep - 1];
            if tail_var + v * v > budget {
                break;
            }
            tail_var += v * v;
            keep -= 1;
        }
        let keep = keep.min(cfg.max_pairs);
        let offset = w[keep..].iter().sum();
        w.truncate(keep);
        Ok(Self { weights: w, offset })
    }

    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut acc = 0.0;
        for &w in &self.weights {
            let z: f64 = rng.sample(StandardNormal);
            acc += w * z * z;
        }
        acc + self.offset
    }

    /// Draw `k` uses `substream(seed, k)`.
    pub(crate) fn sample(&self, num_draws: usize, seed: u64) -> Vec<f64> {
        (0..num_draws)
            .into_par_iter()
            .map(|k| self.draw(&mut substream(seed, k as u64)))
            .collect()
    }
}

/// Simulates `num_draws` values of `sum_ij lambda_i eta_j N_ij^2` with the default pair limits.
pub fn spectral_null_sample(
    spectrum: &EigenSpectrum,
    num_draws: usize,
    seed: u64,
) -> Result<NullModel> {
    let cfg = SpectralConfig {
        num_draws,
        ..SpectralConfig::default()
    };
    spectral_null_sample_with(spectrum, &cfg, seed)
}

pub fn spectral_null_sample_with(
    spectrum: &EigenSpectrum,
    cfg: &SpectralConfig,
    seed: u64,
) -> Result<NullModel> {
    cfg.validate()?;
    let mixture = ChiSquareMixture::from_spectrum(spectrum, cfg)?;
    Ok(NullModel::Empirical(mixture.sample(cfg.num_draws, seed)))
}

fn kernel_params(
    params: &mut BTreeMap<String, crate::ParamValue>,
    kx: &KernelSpec,
    ky: &KernelSpec,
) {
    params.insert("kernel_x".into(), kx.to_string().into());
    params.insert("kernel_y".into(), ky.to_string().into());
}

/// Spectral test on `m * HSIC_b` with Gram-matrix eigenvalues.
pub fn spectral_test(
    sample: &PairedSample,
    spec_x: &KernelSpec,
    spec_y: &KernelSpec,
    cfg: &SpectralConfig,
    alpha: f64,
    seed: u64,
) -> Result<TestOutcome> {
    spectral_core(sample, spec_x, spec_y, cfg, alpha, seed, false)
}

/// Reports the normalized statistic [`crate::dcor`]. The normalizing norms do
/// not change when Y is shuffled, so the test is the spectral test of
/// `m * HSIC_b` with the same kernels (Brownian kernels give distance correlation).
pub fn dcor_test(
    sample: &PairedSample,
    spec_x: &KernelSpec,
    spec_y: &KernelSpec,
    cfg: &SpectralConfig,
    alpha: f64,
    seed: u64,
) -> Result<TestOutcome> {
    spectral_core(sample, spec_x, spec_y, cfg, alpha, seed, true)
}

fn spectral_core(
    sample: &PairedSample,
    spec_x: &KernelSpec,
    spec_y: &KernelSpec,
    cfg: &SpectralConfig,
    alpha: f64,
    seed: u64,
    normalized: bool,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    cfg.validate()?;
    let m = sample.len();
    if m < 2 {
        return input("spectral test needs at least 2 observations");
    }
    let mut sw = Stopwatch::start();
    let (cx, cy, stat, reported) = sw.statistic(|| -> Result<_> {
        let kx = gram(spec_x, sample.x())?.into_entries();
        let ky = gram(spec_y, sample.y())?.into_entries();
        let cx = center_symmetric(&kx);
        let cy = center_symmetric(&ky);
        let stat = m as f64 * hsic_biased_centered(&cx, &cy, m);
        let reported = if normalized {
            dcor_centered(&cx, &kx, &cy, &ky)?
        } else {
            stat
        };
        Ok((cx, cy, stat, reported))
    })?;
    let null = sw.null(|| -> Result<_> {
        let spectrum = EigenSpectrum::new(
            centered_spectrum(&cx, cfg.truncation_tol)?,
            centered_spectrum(&cy, cfg.truncation_tol)?,
            cfg.truncation_tol,
        )?;
        spectral_null_sample_with(&spectrum, cfg, seed)
    })?;
    let p = upper_tail_pvalue(null.samples().unwrap_or_default(), stat);
    let mut params = BTreeMap::new();
    kernel_params(&mut params, spec_x, spec_y);
    params.insert("draws".into(), cfg.num_draws.into());
    params.insert("truncation_tol".into(), cfg.truncation_tol.into());
    if normalized {
        params.insert("hsic_statistic".into(), stat.into());
    }
    Ok(TestOutcome {
        method: if normalized { "dcor" } else { "hsic-spectral" }.into(),
        statistic: reported,
        p_value: p,
        reject: p <= alpha,
        alpha,
        m,
        params,
        seed,
        seconds: sw.finish(),
    })
}

/// Permutation test on `m * HSIC_b` that reuses both Gram matrices across shuffles.
pub fn hsic_permutation_test(
    sample: &PairedSample,
    spec_x: &KernelSpec,
    spec_y: &KernelSpec,
    num_permutations: usize,
    alpha: f64,
    seed: u64,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let m = sample.len();
    let mut sw = Stopwatch::start();
    let (cx, ky) = sw.statistic(|| -> Result<_> {
        let cx = center_symmetric(gram(spec_x, sample.x())?.entries());
        let ky = gram(spec_y, sample.y())?.into_entries();
        Ok((cx, ky))
    })?;
    let scale = 1.0 / m as f64;
    let eval = |perm: Option<&[usize]>| -> Result<f64> {
        Ok(scale
            * match perm {
                None => frobenius(&cx, &ky),
                Some(p) => permuted_inner(&cx, &ky, p),
            })
    };
    let res =
        sw.null(|| permutation_pvalue_indexed(eval, m, num_permutations, derive_seed(seed, 1)))?;
    let mut params = BTreeMap::new();
    kernel_params(&mut params, spec_x, spec_y);
    params.insert("permutations".into(), num_permutations.into());
    Ok(TestOutcome {
        method: "hsic-permutation".into(),
        statistic: res.observed,
        p_value: res.p_value,
        reject: res.p_value <= alpha,
        alpha,
        m,
        params,
        seed,
        seconds: sw.finish(),
    })
}

/// `sum_ij A[i,j] B[p_i, p_j]`.
pub(crate) fn permuted_inner(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &[usize]) -> f64 {
    let m = a.nrows();
    let mut acc = 0.0;
    for j in 0..m {
        let ac = &a.as_slice()[j * m..(j + 1) * m];
        let bc = &b.as_slice()[p[j] * m..(p[j] + 1) * m];
        acc += ac.iter().zip(p).map(|(x, &pi)| x * bc[pi]).sum::<f64>();
    }
    acc
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return config(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    Ok(())
}
