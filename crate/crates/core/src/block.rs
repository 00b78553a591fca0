//! Block-averaged HSIC with a Gaussian null.
//!
//! Rows are cut, in their given order, into `floor(m / B)` contiguous blocks
//! of size `B` (the last `m mod B` rows are dropped). Each block contributes
//! an unbiased HSIC estimate, and the block average `xi` is standardized as
//! `T = sqrt(m' B) xi / sigma` with `m' = B floor(m / B)`. Under independence
//! `T` is asymptotically standard normal. The null variance `sigma^2` is
//! estimated either from one within-block permutation per block or directly
//! from the marginal U-statistics `HSIC_u(X, X)` and `HSIC_u(Y, Y)`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{config, degenerate, input, Result};
use crate::kernels::{gram, GramMatrix, KernelSpec};
use crate::null::check_alpha;
use crate::outcome::{Stopwatch, TestOutcome};
use crate::quadratic::hsic_unbiased_raw;
use crate::rng::substream;
use crate::sample::PairedSample;

/// Lower bound returned by the permutation variance estimator.
pub const VARIANCE_FLOOR: f64 = 1e-300;

/// How the block size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BlockSize {
    Fixed(usize),
    /// `B = floor(m^gamma)` with `0 < gamma < 1`.
    Exponent(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceMethod {
    WithinBlockPermutation,
    DirectEstimation,
}

impl VarianceMethod {
    pub fn name(&self) -> &'static str {
        match self {
            VarianceMethod::WithinBlockPermutation => "permute",
            VarianceMethod::DirectEstimation => "direct",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub size: BlockSize,
    pub variance: VarianceMethod,
    pub alpha: f64,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            size: BlockSize::Exponent(0.5),
            variance: VarianceMethod::WithinBlockPermutation,
            alpha: 0.05,
        }
    }
}

impl BlockConfig {
    pub fn with_block_size(block_size: usize) -> Self {
        Self {
            size: BlockSize::Fixed(block_size),
            ..Self::default()
        }
    }

    /// Resolved block size for a sample of `m` rows.
    pub fn block_size(&self, m: usize) -> Result<usize> {
        let b = match self.size {
            BlockSize::Fixed(b) => b,
            BlockSize::Exponent(gamma) => {
                if !(gamma > 0.0 && gamma < 1.0) {
                    return config(format!("block exponent must lie in (0, 1), got {gamma}"));
                }
                ((m as f64).powf(gamma) + 1e-9).floor() as usize
            }
        };
        if b < 4 {
            return config(format!("block size must be at least 4, got {b}"));
        }
        if b > m {
            return input(format!("block size {b} exceeds sample size {m}"));
        }
        Ok(b)
    }
}

/// Block average and the per-block unbiased estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStatistic {
    pub xi_hat: f64,
    pub per_block: Vec<f64>,
    pub block_size: usize,
    /// `m' = B floor(m / B)`.
    pub rows_used: usize,
}

struct Block {
    kx: DMatrix<f64>,
    ky: DMatrix<f64>,
}

fn blocks(
    sample: &PairedSample,
    spec_x: &KernelSpec,
    spec_y: &KernelSpec,
    b: usize,
) -> Result<Vec<Block>> {
    let n_blocks = sample.len() / b;
    (0..n_blocks)
        .into_par_iter()
        .map(|i| {
            let part = sample.rows(i * b, b);
            Ok(Block {
                kx: gram(spec_x, part.x())?.into_entries(),
                ky: gram(spec_y, part.y())?.into_entries(),
            })
        })
        .collect()
}

/// Mean summed in sorted order, so it does not depend on block order.
fn mean_sorted(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn block_statistic(
    sample: &PairedSample,
    spec_x: &KernelSpec,
    spec_y: &KernelSpec,
    cfg: &BlockConfig,
) -> Result<BlockStatistic> {
    let b = cfg.block_size(sample.len())?;
    let blocks = blocks(sample, spec_x, spec_y, b)?;
    Ok(statistic_from_blocks(&blocks, b))
}

fn statistic_from_blocks(blocks: &[Block], b: usize) -> BlockStatistic {
    let per_block: Vec<f64> = blocks
        .par_iter()
        .map(|blk| hsic_unbiased_raw(&blk.kx, &blk.ky))
        .collect();
    BlockStatistic {
        xi_hat: mean_sorted(&per_block),
        rows_used: b * per_block.len(),
        per_block,
        block_size: b,
    }
}

fn require_two_blocks(m: usize, b: usize) -> Result<()> {
    if m / b < 2 {
        return input(format!(
            "need at least 2 blocks for a variance estimate (m = {m}, B = {b})"
        ));
    }
    Ok(())
}

/// `B^2` times the sample variance of per-block statistics recomputed after one
/// independent Y permutation inside each block (block `b` uses `substream(seed, b)`).
pub fn null_variance_permutation(
    sample: &PairedSample,
    spec_x: &KernelSpec,
    spec_y: &KernelSpec,
    cfg: &BlockConfig,
    seed: u64,
) -> Result<f64> {
    let b = cfg.block_size(sample.len())?;
    require_two_blocks(sample.len(), b)?;
    let blocks = blocks(sample, spec_x, spec_y, b)?;
    Ok(permutation_variance(&blocks, b, seed))
}

fn permutation_variance(blocks: &[Block], b: usize, seed: u64) -> f64 {
    let starred: Vec<f64> = blocks
        .par_iter()
        .enumerate()
        .map(|(i, blk)| {
            let mut perm: Vec<usize> = (0..b).collect();
            perm.shuffle(&mut substream(seed, i as u64));
            let ky = DMatrix::from_fn(b, b, |r, c| blk.ky[(perm[r], perm[c])]);
            hsic_unbiased_raw(&blk.kx, &ky)
        })
        .collect();
    // Rounding noise in the per-block estimates is of order eps times this.
    let scale = blocks
        .iter()
        .map(|blk| blk.kx.norm() * blk.ky.norm())
        .sum::<f64>()
        / (blocks.len() * b * b) as f64;
    let v = (b * b) as f64 * sample_variance(&starred);
    if !(v > VARIANCE_FLOOR) || v.sqrt() <= 1e-10 * b as f64 * scale {
        log::warn!("within-block permutation variance is zero; using floor {VARIANCE_FLOOR:e}");
        return VARIANCE_FLOOR;
    }
    v
}

/// Per-block unbiased estimate of `E[k~(X, X')^2]` for one block's Gram matrix.
pub fn direct_variance_block(k: &GramMatrix) -> Result<f64> {
    if k.size() < 4 {
        return input("block must contain at least 4 rows");
    }
    if k.is_centered() || k.is_diag_zeroed() {
        return input("expected a raw gram matrix");
    }
    Ok(hsic_unbiased_raw(k.entries(), k.entries()))
}

/// `2 sigma_x^2 sigma_y^2`, each factor the block mean of the per-block
/// marginal estimates, floored at zero.
pub fn null_variance_direct(
    sample: &PairedSample,
    spec_x: &KernelSpec,
    spec_y: &KernelSpec,
    cfg: &BlockConfig,
) -> Result<f64> {
    let b = cfg.block_size(sample.len())?;
    require_two_blocks(sample.len(), b)?;
    let blocks = blocks(sample, spec_x, spec_y, b)?;
    direct_variance(&blocks)
}

fn direct_variance(blocks: &[Block]) -> Result<f64> {
    let (sx, sy): (Vec<f64>, Vec<f64>) = blocks
        .par_iter()
        .map(|blk| {
            (
                hsic_unbiased_raw(&blk.kx, &blk.kx),
                hsic_unbiased_raw(&blk.ky, &blk.ky),
            )
        })
        .unzip();
    let vx = mean_sorted(&sx).max(0.0);
    let vy = mean_sorted(&sy).max(0.0);
    let v = 2.0 * vx * vy;
    if !(v > 0.0) {
        return degenerate(
            "direct null variance estimate is zero (a side is constant within blocks)",
        );
    }
    Ok(v)
}

/// Upper tail of the standard normal.
pub(crate) fn normal_sf(t: f64) -> f64 {
    0.5 * erfc(t / std::f64::consts::SQRT_2)
}

/// Standardized block statistic `T` with its null variance estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTestStatistic {
    pub t: f64,
    pub statistic: BlockStatistic,
    pub null_variance: f64,
}

pub fn block_standardized(
    sample: &PairedSample,
    spec_x: &KernelSpec,
    spec_y: &KernelSpec,
    cfg: &BlockConfig,
    seed: u64,
) -> Result<BlockTestStatistic> {
    let b = cfg.block_size(sample.len())?;
    require_two_blocks(sample.len(), b)?;
    let blocks = blocks(sample, spec_x, spec_y, b)?;
    standardize(&blocks, b, cfg, seed)
}

fn standardize(
    blocks: &[Block],
    b: usize,
    cfg: &BlockConfig,
    seed: u64,
) -> Result<BlockTestStatistic> {
    let statistic = statistic_from_blocks(blocks, b);
    let null_variance = match cfg.variance {
        VarianceMethod::WithinBlockPermutation => permutation_variance(blocks, b, seed),
        VarianceMethod::DirectEstimation => direct_variance(blocks)?,
    };
    let t = ((statistic.rows_used * b) as f64).sqrt() * statistic.xi_hat / null_variance.sqrt();
    Ok(BlockTestStatistic {
        t,
        statistic,
        null_variance,
    })
}

/// One-sided test: `p = 1 - Phi(T)`.
pub fn block_test(
    sample: &PairedSample,
    spec_x: &KernelSpec,
    spec_y: &KernelSpec,
    cfg: &BlockConfig,
    seed: u64,
) -> Result<TestOutcome> {
    check_alpha(cfg.alpha)?;
    let b = cfg.block_size(sample.len())?;
    require_two_blocks(sample.len(), b)?;
    let mut sw = Stopwatch::start();
    let blocks = sw.statistic(|| blocks(sample, spec_x, spec_y, b))?;
    let st = sw.null(|| standardize(&blocks, b, cfg, seed))?;
    let p = normal_sf(st.t);
    let mut params = BTreeMap::new();
    params.insert("kernel_x".into(), spec_x.to_string().into());
    params.insert("kernel_y".into(), spec_y.to_string().into());
    params.insert("block_size".into(), b.into());
    params.insert("blocks".into(), st.statistic.per_block.len().into());
    params.insert("variance".into(), cfg.variance.name().into());
    params.insert("null_variance".into(), st.null_variance.into());
    params.insert("xi_hat".into(), st.statistic.xi_hat.into());
    Ok(TestOutcome {
        method: "block".into(),
        statistic: st.t,
        p_value: p,
        reject: p <= cfg.alpha,
        alpha: cfg.alpha,
        m: sample.len(),
        params,
        seed,
        seconds: sw.finish(),
    })
}
