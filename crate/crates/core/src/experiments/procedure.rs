use std::time::Instant;

use crate::block::{block_test, BlockConfig, BlockSize, VarianceMethod};
use crate::error::{config, Result};
use crate::kernels::{KernelChoice, KernelSpec};
use crate::lowrank::{lowrank_test, Approximation, LowRankConfig, LowRankNull};
use crate::null::{
    check_alpha, dcor_test, hsic_permutation_test, permutation_pvalue, spectral_test,
    SpectralConfig,
};
use crate::outcome::TestOutcome;
use crate::quadratic::{sub_corr, sub_hsic_columns};
use crate::rng::{derive_seed, substream};
use crate::sample::PairedSample;

/// Test statistic together with its null approximation.
#[derive(Debug, Clone)]
pub enum Method {
    HsicSpectral(SpectralConfig),
    HsicPermutation {
        num_permutations: usize,
    },
    /// Normalized statistic; same null as `HsicSpectral`.
    Dcor(SpectralConfig),
    Block {
        size: BlockSize,
        variance: VarianceMethod,
    },
    LowRank {
        approximation: Approximation,
        null: LowRankNull,
        spectral: SpectralConfig,
    },
    SubCorr {
        num_permutations: usize,
    },
    SubHsic {
        num_permutations: usize,
    },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::HsicSpectral(_) => "hsic-spectral",
            Method::HsicPermutation { .. } => "hsic-permutation",
            Method::Dcor(_) => "dcor",
            Method::Block { .. } => "block",
            Method::LowRank { approximation, .. } => approximation.method().name(),
            Method::SubCorr { .. } => "subcorr",
            Method::SubHsic { .. } => "subhsic",
        }
    }
}

/// A fully configured test: method, kernel choice per side and level.
#[derive(Debug, Clone)]
pub struct TestProcedure {
    pub method: Method,
    pub kernel_x: KernelChoice,
    pub kernel_y: KernelChoice,
    pub alpha: f64,
}

impl TestProcedure {
    /// Gaussian median-heuristic kernels on both sides, `alpha = 0.05`.
    pub fn new(method: Method) -> Self {
        Self {
            method,
            kernel_x: KernelChoice::default(),
            kernel_y: KernelChoice::default(),
            alpha: 0.05,
        }
    }

    pub fn with_kernels(
        self,
        kernel_x: impl Into<KernelChoice>,
        kernel_y: impl Into<KernelChoice>,
    ) -> Self {
        Self {
            kernel_x: kernel_x.into(),
            kernel_y: kernel_y.into(),
            ..self
        }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }

    pub fn hsic_spectral() -> Self {
        Self::new(Method::HsicSpectral(SpectralConfig::default()))
    }

    pub fn hsic_permutation(num_permutations: usize) -> Self {
        Self::new(Method::HsicPermutation { num_permutations })
    }

    /// Distance correlation: Brownian kernels with Hurst index 0.5.
    pub fn dcor() -> Self {
        let b = KernelSpec::Brownian { hurst: 0.5 };
        Self::new(Method::Dcor(SpectralConfig::default())).with_kernels(b, b)
    }

    pub fn block(size: BlockSize, variance: VarianceMethod) -> Self {
        Self::new(Method::Block { size, variance })
    }

    pub fn nystrom(landmarks: usize) -> Self {
        Self::lowrank(LowRankConfig::nystrom(landmarks))
    }

    pub fn rff(features: usize) -> Self {
        Self::lowrank(LowRankConfig::rff(features))
    }

    fn lowrank(cfg: LowRankConfig) -> Self {
        Self::new(Method::LowRank {
            approximation: cfg.approximation,
            null: cfg.null,
            spectral: cfg.spectral,
        })
    }

    pub fn name(&self) -> &'static str {
        self.method.name()
    }

    /// Short human-readable summary of the configuration.
    pub fn descriptor(&self) -> String {
        let detail = match &self.method {
            Method::HsicSpectral(c) | Method::Dcor(c) => format!("draws={}", c.num_draws),
            Method::HsicPermutation { num_permutations }
            | Method::SubCorr { num_permutations }
            | Method::SubHsic { num_permutations } => format!("permutations={num_permutations}"),
            Method::Block { size, variance } => {
                let size = match size {
                    BlockSize::Fixed(b) => format!("B={b}"),
                    BlockSize::Exponent(g) => format!("gamma={g}"),
                };
                format!("{size},variance={}", variance.name())
            }
            Method::LowRank {
                approximation,
                null,
                spectral,
            } => {
                let size = match approximation {
                    Approximation::Nystrom { landmarks, .. } => format!("landmarks={landmarks}"),
                    Approximation::Rff { features } => format!("features={features}"),
                };
                let null = match null {
                    LowRankNull::Spectral => format!("null=spectral,draws={}", spectral.num_draws),
                    LowRankNull::Permutation { num_permutations } => {
                        format!("null=permutation,permutations={num_permutations}")
                    }
                };
                format!("{size},{null}")
            }
        };
        format!(
            "{}({detail},kernel_x={},kernel_y={})",
            self.name(),
            choice_label(&self.kernel_x),
            choice_label(&self.kernel_y)
        )
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        match &self.method {
            Method::HsicSpectral(c) | Method::Dcor(c) => c.validate(),
            Method::HsicPermutation { num_permutations }
            | Method::SubCorr { num_permutations }
            | Method::SubHsic { num_permutations }
            | Method::LowRank {
                null: LowRankNull::Permutation { num_permutations },
                ..
            } if *num_permutations == 0 => config("num_permutations must be at least 1"),
            Method::LowRank {
                approximation,
                spectral,
                ..
            } => {
                if let Approximation::Rff { features } = approximation {
                    if *features < 2 || features % 2 != 0 {
                        return config(format!(
                            "number of random features must be even and at least 2, got {features}"
                        ));
                    }
                    for k in [&self.kernel_x, &self.kernel_y] {
                        if k.family() != crate::KernelFamily::Gaussian {
                            return Err(crate::HsicError::UnsupportedKernel(
                                "random Fourier features need a gaussian kernel".into(),
                            ));
                        }
                    }
                }
                if let Approximation::Nystrom { landmarks: 0, .. } = approximation {
                    return config("number of landmarks must be at least 1");
                }
                spectral.validate()
            }
            Method::Block { size, .. } => match size {
                BlockSize::Fixed(b) if *b < 4 => {
                    config(format!("block size must be at least 4, got {b}"))
                }
                BlockSize::Exponent(g) if !(*g > 0.0 && *g < 1.0) => {
                    config(format!("block exponent must lie in (0, 1), got {g}"))
                }
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Runs the test. Bandwidths are chosen from `substream(derive_seed(seed, 7), side)`
    /// and the test itself receives `derive_seed(seed, 8)`. The reported total
    /// time includes bandwidth selection.
    pub fn run(&self, sample: &PairedSample, seed: u64) -> Result<TestOutcome> {
        self.validate()?;
        let start = Instant::now();
        let kseed = derive_seed(seed, 7);
        let tseed = derive_seed(seed, 8);
        let alpha = self.alpha;
        let mut outcome = match &self.method {
            Method::SubCorr { num_permutations } => {
                let r = permutation_pvalue(sub_corr, sample, *num_permutations, tseed)?;
                permutation_outcome(
                    "subcorr",
                    r.observed,
                    r.p_value,
                    alpha,
                    sample.len(),
                    *num_permutations,
                )
            }
            Method::SubHsic { num_permutations } => {
                let spec_y = self
                    .kernel_y
                    .resolve(sample.y(), &mut substream(kseed, 1))?;
                let mut rng = substream(kseed, 0);
                let specs_x = (0..sample.dx())
                    .map(|i| {
                        self.kernel_x
                            .resolve(&sample.x().columns(i, 1).into_owned(), &mut rng)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let stat = |s: &PairedSample| sub_hsic_columns(s, &spec_y, &specs_x);
                let r = permutation_pvalue(stat, sample, *num_permutations, tseed)?;
                let mut o = permutation_outcome(
                    "subhsic",
                    r.observed,
                    r.p_value,
                    alpha,
                    sample.len(),
                    *num_permutations,
                );
                o.params
                    .insert("kernel_y".into(), spec_y.to_string().into());
                o
            }
            method => {
                let kx = self
                    .kernel_x
                    .resolve(sample.x(), &mut substream(kseed, 0))?;
                let ky = self
                    .kernel_y
                    .resolve(sample.y(), &mut substream(kseed, 1))?;
                match method {
                    Method::HsicSpectral(c) => spectral_test(sample, &kx, &ky, c, alpha, tseed)?,
                    Method::Dcor(c) => dcor_test(sample, &kx, &ky, c, alpha, tseed)?,
                    Method::HsicPermutation { num_permutations } => {
                        hsic_permutation_test(sample, &kx, &ky, *num_permutations, alpha, tseed)?
                    }
                    Method::Block { size, variance } => {
                        let cfg = BlockConfig {
                            size: *size,
                            variance: *variance,
                            alpha,
                        };
                        block_test(sample, &kx, &ky, &cfg, tseed)?
                    }
                    Method::LowRank {
                        approximation,
                        null,
                        spectral,
                    } => {
                        let cfg = LowRankConfig {
                            approximation: approximation.clone(),
                            null: *null,
                            spectral: *spectral,
                            alpha,
                        };
                        lowrank_test(sample, &kx, &ky, &cfg, tseed)?
                    }
                    Method::SubCorr { .. } | Method::SubHsic { .. } => unreachable!(),
                }
            }
        };
        outcome.seed = seed;
        outcome.seconds.total = start.elapsed().as_secs_f64();
        Ok(outcome)
    }
}

fn choice_label(k: &KernelChoice) -> String {
    match k {
        KernelChoice::Fixed(spec) => spec.to_string(),
        KernelChoice::GaussianMedian(_) => "gaussian(sigma=median)".into(),
    }
}

fn permutation_outcome(
    method: &str,
    stat: f64,
    p: f64,
    alpha: f64,
    m: usize,
    n: usize,
) -> TestOutcome {
    let mut params = std::collections::BTreeMap::new();
    params.insert("permutations".into(), n.into());
    TestOutcome {
        method: method.into(),
        statistic: stat,
        p_value: p,
        reject: p <= alpha,
        alpha,
        m,
        params,
        seed: 0,
        seconds: Default::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{GeneratorKind, GeneratorSpec};

    fn all_methods() -> Vec<TestProcedure> {
        let small = SpectralConfig {
            num_draws: 300,
            ..SpectralConfig::default()
        };
        vec![
            TestProcedure::new(Method::HsicSpectral(small)),
            TestProcedure::hsic_permutation(50),
            TestProcedure::new(Method::Dcor(small)).with_kernels(
                KernelSpec::Brownian { hurst: 0.5 },
                KernelSpec::Brownian { hurst: 0.5 },
            ),
            TestProcedure::block(BlockSize::Fixed(10), VarianceMethod::WithinBlockPermutation),
            TestProcedure::block(BlockSize::Fixed(10), VarianceMethod::DirectEstimation),
            TestProcedure::nystrom(10),
            TestProcedure::rff(10),
            TestProcedure::new(Method::SubCorr {
                num_permutations: 50,
            }),
            TestProcedure::new(Method::SubHsic {
                num_permutations: 50,
            }),
        ]
    }

    #[test]
    fn every_method_runs_and_is_deterministic() {
        let s = GeneratorSpec::new(GeneratorKind::Linear, 120, 3, 1)
            .unwrap()
            .generate()
            .unwrap();
        for p in all_methods() {
            let a = p.run(&s, 11).unwrap();
            let b = p.run(&s, 11).unwrap();
            assert_eq!(a.statistic, b.statistic, "{}", p.descriptor());
            assert_eq!(a.p_value, b.p_value, "{}", p.descriptor());
            assert_eq!(a.method, p.name());
            assert_eq!(a.seed, 11);
            assert!(
                a.reject,
                "{} should detect linear dependence",
                p.descriptor()
            );
        }
    }

    #[test]
    fn validation_happens_before_work() {
        let s = GeneratorSpec::new(GeneratorKind::Null, 20, 1, 1)
            .unwrap()
            .generate()
            .unwrap();
        let err = TestProcedure::rff(7).run(&s, 0).unwrap_err();
        assert_eq!(err.category(), "config");
        let err = TestProcedure::rff(8)
            .with_kernels(KernelSpec::Linear, KernelSpec::Linear)
            .run(&s, 0)
            .unwrap_err();
        assert_eq!(err.category(), "unsupported-kernel");
        assert!(TestProcedure::hsic_spectral()
            .with_alpha(1.5)
            .run(&s, 0)
            .is_err());
        assert!(TestProcedure::hsic_permutation(0).run(&s, 0).is_err());
    }

    #[test]
    fn descriptor_names_parameters() {
        let d = TestProcedure::rff(20).descriptor();
        assert!(d.starts_with("rff(features=20,null=spectral"), "{d}");
        assert!(TestProcedure::dcor().descriptor().contains("brownian"));
    }
}
