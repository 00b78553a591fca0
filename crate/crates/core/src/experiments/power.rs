use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, HsicError, Result};
use crate::experiments::{GeneratorSpec, TestProcedure};
use crate::rng::derive_seed;

/// Rejection rate over Monte Carlo trials with a normal-approximation 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub method: String,
    pub m: usize,
    pub power: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: usize,
    pub rejections: usize,
    /// Mean wall-clock seconds per test, data generation excluded.
    pub mean_test_seconds: f64,
    pub method_descriptor: String,
}

/// `p +- 1.96 sqrt(p (1 - p) / trials)`, clipped to `[0, 1]`.
pub fn power_ci(power: f64, trials: usize) -> (f64, f64) {
    let half = 1.96 * (power * (1.0 - power) / trials as f64).sqrt();
    ((power - half).max(0.0), (power + half).min(1.0))
}

impl PowerReport {
    pub fn from_counts(
        procedure: &TestProcedure,
        m: usize,
        rejections: usize,
        trials: usize,
        mean_test_seconds: f64,
    ) -> Self {
        let power = rejections as f64 / trials as f64;
        let (ci_low, ci_high) = power_ci(power, trials);
        Self {
            method: procedure.name().into(),
            m,
            power,
            ci_low,
            ci_high,
            trials,
            rejections,
            mean_test_seconds,
            method_descriptor: procedure.descriptor(),
        }
    }

    /// True when the two 95% intervals intersect.
    pub fn overlaps(&self, other: &PowerReport) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

fn in_trial(trial: usize, e: HsicError) -> HsicError {
    let tag = |msg: String| format!("trial {trial}: {msg}");
    match e {
        HsicError::Input(m) => HsicError::Input(tag(m)),
        HsicError::Degenerate(m) => HsicError::Degenerate(tag(m)),
        HsicError::UnsupportedKernel(m) => HsicError::UnsupportedKernel(tag(m)),
        HsicError::Config(m) => HsicError::Config(tag(m)),
        HsicError::Numerical(m) => HsicError::Numerical(tag(m)),
    }
}

/// Seeds of trial `t`: data from `derive_seed(master_seed, 2t)`, test from `derive_seed(master_seed, 2t + 1)`.
pub fn trial_seeds(master_seed: u64, trial: usize) -> (u64, u64) {
    (
        derive_seed(master_seed, 2 * trial as u64),
        derive_seed(master_seed, 2 * trial as u64 + 1),
    )
}

/// Runs `trials` generate-then-test rounds at level `alpha`. The generator's
/// own seed is replaced per trial; the first failing trial aborts the run.
pub fn estimate_power(
    procedure: &TestProcedure,
    generator: &GeneratorSpec,
    trials: usize,
    alpha: f64,
    master_seed: u64,
) -> Result<PowerReport> {
    estimate_power_with(procedure, generator, trials, alpha, master_seed, true)
}

/// [`estimate_power`] with trials optionally run one after another, which
/// keeps per-test timings free of contention.
pub fn estimate_power_with(
    procedure: &TestProcedure,
    generator: &GeneratorSpec,
    trials: usize,
    alpha: f64,
    master_seed: u64,
    parallel: bool,
) -> Result<PowerReport> {
    if trials == 0 {
        return config("trials must be at least 1");
    }
    generator.validate()?;
    let procedure = procedure.clone().with_alpha(alpha);
    procedure.validate()?;
    let one = |t: usize| -> Result<(bool, f64)> {
        let (data_seed, test_seed) = trial_seeds(master_seed, t);
        let sample = generator.with_seed(data_seed).generate()?;
        let start = Instant::now();
        let outcome = procedure.run(&sample, test_seed)?;
        Ok((outcome.reject, start.elapsed().as_secs_f64()))
    };
    let results: Vec<Result<(bool, f64)>> = if parallel {
        (0..trials).into_par_iter().map(one).collect()
    } else {
        (0..trials).map(one).collect()
    };
    let mut rejections = 0;
    let mut seconds = 0.0;
    for (t, r) in results.into_iter().enumerate() {
        let (reject, s) = r.map_err(|e| in_trial(t, e))?;
        rejections += reject as usize;
        seconds += s;
    }
    Ok(PowerReport::from_counts(
        &procedure,
        generator.m,
        rejections,
        trials,
        seconds / trials as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{GeneratorKind, Method};
    use crate::kernels::KernelSpec;
    use crate::null::SpectralConfig;

    #[test]
    fn ci_formula() {
        assert_eq!(power_ci(1.0, 10), (1.0, 1.0));
        assert_eq!(power_ci(0.0, 10), (0.0, 0.0));
        let (lo, hi) = power_ci(0.5, 100);
        assert!((lo - 0.402).abs() < 1e-12 && (hi - 0.598).abs() < 1e-12);
    }

    #[test]
    fn always_rejecting_test_has_power_one() {
        let g = GeneratorSpec::new(GeneratorKind::Null, 30, 1, 0).unwrap();
        let p = TestProcedure::hsic_permutation(20);
        // alpha just below 1: the add-one p-value never exceeds 1.
        let r = estimate_power(&p, &g, 10, 0.999_999, 3).unwrap();
        assert_eq!((r.power, r.ci_low, r.ci_high), (1.0, 1.0, 1.0));
        assert!(r.mean_test_seconds > 0.0);
    }

    #[test]
    fn reproducible_and_schedule_free() {
        let g = GeneratorSpec::new(GeneratorKind::Linear, 40, 2, 0).unwrap();
        let p = TestProcedure::new(Method::HsicSpectral(SpectralConfig {
            num_draws: 200,
            ..SpectralConfig::default()
        }));
        let a = estimate_power_with(&p, &g, 12, 0.05, 9, true).unwrap();
        let b = estimate_power_with(&p, &g, 12, 0.05, 9, false).unwrap();
        assert_eq!((a.rejections, a.power), (b.rejections, b.power));
        assert!(a.ci_low <= a.power && a.power <= a.ci_high);
    }

    #[test]
    fn failing_trial_is_reported() {
        let g = GeneratorSpec::new(GeneratorKind::Null, 10, 1, 0).unwrap();
        let p = TestProcedure::block(
            crate::block::BlockSize::Fixed(8),
            crate::block::VarianceMethod::DirectEstimation,
        )
        .with_kernels(KernelSpec::Linear, KernelSpec::Linear);
        let err = estimate_power(&p, &g, 3, 0.05, 1).unwrap_err();
        assert!(err.to_string().contains("trial 0"), "{err}");
        assert!(estimate_power(&p, &g, 0, 0.05, 1).is_err());
    }

    #[test]
    fn linear_endpoint_has_high_power() {
        let g = GeneratorSpec::new(GeneratorKind::Linear, 100, 10, 0).unwrap();
        let p = TestProcedure::new(Method::HsicSpectral(SpectralConfig {
            num_draws: 1000,
            ..SpectralConfig::default()
        }));
        let r = estimate_power(&p, &g, 100, 0.05, 2024).unwrap();
        assert!(r.power >= 0.9, "{}", r.power);
    }
}
