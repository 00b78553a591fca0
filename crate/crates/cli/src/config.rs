//! Effective per-method configuration after defaulting and validation.

use hsic::block::{BlockSize, VarianceMethod};
use hsic::experiments::{Method, TestProcedure};
use hsic::lowrank::{Approximation, LandmarkSource, LowRankNull};
use hsic::{KernelChoice, KernelSpec, MedianHeuristic, SpectralConfig};
use serde::{Deserialize, Serialize};

use crate::args::{MethodArgs, NullArg, VarianceArg};
use crate::error::{config_error, CliResult};

pub const METHODS: [&str; 6] = [
    "hsic-spectral",
    "hsic-permutation",
    "block",
    "nystrom",
    "rff",
    "dcor",
];

pub const DEFAULT_BLOCK_SIZE: usize = 200;
pub const DEFAULT_LANDMARKS: usize = 200;
pub const DEFAULT_FEATURES: usize = 200;
pub const DEFAULT_DRAWS: usize = 10_000;
pub const DEFAULT_PERMUTATIONS: usize = 1000;

/// Everything needed to rerun one method. Fields that do not apply to the
/// method are `None`; `bandwidth_*` is empty for non-Gaussian kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: String,
    pub kernel_x: String,
    pub bandwidth_x: String,
    pub kernel_y: String,
    pub bandwidth_y: String,
    pub median_cap: usize,
    pub null: String,
    pub block_size: Option<usize>,
    pub gamma: Option<f64>,
    pub variance: Option<String>,
    pub landmarks: Option<usize>,
    /// A number, or "default" for `1e-8 * trace / n`.
    pub ridge: Option<String>,
    pub features: Option<usize>,
    pub draws: Option<usize>,
    pub permutations: Option<usize>,
    pub alpha: f64,
    pub seed: u64,
}

/// Normalized kernel token, e.g. `polynomial` becomes `polynomial:2`.
fn parse_kernel(token: &str) -> CliResult<(String, KernelSpec)> {
    let (family, arg) = match token.split_once(':') {
        Some((f, a)) => (f, Some(a)),
        None => (token, None),
    };
    let bad = |what: &str| config_error(format!("invalid {what} in kernel '{token}'"));
    let spec = match (family, arg) {
        ("gaussian", None) => KernelSpec::Gaussian { sigma: 1.0 },
        ("linear", None) => KernelSpec::Linear,
        ("polynomial", a) => {
            let degree = a.map_or(Ok(2), |a| a.parse::<u32>().map_err(|_| bad("degree")))?;
            KernelSpec::polynomial(degree)?
        }
        ("brownian", a) => {
            let hurst = a.map_or(Ok(0.5), |a| {
                a.parse::<f64>().map_err(|_| bad("hurst index"))
            })?;
            KernelSpec::brownian(hurst)?
        }
        _ => {
            return Err(config_error(format!(
            "unknown kernel '{token}' (expected gaussian, linear, polynomial[:d] or brownian[:h])"
        )))
        }
    };
    let norm = match spec {
        KernelSpec::Gaussian { .. } => "gaussian".to_string(),
        KernelSpec::Linear => "linear".to_string(),
        KernelSpec::Polynomial { degree } => format!("polynomial:{degree}"),
        KernelSpec::Brownian { hurst } => format!("brownian:{hurst}"),
    };
    Ok((norm, spec))
}

fn parse_bandwidth(token: &str) -> CliResult<String> {
    if token == "median" {
        return Ok(token.into());
    }
    match token.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v.to_string()),
        _ => Err(config_error(format!(
            "bandwidth must be 'median' or a positive number, got '{token}'"
        ))),
    }
}

fn side(
    kernel: Option<&str>,
    bandwidth: Option<&str>,
    default_kernel: &str,
    strict: bool,
    flag: &str,
) -> CliResult<(String, String)> {
    let (k, _) = parse_kernel(kernel.unwrap_or(default_kernel))?;
    if k == "gaussian" {
        Ok((k, parse_bandwidth(bandwidth.unwrap_or("median"))?))
    } else {
        if strict && bandwidth.is_some() {
            return Err(config_error(format!(
                "--bandwidth-{flag} only applies to the gaussian kernel"
            )));
        }
        Ok((k, String::new()))
    }
}

fn allowed_nulls(method: &str) -> &'static [NullArg] {
    match method {
        "hsic-spectral" | "dcor" => &[NullArg::Spectral],
        "hsic-permutation" => &[NullArg::Permutation],
        "block" => &[NullArg::Gaussian],
        _ => &[NullArg::Spectral, NullArg::Permutation],
    }
}

fn null_name(n: NullArg) -> &'static str {
    match n {
        NullArg::Spectral => "spectral",
        NullArg::Permutation => "permutation",
        NullArg::Gaussian => "gaussian",
    }
}

/// Effective configuration of `method`. With `strict`, flags the method does
/// not use are configuration errors; otherwise they are ignored.
pub fn build(method: &str, a: &MethodArgs, strict: bool) -> CliResult<MethodConfig> {
    if !METHODS.contains(&method) {
        return Err(config_error(format!(
            "unknown method '{method}' (expected one of {})",
            METHODS.join(", ")
        )));
    }
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(config_error(format!(
            "alpha must lie in (0, 1), got {}",
            a.alpha
        )));
    }
    if a.median_cap < 2 {
        return Err(config_error("median cap must be at least 2"));
    }
    let reject = |flag: &str| -> CliResult<()> {
        if strict {
            Err(config_error(format!(
                "--{flag} does not apply to method {method}"
            )))
        } else {
            Ok(())
        }
    };

    let default_kernel = if method == "dcor" {
        "brownian:0.5"
    } else {
        "gaussian"
    };
    let (kernel_x, bandwidth_x) = side(
        a.kernel_x.as_deref(),
        a.bandwidth_x.as_deref(),
        default_kernel,
        strict,
        "x",
    )?;
    let (kernel_y, bandwidth_y) = side(
        a.kernel_y.as_deref(),
        a.bandwidth_y.as_deref(),
        default_kernel,
        strict,
        "y",
    )?;

    let allowed = allowed_nulls(method);
    let null = match a.null {
        Some(n) if allowed.contains(&n) => n,
        Some(n) => {
            if strict {
                return Err(config_error(format!(
                    "--null {} does not apply to method {method}",
                    null_name(n)
                )));
            }
            allowed[0]
        }
        None => allowed[0],
    };

    let mut c = MethodConfig {
        method: method.into(),
        kernel_x,
        bandwidth_x,
        kernel_y,
        bandwidth_y,
        median_cap: a.median_cap,
        null: null_name(null).into(),
        block_size: None,
        gamma: None,
        variance: None,
        landmarks: None,
        ridge: None,
        features: None,
        draws: None,
        permutations: None,
        alpha: a.alpha,
        seed: a.seed,
    };

    if method == "block" {
        match (a.block_size, a.gamma) {
            (Some(_), Some(_)) => {
                return Err(config_error(
                    "--block-size and --gamma are mutually exclusive",
                ))
            }
            (Some(b), None) => {
                if b < 4 {
                    return Err(config_error(format!(
                        "block size must be at least 4, got {b}"
                    )));
                }
                c.block_size = Some(b)
            }
            (None, Some(g)) => {
                if !(g > 0.0 && g < 1.0) {
                    return Err(config_error(format!("gamma must lie in (0, 1), got {g}")));
                }
                c.gamma = Some(g)
            }
            (None, None) => c.block_size = Some(DEFAULT_BLOCK_SIZE),
        }
        c.variance = Some(
            match a.variance.unwrap_or(VarianceArg::Permute) {
                VarianceArg::Permute => "permute",
                VarianceArg::Direct => "direct",
            }
            .into(),
        );
    } else {
        if a.block_size.is_some() {
            reject("block-size")?;
        }
        if a.gamma.is_some() {
            reject("gamma")?;
        }
        if a.variance.is_some() {
            reject("variance")?;
        }
    }

    if method == "nystrom" {
        let n = a.landmarks.unwrap_or(DEFAULT_LANDMARKS);
        if n == 0 {
            return Err(config_error("number of landmarks must be at least 1"));
        }
        c.landmarks = Some(n);
        c.ridge = Some(match a.ridge {
            Some(r) if r >= 0.0 && r.is_finite() => r.to_string(),
            Some(r) => return Err(config_error(format!("ridge must be nonnegative, got {r}"))),
            None => "default".into(),
        });
    } else {
        if a.landmarks.is_some() {
            reject("landmarks")?;
        }
        if a.ridge.is_some() {
            reject("ridge")?;
        }
    }

    if method == "rff" {
        let d = a.features.unwrap_or(DEFAULT_FEATURES);
        if d < 2 || !d.is_multiple_of(2) {
            return Err(config_error(format!(
                "number of random features must be even and at least 2, got {d}"
            )));
        }
        if c.kernel_x != "gaussian" || c.kernel_y != "gaussian" {
            return Err(hsic::HsicError::UnsupportedKernel(
                "random Fourier features need gaussian kernels on both sides".into(),
            )
            .into());
        }
        c.features = Some(d);
    } else if a.features.is_some() {
        reject("features")?;
    }

    match null {
        NullArg::Spectral => {
            let d = a.draws.unwrap_or(DEFAULT_DRAWS);
            if d == 0 {
                return Err(config_error("draws must be at least 1"));
            }
            c.draws = Some(d);
            if a.permutations.is_some() {
                reject("permutations")?;
            }
        }
        NullArg::Permutation => {
            let n = a.permutations.unwrap_or(DEFAULT_PERMUTATIONS);
            if n == 0 {
                return Err(config_error("permutations must be at least 1"));
            }
            c.permutations = Some(n);
            if a.draws.is_some() {
                reject("draws")?;
            }
        }
        NullArg::Gaussian => {
            if a.draws.is_some() {
                reject("draws")?;
            }
            if a.permutations.is_some() {
                reject("permutations")?;
            }
        }
    }
    Ok(c)
}

/// Builds every method of a sweep and checks that each explicitly set flag is
/// used by at least one of them.
pub fn build_all(methods: &[String], a: &MethodArgs) -> CliResult<Vec<MethodConfig>> {
    if methods.is_empty() {
        return Err(config_error("at least one method is required"));
    }
    let configs = methods
        .iter()
        .map(|m| build(m, a, false))
        .collect::<CliResult<Vec<_>>>()?;
    let used = |pred: &dyn Fn(&MethodConfig) -> bool| configs.iter().any(pred);
    let checks: [(&str, bool, bool); 10] = [
        (
            "block-size",
            a.block_size.is_some(),
            used(&|c| c.block_size.is_some()),
        ),
        ("gamma", a.gamma.is_some(), used(&|c| c.gamma.is_some())),
        (
            "variance",
            a.variance.is_some(),
            used(&|c| c.variance.is_some()),
        ),
        (
            "landmarks",
            a.landmarks.is_some(),
            used(&|c| c.landmarks.is_some()),
        ),
        ("ridge", a.ridge.is_some(), used(&|c| c.ridge.is_some())),
        (
            "features",
            a.features.is_some(),
            used(&|c| c.features.is_some()),
        ),
        ("draws", a.draws.is_some(), used(&|c| c.draws.is_some())),
        (
            "permutations",
            a.permutations.is_some(),
            used(&|c| c.permutations.is_some()),
        ),
        (
            "bandwidth-x",
            a.bandwidth_x.is_some(),
            used(&|c| !c.bandwidth_x.is_empty()),
        ),
        (
            "bandwidth-y",
            a.bandwidth_y.is_some(),
            used(&|c| !c.bandwidth_y.is_empty()),
        ),
    ];
    for (flag, set, applies) in checks {
        if set && !applies {
            return Err(config_error(format!(
                "--{flag} does not apply to any selected method"
            )));
        }
    }
    if let Some(n) = a.null {
        if !configs.iter().any(|c| c.null == null_name(n)) {
            return Err(config_error(format!(
                "--null {} does not apply to any selected method",
                null_name(n)
            )));
        }
    }
    Ok(configs)
}

fn kernel_choice(kernel: &str, bandwidth: &str, cap: usize) -> CliResult<KernelChoice> {
    let (_, spec) = parse_kernel(kernel)?;
    Ok(match spec {
        KernelSpec::Gaussian { .. } if bandwidth == "median" => {
            KernelChoice::GaussianMedian(MedianHeuristic {
                max_points: cap,
                ..MedianHeuristic::default()
            })
        }
        KernelSpec::Gaussian { .. } => {
            let sigma: f64 = bandwidth
                .parse()
                .map_err(|_| config_error(format!("invalid bandwidth '{bandwidth}'")))?;
            KernelChoice::Fixed(KernelSpec::gaussian(sigma)?)
        }
        other => KernelChoice::Fixed(other),
    })
}

impl MethodConfig {
    /// Library procedure for this configuration. `landmarks` overrides the
    /// default of subsampling data rows for Nystrom.
    pub fn procedure(&self, landmarks: Option<LandmarkSource>) -> CliResult<TestProcedure> {
        let spectral = SpectralConfig {
            num_draws: self.draws.unwrap_or(DEFAULT_DRAWS),
            ..SpectralConfig::default()
        };
        let permutations = self.permutations.unwrap_or(DEFAULT_PERMUTATIONS);
        let lowrank_null = if self.null == "permutation" {
            LowRankNull::Permutation {
                num_permutations: permutations,
            }
        } else {
            LowRankNull::Spectral
        };
        let method = match self.method.as_str() {
            "hsic-spectral" => Method::HsicSpectral(spectral),
            "hsic-permutation" => Method::HsicPermutation {
                num_permutations: permutations,
            },
            "dcor" => Method::Dcor(spectral),
            "block" => Method::Block {
                size: match (self.block_size, self.gamma) {
                    (_, Some(g)) => BlockSize::Exponent(g),
                    (b, None) => BlockSize::Fixed(b.unwrap_or(DEFAULT_BLOCK_SIZE)),
                },
                variance: if self.variance.as_deref() == Some("direct") {
                    VarianceMethod::DirectEstimation
                } else {
                    VarianceMethod::WithinBlockPermutation
                },
            },
            "nystrom" => Method::LowRank {
                approximation: Approximation::Nystrom {
                    landmarks: self.landmarks.unwrap_or(DEFAULT_LANDMARKS),
                    ridge: match self.ridge.as_deref() {
                        None | Some("default") => None,
                        Some(r) => Some(
                            r.parse()
                                .map_err(|_| config_error(format!("invalid ridge '{r}'")))?,
                        ),
                    },
                    source: landmarks.unwrap_or_default(),
                },
                null: lowrank_null,
                spectral,
            },
            "rff" => Method::LowRank {
                approximation: Approximation::Rff {
                    features: self.features.unwrap_or(DEFAULT_FEATURES),
                },
                null: lowrank_null,
                spectral,
            },
            other => return Err(config_error(format!("unknown method '{other}'"))),
        };
        let p = TestProcedure::new(method)
            .with_kernels(
                kernel_choice(&self.kernel_x, &self.bandwidth_x, self.median_cap)?,
                kernel_choice(&self.kernel_y, &self.bandwidth_y, self.median_cap)?,
            )
            .with_alpha(self.alpha);
        p.validate()?;
        Ok(p)
    }

    /// Column names of [`MethodConfig::values`], method first.
    pub const COLUMNS: [&'static str; 17] = [
        "method",
        "kernel_x",
        "bandwidth_x",
        "kernel_y",
        "bandwidth_y",
        "median_cap",
        "null",
        "block_size",
        "gamma",
        "variance",
        "landmarks",
        "ridge",
        "features",
        "draws",
        "permutations",
        "alpha",
        "seed",
    ];

    /// Values in [`MethodConfig::COLUMNS`] order; absent options are empty.
    pub fn values(&self) -> Vec<String> {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(ToString::to_string).unwrap_or_default()
        }
        vec![
            self.method.clone(),
            self.kernel_x.clone(),
            self.bandwidth_x.clone(),
            self.kernel_y.clone(),
            self.bandwidth_y.clone(),
            self.median_cap.to_string(),
            self.null.clone(),
            opt(&self.block_size),
            opt(&self.gamma),
            opt(&self.variance),
            opt(&self.landmarks),
            opt(&self.ridge),
            opt(&self.features),
            opt(&self.draws),
            opt(&self.permutations),
            self.alpha.to_string(),
            self.seed.to_string(),
        ]
    }

    /// Inverse of [`MethodConfig::values`].
    pub fn from_values(v: &[&str]) -> Result<Self, String> {
        if v.len() != Self::COLUMNS.len() {
            return Err(format!(
                "expected {} config fields, got {}",
                Self::COLUMNS.len(),
                v.len()
            ));
        }
        fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("invalid {name} '{s}'"))
        }
        fn opt<T: std::str::FromStr>(s: &str, name: &str) -> Result<Option<T>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s, name).map(Some)
            }
        }
        let text = |s: &str| {
            if s.is_empty() {
                None
            } else {
                Some(s.to_string())
            }
        };
        Ok(Self {
            method: v[0].into(),
            kernel_x: v[1].into(),
            bandwidth_x: v[2].into(),
            kernel_y: v[3].into(),
            bandwidth_y: v[4].into(),
            median_cap: num(v[5], "median_cap")?,
            null: v[6].into(),
            block_size: opt(v[7], "block_size")?,
            gamma: opt(v[8], "gamma")?,
            variance: text(v[9]),
            landmarks: opt(v[10], "landmarks")?,
            ridge: text(v[11]),
            features: opt(v[12], "features")?,
            draws: opt(v[13], "draws")?,
            permutations: opt(v[14], "permutations")?,
            alpha: num(v[15], "alpha")?,
            seed: num(v[16], "seed")?,
        })
    }
}
