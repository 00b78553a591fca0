use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::lowrank::LandmarkSource;
use crate::rng::substream;
use crate::sample::PairedSample;

fn normals<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Row-major fill so a prefix of rows does not depend on `rows`.
    DMatrix::from_row_iterator(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)),
    )
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return config("sample size must be at least 1");
    }
    Ok(())
}

/// `X ~ N(0, I_d)`, `Y = X_1 + Z`.
pub fn gen_linear<R: Rng + ?Sized>(m: usize, d: usize, rng: &mut R) -> Result<PairedSample> {
    check_m(m)?;
    if d == 0 {
        return config("linear generator needs d >= 1");
    }
    let x = normals(m, d, rng);
    let z = normals(m, 1, rng);
    let y = DMatrix::from_fn(m, 1, |i, _| x[(i, 0)] + z[(i, 0)]);
    PairedSample::new(x, y)
}

/// `X ~ N(0, I_d)`, `Y = 20 sin(4 pi (X_1^2 + X_2^2)) + Z`.
pub fn gen_sine<R: Rng + ?Sized>(m: usize, d: usize, rng: &mut R) -> Result<PairedSample> {
    check_m(m)?;
    if d < 2 {
        return config("sine generator needs d >= 2");
    }
    let x = normals(m, d, rng);
    let z = normals(m, 1, rng);
    let y = DMatrix::from_fn(m, 1, |i, _| {
        let r2 = x[(i, 0)].powi(2) + x[(i, 1)].powi(2);
        20.0 * (4.0 * PI * r2).sin() + z[(i, 0)]
    });
    PairedSample::new(x, y)
}

/// `X ~ N(0, I_d)`,
/// `Y = sqrt(2/d) sum_j sign(X_{2j-1} X_{2j}) |Z_j| + Z_{d/2+1}`.
///
/// `Y` is independent of every single coordinate of `X`.
pub fn gen_large_scale<R: Rng + ?Sized>(m: usize, d: usize, rng: &mut R) -> Result<PairedSample> {
    check_m(m)?;
    if d == 0 || !d.is_multiple_of(2) {
        return config("large-scale generator needs an even d >= 2");
    }
    let half = d / 2;
    let x = normals(m, d, rng);
    let z = normals(m, half + 1, rng);
    let scale = (2.0 / d as f64).sqrt();
    let y = DMatrix::from_fn(m, 1, |i, _| {
        let mut acc = 0.0;
        for j in 0..half {
            let s = (x[(i, 2 * j)] * x[(i, 2 * j + 1)]).signum();
            acc += s * z[(i, j)].abs();
        }
        scale * acc + z[(i, half)]
    });
    PairedSample::new(x, y)
}

/// Independent standard normal `X` (m x dx) and `Y` (m x dy).
pub fn gen_null<R: Rng + ?Sized>(
    m: usize,
    dx: usize,
    dy: usize,
    rng: &mut R,
) -> Result<PairedSample> {
    check_m(m)?;
    if dx == 0 || dy == 0 {
        return config("null generator needs dx, dy >= 1");
    }
    let x = normals(m, dx, rng);
    let y = normals(m, dy, rng);
    PairedSample::new(x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Linear,
    Sine,
    LargeScale,
    /// Y has the same dimension as X.
    Null,
}

impl GeneratorKind {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::Linear => "linear",
            GeneratorKind::Sine => "sine",
            GeneratorKind::LargeScale => "large-scale",
            GeneratorKind::Null => "null",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(GeneratorKind::Linear),
            "sine" => Some(GeneratorKind::Sine),
            "large-scale" => Some(GeneratorKind::LargeScale),
            "null" => Some(GeneratorKind::Null),
            _ => None,
        }
    }
}

/// A generator with its sample size, X dimension and seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub m: usize,
    pub d: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, m: usize, d: usize, seed: u64) -> Result<Self> {
        let spec = Self { kind, m, d, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_m(self.m)?;
        match self.kind {
            GeneratorKind::Sine if self.d < 2 => config("sine generator needs d >= 2"),
            GeneratorKind::LargeScale if self.d == 0 || !self.d.is_multiple_of(2) => {
                config("large-scale generator needs an even d >= 2")
            }
            _ if self.d == 0 => config("generator needs d >= 1"),
            _ => Ok(()),
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_m(self, m: usize) -> Self {
        Self { m, ..self }
    }

    pub fn dy(&self) -> usize {
        match self.kind {
            GeneratorKind::Null => self.d,
            _ => 1,
        }
    }

    /// Draws the sample from `substream(seed, 0)`.
    pub fn generate(&self) -> Result<PairedSample> {
        let mut rng = substream(self.seed, 0);
        self.draw(self.m, &mut rng)
    }

    fn draw<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<PairedSample> {
        match self.kind {
            GeneratorKind::Linear => gen_linear(m, self.d, rng),
            GeneratorKind::Sine => gen_sine(m, self.d, rng),
            GeneratorKind::LargeScale => gen_large_scale(m, self.d, rng),
            GeneratorKind::Null => gen_null(m, self.d, self.d, rng),
        }
    }

    /// Nystrom landmarks drawn from the marginals of this generator: the X side
    /// is standard normal, the Y side keeps the Y rows of a fresh sample.
    pub fn landmark_source(&self) -> LandmarkSource {
        let d = self.d;
        let spec = *self;
        LandmarkSource::External {
            x: Arc::new(move |n, rng| Ok(normals(n, d, rng))),
            y: Arc::new(move |n, rng| Ok(spec.draw(n, rng)?.into_parts().1)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::gram;
    use crate::quadratic::dcor;
    use crate::KernelSpec;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn col(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
        m.column(j).iter().copied().collect()
    }

    #[test]
    fn linear_correlations() {
        let s = gen_linear(10_000, 3, &mut substream(1, 0)).unwrap();
        let y = col(s.y(), 0);
        assert!((corr(&y, &col(s.x(), 0)) - 0.5f64.sqrt()).abs() < 0.03);
        assert!(corr(&y, &col(s.x(), 1)).abs() < 0.03);
    }

    #[test]
    fn sine_is_bounded_and_uncorrelated() {
        let mut rng = substream(2, 0);
        let s = gen_sine(10_000, 2, &mut rng).unwrap();
        // Replay the stream to recover Z.
        let mut replay = substream(2, 0);
        let _x = normals(10_000, 2, &mut replay);
        let z = normals(10_000, 1, &mut replay);
        for i in 0..10_000 {
            assert!((s.y()[(i, 0)] - z[(i, 0)]).abs() <= 20.0);
        }
        assert!(corr(&col(s.y(), 0), &col(s.x(), 0)).abs() < 0.05);
        assert!(gen_sine(10, 1, &mut rng).is_err());
    }

    #[test]
    fn large_scale_marginals() {
        let s = gen_large_scale(10_000, 6, &mut substream(3, 0)).unwrap();
        let y = col(s.y(), 0);
        for j in 0..6 {
            assert!(corr(&y, &col(s.x(), j)).abs() < 0.05);
        }
        let big = gen_large_scale(100_000, 4, &mut substream(4, 0)).unwrap();
        let y = col(big.y(), 0);
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 2.0).abs() < 0.1, "{var}");
        assert!(gen_large_scale(10, 3, &mut substream(0, 0)).is_err());
    }

    #[test]
    fn null_is_independent() {
        let s = gen_null(1000, 2, 2, &mut substream(5, 0)).unwrap();
        let g = KernelSpec::gaussian(1.0).unwrap();
        let d = dcor(&gram(&g, s.x()).unwrap(), &gram(&g, s.y()).unwrap()).unwrap();
        assert!(d < 0.1, "{d}");
        let bound = 3.0 / (1000f64).sqrt();
        for i in 0..2 {
            for j in 0..2 {
                assert!(corr(&col(s.x(), i), &col(s.y(), j)).abs() < bound);
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces() {
        for kind in [
            GeneratorKind::Linear,
            GeneratorKind::Sine,
            GeneratorKind::LargeScale,
            GeneratorKind::Null,
        ] {
            let spec = GeneratorSpec::new(kind, 50, 4, 7).unwrap();
            assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
            assert_ne!(
                spec.generate().unwrap(),
                spec.with_seed(8).generate().unwrap()
            );
            assert_eq!(GeneratorKind::parse(kind.name()), Some(kind));
        }
    }

    #[test]
    fn landmark_draws_have_sample_shape() {
        let spec = GeneratorSpec::new(GeneratorKind::LargeScale, 10, 4, 1).unwrap();
        let LandmarkSource::External { x, y } = spec.landmark_source() else {
            panic!("expected external landmarks");
        };
        let mut rng = substream(0, 0);
        assert_eq!(x(7, &mut rng).unwrap().shape(), (7, 4));
        assert_eq!(y(7, &mut rng).unwrap().shape(), (7, 1));
    }
}
