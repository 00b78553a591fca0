//! Exact quadratic-time dependence statistics.

use nalgebra::DMatrix;

use crate::error::{degenerate, input, Result};
use crate::kernels::{center_gram, center_symmetric, gram, GramMatrix, KernelSpec};
use crate::sample::PairedSample;

fn check_pair(kx: &GramMatrix, ky: &GramMatrix) -> Result<usize> {
    if kx.size() != ky.size() {
        return input(format!(
            "gram size mismatch: {} vs {}",
            kx.size(),
            ky.size()
        ));
    }
    if kx.is_diag_zeroed() || ky.is_diag_zeroed() {
        return input("expected gram matrices with their diagonal intact");
    }
    Ok(kx.size())
}

/// Frobenius inner product.
pub(crate) fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(u, v)| u * v)
        .sum()
}

/// Biased (V-statistic) HSIC: `Trace(Kx H Ky H) / m^2`.
///
/// Accepts raw or already centered Gram matrices.
pub fn hsic_biased(kx: &GramMatrix, ky: &GramMatrix) -> Result<f64> {
    let m = check_pair(kx, ky)?;
    let cx = center_gram(kx)?;
    let cy = center_gram(ky)?;
    Ok(hsic_biased_centered(cx.entries(), cy.entries(), m))
}

/// `<Kx_c, Ky_c>_F / m^2` for already centered matrices.
pub(crate) fn hsic_biased_centered(cx: &DMatrix<f64>, cy: &DMatrix<f64>, m: usize) -> f64 {
    frobenius(cx, cy) / (m as f64 * m as f64)
}

/// Unbiased (U-statistic) HSIC in its `O(m^2)` form. Needs `m >= 4`; can be negative.
pub fn hsic_unbiased(kx: &GramMatrix, ky: &GramMatrix) -> Result<f64> {
    let m = check_pair(kx, ky)?;
    if m < 4 {
        return input(format!(
            "unbiased HSIC needs at least 4 observations, got {m}"
        ));
    }
    Ok(hsic_unbiased_raw(kx.entries(), ky.entries()))
}

/// Works on raw symmetric matrices, ignoring their diagonals.
pub(crate) fn hsic_unbiased_raw(kx: &DMatrix<f64>, ky: &DMatrix<f64>) -> f64 {
    let m = kx.nrows();
    let mf = m as f64;
    let mut trace = 0.0;
    let mut sum_x = 0.0;
    let mut sum_y = 0.0;
    let mut cross = 0.0;
    for j in 0..m {
        let cx = kx.column(j);
        let cy = ky.column(j);
        let mut rx = 0.0;
        let mut ry = 0.0;
        for i in 0..m {
            if i != j {
                let (a, b) = (cx[i], cy[i]);
                trace += a * b;
                rx += a;
                ry += b;
            }
        }
        sum_x += rx;
        sum_y += ry;
        cross += rx * ry;
    }
    (trace + sum_x * sum_y / ((mf - 1.0) * (mf - 2.0)) - 2.0 / (mf - 2.0) * cross)
        / (mf * (mf - 3.0))
}

/// Distance-correlation style normalization of the biased statistic:
/// `<HKxH, HKyH> / (|HKxH| |HKyH|)`.
pub fn dcor(kx: &GramMatrix, ky: &GramMatrix) -> Result<f64> {
    check_pair(kx, ky)?;
    let cx = center_gram(kx)?;
    let cy = center_gram(ky)?;
    dcor_centered(cx.entries(), kx.entries(), cy.entries(), ky.entries())
}

pub(crate) fn dcor_centered(
    cx: &DMatrix<f64>,
    kx: &DMatrix<f64>,
    cy: &DMatrix<f64>,
    ky: &DMatrix<f64>,
) -> Result<f64> {
    let nx = cx.norm();
    let ny = cy.norm();
    if nx <= 1e-12 * kx.norm() || nx == 0.0 {
        return degenerate("centered X gram matrix is zero");
    }
    if ny <= 1e-12 * ky.norm() || ny == 0.0 {
        return degenerate("centered Y gram matrix is zero");
    }
    Ok(frobenius(cx, cy) / (nx * ny))
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x - ma, y - mb);
        sab += u * v;
        saa += u * u;
        sbb += v * v;
    }
    if saa == 0.0 || sbb == 0.0 {
        return degenerate("zero-variance column in correlation");
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// `(1/dx) sum_i Corr(Y, X_i)^2` for scalar `Y`.
pub fn sub_corr(sample: &PairedSample) -> Result<f64> {
    if sample.dy() != 1 {
        return input("sub_corr needs a scalar Y");
    }
    if sample.len() < 4 {
        return input("sub_corr needs at least 4 observations");
    }
    let y: Vec<f64> = sample.y().column(0).iter().copied().collect();
    let mut total = 0.0;
    for col in sample.x().column_iter() {
        let xi: Vec<f64> = col.iter().copied().collect();
        let r = pearson(&y, &xi)?;
        total += r * r;
    }
    Ok(total / sample.dx() as f64)
}

/// `(1/dx) sum_i HSIC_b(Y, X_i)^2`, one kernel per X column.
pub fn sub_hsic_columns(
    sample: &PairedSample,
    spec_y: &KernelSpec,
    specs_x: &[KernelSpec],
) -> Result<f64> {
    if specs_x.len() != sample.dx() {
        return input("need one X kernel per column");
    }
    if sample.len() < 4 {
        return input("sub_hsic needs at least 4 observations");
    }
    let ky = gram(spec_y, sample.y())?;
    let cy = center_gram(&ky)?;
    if cy.entries().amax() == 0.0 {
        return degenerate("Y is constant");
    }
    let m = sample.len();
    let mut total = 0.0;
    for (i, spec) in specs_x.iter().enumerate() {
        let xi = sample.x().columns(i, 1).into_owned();
        let cx = center_symmetric(gram(spec, &xi)?.entries());
        if cx.amax() == 0.0 {
            return degenerate(format!("X column {i} is constant"));
        }
        let h = hsic_biased_centered(&cx, cy.entries(), m);
        total += h * h;
    }
    Ok(total / sample.dx() as f64)
}

/// [`sub_hsic_columns`] with the same X kernel for every column.
pub fn sub_hsic(sample: &PairedSample, spec_y: &KernelSpec, spec_x: &KernelSpec) -> Result<f64> {
    sub_hsic_columns(sample, spec_y, &vec![*spec_x; sample.dx()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{u_oracle, v_oracle};
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = substream(seed, 9);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn raw(k: DMatrix<f64>) -> GramMatrix {
        GramMatrix::from_entries(k).unwrap()
    }

    fn random_psd(m: usize, seed: u64) -> GramMatrix {
        let a = normal(m, m + 1, seed);
        raw(&a * a.transpose())
    }

    #[test]
    fn biased_examples() {
        let kx = random_psd(5, 1);
        let ky = raw(DMatrix::from_element(5, 5, 2.0));
        assert!(hsic_biased(&kx, &ky).unwrap().abs() < 1e-15);
        let i2 = raw(DMatrix::identity(2, 2));
        assert!((hsic_biased(&i2, &i2).unwrap() - 0.25).abs() < 1e-15);
        assert!(hsic_biased(&random_psd(4, 2), &random_psd(5, 2)).is_err());
    }

    #[test]
    fn biased_matches_three_sum_oracle() {
        let lin = KernelSpec::Linear;
        for seed in 0..5 {
            let kx = gram(&lin, &normal(6, 2, seed)).unwrap();
            let ky = gram(&lin, &normal(6, 3, seed + 100)).unwrap();
            let got = hsic_biased(&kx, &ky).unwrap();
            assert!((got - v_oracle(kx.entries(), ky.entries())).abs() < 1e-10);
        }
    }

    #[test]
    fn unbiased_matches_tuple_oracle() {
        for seed in 0..5 {
            let kx = random_psd(5, seed);
            let ky = random_psd(5, seed + 50);
            let got = hsic_unbiased(&kx, &ky).unwrap();
            assert!((got - u_oracle(kx.entries(), ky.entries())).abs() < 1e-10);
        }
    }

    #[test]
    fn unbiased_with_constant_y_is_zero() {
        let kx = random_psd(5, 3);
        let ones = raw(DMatrix::from_element(5, 5, 1.0));
        assert!(u_oracle(kx.entries(), ones.entries()).abs() < 1e-10);
        assert!(hsic_unbiased(&kx, &ones).unwrap().abs() < 1e-10);
    }

    #[test]
    fn unbiased_rejects_small_m() {
        let k = random_psd(3, 1);
        assert!(hsic_unbiased(&k, &k).is_err());
    }

    #[test]
    fn unbiased_has_zero_mean_under_permutation() {
        let x = normal(40, 2, 5);
        let y = normal(40, 1, 6);
        let g = KernelSpec::gaussian(1.0).unwrap();
        let kx = gram(&g, &x).unwrap();
        let ky = gram(&g, &y).unwrap();
        let mut rng = substream(3, 3);
        let mut perm: Vec<usize> = (0..40).collect();
        let vals: Vec<f64> = (0..200)
            .map(|_| {
                perm.shuffle(&mut rng);
                hsic_unbiased(&kx, &ky.permuted(&perm).unwrap()).unwrap()
            })
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean} sd {sd}");
    }

    #[test]
    fn dcor_examples() {
        let k = random_psd(6, 7);
        assert!((dcor(&k, &k).unwrap() - 1.0).abs() < 1e-12);

        let g = KernelSpec::gaussian(1.0).unwrap();
        let x = normal(200, 3, 1);
        let y = normal(200, 3, 2);
        let v = dcor(&gram(&g, &x).unwrap(), &gram(&g, &y).unwrap()).unwrap();
        assert!(v < 0.1, "{v}");

        let flat = raw(DMatrix::from_element(6, 6, 1.0));
        assert!(matches!(
            dcor(&k, &flat),
            Err(crate::HsicError::Degenerate(_))
        ));
    }

    #[test]
    fn dcor_matches_loop_oracle() {
        let kx = random_psd(6, 10);
        let ky = random_psd(6, 11);
        let h = DMatrix::<f64>::identity(6, 6) - DMatrix::from_element(6, 6, 1.0 / 6.0);
        let a = &h * kx.entries() * &h;
        let b = &h * ky.entries() * &h;
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for i in 0..6 {
            for j in 0..6 {
                ab += a[(i, j)] * b[(i, j)];
                aa += a[(i, j)] * a[(i, j)];
                bb += b[(i, j)] * b[(i, j)];
            }
        }
        let want = ab / (aa.sqrt() * bb.sqrt());
        assert!((dcor(&kx, &ky).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn sub_corr_examples() {
        let x = normal(100, 1, 4);
        let s = PairedSample::new(x.clone(), x).unwrap();
        assert!((sub_corr(&s).unwrap() - 1.0).abs() < 1e-12);

        let s = PairedSample::new(normal(500, 3, 5), normal(500, 1, 6)).unwrap();
        assert!(sub_corr(&s).unwrap() < 0.05);

        let mut x = normal(20, 2, 1);
        x.column_mut(1).fill(3.0);
        let s = PairedSample::new(x, normal(20, 1, 2)).unwrap();
        assert!(matches!(sub_corr(&s), Err(crate::HsicError::Degenerate(_))));
    }

    #[test]
    fn sub_hsic_matches_per_dimension_loop() {
        let x = normal(12, 2, 8);
        let y = normal(12, 1, 9);
        let s = PairedSample::new(x.clone(), y.clone()).unwrap();
        let gx = KernelSpec::gaussian(0.7).unwrap();
        let gy = KernelSpec::gaussian(1.3).unwrap();
        let ky = gram(&gy, &y).unwrap();
        let mut want = 0.0;
        for i in 0..2 {
            let kx = gram(&gx, &x.columns(i, 1).into_owned()).unwrap();
            let h = v_oracle(kx.entries(), ky.entries());
            want += h * h;
        }
        want /= 2.0;
        assert!((sub_hsic(&s, &gy, &gx).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn v_and_u_statistics_converge() {
        let g = KernelSpec::gaussian(1.0).unwrap();
        let mut scaled = Vec::new();
        for &m in &[50usize, 100, 200, 400] {
            let x = normal(m, 2, 21);
            let y = x.columns(0, 1) + normal(m, 1, 22);
            let kx = gram(&g, &x).unwrap();
            let ky = gram(&g, &y).unwrap();
            let diff = (hsic_biased(&kx, &ky).unwrap() - hsic_unbiased(&kx, &ky).unwrap()).abs();
            scaled.push(m as f64 * diff);
        }
        let first = scaled[0];
        assert!(
            scaled.iter().all(|&v| v < 4.0 * first.max(1e-3)),
            "{scaled:?}"
        );
    }

    proptest! {
        #[test]
        fn statistics_invariant_to_joint_row_permutation(seed in 0u64..500) {
            let g = KernelSpec::gaussian(1.0).unwrap();
            let x = normal(9, 2, seed);
            let y = normal(9, 1, seed + 1);
            let mut perm: Vec<usize> = (0..9).collect();
            perm.shuffle(&mut substream(seed, 2));
            let kx = gram(&g, &x).unwrap();
            let ky = gram(&g, &y).unwrap();
            let px = kx.permuted(&perm).unwrap();
            let py = ky.permuted(&perm).unwrap();
            prop_assert!((hsic_biased(&kx, &ky).unwrap() - hsic_biased(&px, &py).unwrap()).abs() < 1e-10);
            prop_assert!((hsic_unbiased(&kx, &ky).unwrap() - hsic_unbiased(&px, &py).unwrap()).abs() < 1e-10);
            prop_assert!((dcor(&kx, &ky).unwrap() - dcor(&px, &py).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn biased_is_symmetric_nonnegative_and_matches_frobenius_form(seed in 0u64..500, m in 2usize..10) {
            let kx = random_psd(m, seed);
            let ky = random_psd(m, seed + 1000);
            let a = hsic_biased(&kx, &ky).unwrap();
            let b = hsic_biased(&ky, &kx).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            prop_assert!(a >= -1e-12);
            let h = DMatrix::<f64>::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64);
            let trace = (kx.entries() * &h * ky.entries() * &h).trace() / (m * m) as f64;
            prop_assert!((a - trace).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn dcor_is_bounded(seed in 0u64..100) {
            let v = dcor(&random_psd(7, seed), &random_psd(7, seed + 7)).unwrap();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
    }
}
