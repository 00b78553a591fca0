//! Brute-force reference implementations used only by tests.

use nalgebra::DMatrix;

/// V-statistic as three with-replacement sums.
pub(crate) fn v_oracle(kx: &DMatrix<f64>, ky: &DMatrix<f64>) -> f64 {
    let m = kx.nrows();
    let mf = m as f64;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            a += kx[(i, j)] * ky[(i, j)];
            for q in 0..m {
                c += kx[(i, j)] * ky[(i, q)];
                for r in 0..m {
                    b += kx[(i, j)] * ky[(q, r)];
                }
            }
        }
    }
    a / mf.powi(2) + b / mf.powi(4) - 2.0 * c / mf.powi(3)
}

/// U-statistic as three sums over tuples drawn without replacement.
pub(crate) fn u_oracle(kx: &DMatrix<f64>, ky: &DMatrix<f64>) -> f64 {
    let m = kx.nrows();
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    let (mut na, mut nb, mut nc) = (0.0, 0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            if j == i {
                continue;
            }
            a += kx[(i, j)] * ky[(i, j)];
            na += 1.0;
            for q in 0..m {
                if q == i || q == j {
                    continue;
                }
                c += kx[(i, j)] * ky[(i, q)];
                nc += 1.0;
                for r in 0..m {
                    if r == i || r == j || r == q {
                        continue;
                    }
                    b += kx[(i, j)] * ky[(q, r)];
                    nb += 1.0;
                }
            }
        }
    }
    a / na + b / nb - 2.0 * c / nc
}
