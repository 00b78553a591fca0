use nalgebra::DMatrix;

use crate::error::{input, Result};

/// Two aligned observation matrices: row `i` of `x` is paired with row `i` of `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl PairedSample {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return input(format!(
                "row count mismatch: X has {} rows, Y has {}",
                x.nrows(),
                y.nrows()
            ));
        }
        if x.nrows() == 0 {
            return input("sample must contain at least one observation");
        }
        if x.ncols() == 0 || y.ncols() == 0 {
            return input("observations must have at least one dimension");
        }
        check_finite(&x, "X")?;
        check_finite(&y, "Y")?;
        Ok(Self { x, y })
    }

    /// Number of paired observations.
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dx(&self) -> usize {
        self.x.ncols()
    }

    pub fn dy(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.x, self.y)
    }

    /// Copy with `y` rows reordered: new row `i` is old row `perm[i]`. X is untouched.
    pub fn with_y_permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.len())?;
        Ok(Self {
            x: self.x.clone(),
            y: select_rows(&self.y, perm),
        })
    }

    /// Joint reordering of both sides.
    pub fn with_rows_permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.len())?;
        Ok(Self {
            x: select_rows(&self.x, perm),
            y: select_rows(&self.y, perm),
        })
    }

    /// Contiguous row range `[start, start + len)`.
    pub fn rows(&self, start: usize, len: usize) -> Self {
        Self {
            x: self.x.rows(start, len).into_owned(),
            y: self.y.rows(start, len).into_owned(),
        }
    }
}

pub(crate) fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

pub(crate) fn check_permutation(perm: &[usize], m: usize) -> Result<()> {
    if perm.len() != m {
        return input(format!(
            "permutation has length {}, expected {m}",
            perm.len()
        ));
    }
    let mut seen = vec![false; m];
    for &p in perm {
        if p >= m || seen[p] {
            return input("not a permutation");
        }
        seen[p] = true;
    }
    Ok(())
}

fn check_finite(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % m.nrows(), pos / m.nrows());
        return input(format!(
            "{name} has a non-finite entry at row {r}, column {c}"
        ));
    }
    Ok(())
}
