//! Small dense linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition numbers above this are reported as singular.
pub const SINGULAR_CONDITION: f64 = 1e10;

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve `m x = b` with column-pivoted QR, rejecting ill-conditioned systems.
pub fn solve(m: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let cond = condition_number(m);
    if !(cond <= SINGULAR_CONDITION) {
        return Err(Error::Singular {
            context: context.to_string(),
            condition: cond,
        });
    }
    m.clone()
        .col_piv_qr()
        .solve(b)
        .ok_or_else(|| Error::Singular {
            context: context.to_string(),
            condition: cond,
        })
}

/// Inverse through column-pivoted QR.
pub fn inverse(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let cond = condition_number(m);
    if !(cond <= SINGULAR_CONDITION) {
        return Err(Error::Singular {
            context: context.to_string(),
            condition: cond,
        });
    }
    let n = m.nrows();
    m.clone()
        .col_piv_qr()
        .solve(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Singular {
            context: context.to_string(),
            condition: cond,
        })
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Kahan-compensated accumulator for vectors and matrices of fixed length.
#[derive(Debug, Clone)]
pub struct KahanSum {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl KahanSum {
    pub fn new(len: usize) -> Self {
        KahanSum {
            sum: vec![0.0; len],
            comp: vec![0.0; len],
        }
    }

    pub fn add(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.sum.len());
        for ((s, c), &v) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(values) {
            let y = v - *c;
            let t = *s + y;
            *c = (t - *s) - y;
            *s = t;
        }
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.sum
    }
}
