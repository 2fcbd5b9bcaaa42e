//! Weighted least squares by QR of the row-weighted design, so the
//! conditioning of the local problem is never squared.

use nalgebra::DMatrix;
use nalgebra::DVector;

use crate::error::{Result, RodeoError};

/// Problems whose normal-matrix condition number exceeds this get a ridge.
pub(crate) const CONDITION_LIMIT: f64 = 1e12;
/// Ridge size relative to the mean diagonal entry of the normal matrix.
pub(crate) const RIDGE_FACTOR: f64 = 1e-10;

/// Thin QR `M = Q R` of an `m x p` weighted design (`m >= p`). When guarded,
/// `R` factors `M^T M + rho I` and `Q` holds the first `m` rows of the
/// stacked factor, which is all any caller needs.
#[derive(Debug, Clone)]
pub(crate) struct LsqFactor {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    pub guarded: bool,
}

impl LsqFactor {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let (rows, p) = m.shape();
        if rows < p {
            return Err(RodeoError::Singular(format!(
                "{rows} weighted rows for {p} columns"
            )));
        }
        let trace = m.norm_squared();
        if !(trace > 0.0 && trace.is_finite()) {
            return Err(RodeoError::Singular(format!(
                "normal matrix has trace {trace}"
            )));
        }
        let qr = m.clone().qr();
        let r = qr.r();
        let sv = r.clone().svd(false, false).singular_values;
        let ratio = sv.max() / sv.min();
        if sv.min() > 0.0 && ratio * ratio <= CONDITION_LIMIT {
            return Ok(Self {
                q: qr.q(),
                r,
                guarded: false,
            });
        }
        let root = (RIDGE_FACTOR * trace / p as f64).sqrt();
        let mut stacked = DMatrix::zeros(rows + p, p);
        stacked.rows_mut(0, rows).copy_from(&m);
        for s in 0..p {
            stacked[(rows + s, s)] = root;
        }
        let qr = stacked.qr();
        let r = qr.r();
        if r.diagonal().iter().any(|&v| v == 0.0 || !v.is_finite()) {
            return Err(RodeoError::Singular("ridged factor is singular".into()));
        }
        Ok(Self {
            q: qr.q().rows(0, rows).into_owned(),
            r,
            guarded: true,
        })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `R^{-T} b`
    pub fn solve_rt(&self, b: &DVector<f64>) -> DVector<f64> {
        self.r
            .tr_solve_upper_triangular(b)
            .expect("nonzero diagonal checked at construction")
    }

    /// `R^{-1} b`
    pub fn solve_r(&self, b: &DVector<f64>) -> DVector<f64> {
        self.r
            .solve_upper_triangular(b)
            .expect("nonzero diagonal checked at construction")
    }
}
