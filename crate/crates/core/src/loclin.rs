//! Local linear fit, its effective kernel, and the bandwidth derivative
//! statistic.
//!
//! For a target point `x` the local design has rows `(1, X_i - x)` and
//! weights `w_i`. Internally each slope column is divided by its weighted RMS;
//! that leaves the intercept, the effective kernel and every derivative
//! weight unchanged and keeps the normal matrix equilibrated at any
//! bandwidth.
//!
//! With `B = (X^T W X)^{-1} X^T W` the derivative of the estimate with respect
//! to `h_j` is the linear functional
//!
//! ```text
//! Z_j = e1^T B L_j (I - X B) Y = g_j^T Y
//! ```
//!
//! evaluated here as `g_j = u - W X A^{-1} X^T u` with `u_i = (X_i . A^{-1} e1)
//! (W L_j)_ii`. Every product with `A^{-1}` goes through one QR factorization
//! of `W^{1/2} X` shared by all `d` derivatives, so the conditioning of `A`
//! is never squared.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Result, RodeoError};
use crate::kernels::{check_bandwidth, weight_and_logderiv, KernelSpec};
use crate::linalg::LsqFactor;

/// Gaussian weights below this fraction of the largest weight do not count
/// towards the support requirement.
pub const GAUSSIAN_SUPPORT_CUTOFF: f64 = 1e-12;

/// Per-coordinate bandwidths, all positive and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthVector(Vec<f64>);

impl BandwidthVector {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.is_empty() {
            return Err(RodeoError::invalid("empty bandwidth vector"));
        }
        check_bandwidth(&h)?;
        Ok(Self(h))
    }

    pub fn uniform(h: f64, d: usize) -> Result<Self> {
        Self::new(vec![h; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> f64 {
        self.0[j]
    }

    /// Multiplies coordinate `j` by `factor`.
    pub(crate) fn scale(&mut self, j: usize, factor: f64) {
        self.0[j] *= factor;
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Underlying smoother: local linear, or local constant (Nadaraya-Watson).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoother {
    #[default]
    LocalLinear,
    KernelRegression,
}

impl Smoother {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "local-linear" | "loclin" => Ok(Smoother::LocalLinear),
            "kernel" | "kernel-regression" | "nw" => Ok(Smoother::KernelRegression),
            other => Err(RodeoError::invalid(format!("unknown smoother {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Smoother::LocalLinear => "local-linear",
            Smoother::KernelRegression => "kernel-regression",
        }
    }

    fn columns(self, d: usize) -> usize {
        match self {
            Smoother::LocalLinear => d + 1,
            Smoother::KernelRegression => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub estimate: f64,
    /// Intercept then slopes in the original covariate units. The kernel
    /// regression smoother has the intercept only.
    pub coefficients: Vec<f64>,
    /// Effective kernel `G(X_i, x, h)`, one entry per row of the data.
    pub effective_weights: Vec<f64>,
    /// Set when the normal matrix needed a ridge.
    pub condition_flag: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStat {
    pub z: f64,
    pub scale: f64,
    pub gj_weights: Vec<f64>,
}

/// The factorized local problem at one `(x, h)`. Build once, then query the
/// fit and any number of derivative statistics.
#[derive(Debug, Clone)]
pub struct LocalProblem<'a> {
    data: &'a Dataset,
    /// Divisors applied to the slope columns.
    col_scale: Vec<f64>,
    smoother: Smoother,
    /// Rows with positive weight, by decreasing weight.
    rows: Vec<usize>,
    /// `sqrt(w)` with weights rescaled so the largest is 1.
    root_w: Vec<f64>,
    /// `d log w / d h_j` per coordinate, on `rows`.
    l: Vec<Vec<f64>>,
    factor: LsqFactor,
    /// `Q_k . R^{-T} e1`, so that `G_k = root_w[k] * qe[k]`.
    qe: Vec<f64>,
}

impl<'a> LocalProblem<'a> {
    pub fn new(
        data: &'a Dataset,
        x: &[f64],
        h: &BandwidthVector,
        kernel: KernelSpec,
        smoother: Smoother,
    ) -> Result<Self> {
        let d = data.d();
        if x.len() != d {
            return Err(RodeoError::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if h.len() != d {
            return Err(RodeoError::DimensionMismatch {
                expected: d,
                got: h.len(),
            });
        }
        let h = h.as_slice();
        let p = smoother.columns(d);
        let diag = weight_and_logderiv(data.rows(), x, h, kernel)?;

        let max_w = diag.w.iter().copied().fold(0.0, f64::max);
        let cutoff = match kernel {
            KernelSpec::Gaussian => GAUSSIAN_SUPPORT_CUTOFF * max_w,
            KernelSpec::Epanechnikov => 0.0,
        };
        let support = diag.w.iter().filter(|&&w| w > cutoff).count();
        if max_w <= 0.0 || support < p {
            return Err(RodeoError::InsufficientSupport {
                support: if max_w > 0.0 { support } else { 0 },
                required: p,
            });
        }

        // Heaviest rows first: Householder QR stays accurate under widely
        // varying row scales only when rows come in decreasing size.
        let mut rows: Vec<usize> = (0..data.n()).filter(|&i| diag.w[i] > 0.0).collect();
        rows.sort_by(|&a, &b| diag.w[b].total_cmp(&diag.w[a]).then(a.cmp(&b)));
        let w: Vec<f64> = rows.iter().map(|&i| diag.w[i] / max_w).collect();
        let l: Vec<Vec<f64>> = diag
            .l
            .iter()
            .map(|col| rows.iter().map(|&i| col[i]).collect())
            .collect();

        // Equilibrate slope columns to unit weighted RMS.
        let col_scale: Vec<f64> = if p > 1 {
            let total: f64 = w.iter().sum();
            (0..d)
                .map(|j| {
                    let ms = rows
                        .iter()
                        .zip(&w)
                        .map(|(&i, wi)| wi * (data.row(i)[j] - x[j]).powi(2))
                        .sum::<f64>()
                        / total;
                    if ms > 0.0 {
                        ms.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect()
        } else {
            Vec::new()
        };

        let root_w: Vec<f64> = w.iter().map(|w| w.sqrt()).collect();
        let mut m = DMatrix::<f64>::zeros(rows.len(), p);
        for (k, &i) in rows.iter().enumerate() {
            m[(k, 0)] = root_w[k];
            if p > 1 {
                for (j, ((r, x), c)) in data.row(i).iter().zip(x).zip(&col_scale).enumerate() {
                    m[(k, j + 1)] = root_w[k] * (r - x) / c;
                }
            }
        }
        let factor = LsqFactor::new(m)?;
        let mut e1 = DVector::zeros(p);
        e1[0] = 1.0;
        let qe = (factor.q() * factor.solve_rt(&e1))
            .iter()
            .copied()
            .collect();
        Ok(Self {
            data,
            col_scale,
            smoother,
            rows,
            root_w,
            l,
            factor,
            qe,
        })
    }

    pub fn condition_flag(&self) -> bool {
        self.factor.guarded
    }

    pub fn smoother(&self) -> Smoother {
        self.smoother
    }

    /// Effective kernel weights, one per data row.
    pub fn effective_weights(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.data.n()];
        for (k, &i) in self.rows.iter().enumerate() {
            g[i] = self.root_w[k] * self.qe[k];
        }
        g
    }

    pub fn fit(&self) -> LocalFit {
        self.fit_with(self.data.y())
    }

    /// Fit using responses `y` in place of the dataset's own.
    pub fn fit_with(&self, y: &[f64]) -> LocalFit {
        let effective_weights = self.effective_weights();
        let estimate = dot(&effective_weights, y);
        let wy = DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().zip(&self.root_w).map(|(&i, s)| s * y[i]),
        );
        let alpha = self.factor.solve_r(&self.factor.q().tr_mul(&wy));
        let mut coefficients: Vec<f64> = alpha.iter().copied().collect();
        for (c, s) in coefficients.iter_mut().skip(1).zip(&self.col_scale) {
            *c /= s;
        }
        LocalFit {
            estimate,
            coefficients,
            effective_weights,
            condition_flag: self.factor.guarded,
        }
    }

    /// Row vector `G_j(X_i, x, h)`, one entry per data row.
    ///
    /// With `M = W^{1/2} X = QR` and `a_k = (Q_k . R^{-T} e1) l_jk`, this is
    /// `W^{1/2} (a - Q Q^T a)`.
    pub fn derivative_weights(&self, j: usize) -> Vec<f64> {
        let l = &self.l[j];
        let a = DVector::from_iterator(self.rows.len(), self.qe.iter().zip(l).map(|(q, l)| q * l));
        let q = self.factor.q();
        let resid = &a - q * q.tr_mul(&a);
        let mut g = vec![0.0; self.data.n()];
        for (k, &i) in self.rows.iter().enumerate() {
            g[i] = self.root_w[k] * resid[k];
        }
        g
    }

    pub fn derivative(&self, j: usize, sigma: f64) -> Result<DerivativeStat> {
        self.derivative_with(j, sigma, self.data.y())
    }

    pub fn derivative_with(&self, j: usize, sigma: f64, y: &[f64]) -> Result<DerivativeStat> {
        if j >= self.data.d() {
            return Err(RodeoError::invalid(format!(
                "variable index {j} out of range for d = {}",
                self.data.d()
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(RodeoError::invalid("sigma must be finite and >= 0"));
        }
        let gj_weights = self.derivative_weights(j);
        let z = dot(&gj_weights, y);
        let scale = sigma * gj_weights.iter().map(|g| g * g).sum::<f64>().sqrt();
        Ok(DerivativeStat {
            z,
            scale,
            gj_weights,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

pub fn fit_local(
    data: &Dataset,
    x: &[f64],
    h: &BandwidthVector,
    kernel: KernelSpec,
    smoother: Smoother,
) -> Result<LocalFit> {
    Ok(LocalProblem::new(data, x, h, kernel, smoother)?.fit())
}

pub fn fit_local_linear(
    data: &Dataset,
    x: &[f64],
    h: &BandwidthVector,
    kernel: KernelSpec,
) -> Result<LocalFit> {
    fit_local(data, x, h, kernel, Smoother::LocalLinear)
}

pub fn derivative_stat(
    data: &Dataset,
    x: &[f64],
    h: &BandwidthVector,
    j: usize,
    kernel: KernelSpec,
    sigma: f64,
) -> Result<DerivativeStat> {
    LocalProblem::new(data, x, h, kernel, Smoother::LocalLinear)?.derivative(j, sigma)
}
