//! Kernel evaluations and the product-kernel weight diagonals.
//!
//! Kernels are unnormalized: the `|H|^{-1}` factor cancels out of every
//! quantity built from them, so it is never applied.

use crate::error::{Result, RodeoError};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelSpec {
    /// `exp(-u^2 / 2)`
    #[default]
    Gaussian,
    /// `(5 - u^2) 1(|u| <= sqrt 5)`
    Epanechnikov,
}

impl KernelSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelSpec::Gaussian),
            "epanechnikov" => Ok(KernelSpec::Epanechnikov),
            other => Err(RodeoError::invalid(format!("unknown kernel {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelSpec::Gaussian => "gaussian",
            KernelSpec::Epanechnikov => "epanechnikov",
        }
    }

    /// Half-width of the support in units of `u`.
    pub fn support_radius(self) -> f64 {
        match self {
            KernelSpec::Gaussian => f64::INFINITY,
            KernelSpec::Epanechnikov => SQRT5,
        }
    }
}

pub fn kernel_weight(kernel: KernelSpec, u: f64) -> f64 {
    match kernel {
        KernelSpec::Gaussian => (-0.5 * u * u).exp(),
        KernelSpec::Epanechnikov => {
            if u.abs() <= SQRT5 {
                (5.0 - u * u).max(0.0)
            } else {
                0.0
            }
        }
    }
}

/// `d log K(delta / h) / dh`, or `None` where the kernel vanishes.
fn log_derivative(kernel: KernelSpec, delta: f64, h: f64) -> Option<f64> {
    let d2 = delta * delta;
    match kernel {
        KernelSpec::Gaussian => Some(d2 / (h * h * h)),
        KernelSpec::Epanechnikov => {
            let denom = 5.0 - d2 / (h * h);
            (denom > 0.0).then(|| 2.0 * d2 / (h * h * h * denom))
        }
    }
}

/// `d K(delta / h) / dh`, finite everywhere.
fn kernel_h_derivative(kernel: KernelSpec, delta: f64, h: f64) -> f64 {
    let d2 = delta * delta;
    match kernel {
        KernelSpec::Gaussian => kernel_weight(kernel, delta / h) * d2 / (h * h * h),
        KernelSpec::Epanechnikov => {
            if delta.abs() <= SQRT5 * h {
                2.0 * d2 / (h * h * h)
            } else {
                0.0
            }
        }
    }
}

/// Product weights at one target point together with their bandwidth
/// derivatives.
///
/// `wl[j][i]` is `w_i * l[j][i] = d w_i / d h_j`, evaluated as
/// `dK(u_ij)/dh_j * prod_{k != j} K(u_ik)` so it stays finite at the edge of a
/// compact support where `l` blows up and `w` vanishes. Rows with `w_i = 0`
/// have `l` and `wl` set to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDiagonals {
    pub w: Vec<f64>,
    pub l: Vec<Vec<f64>>,
    pub wl: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

impl WeightDiagonals {
    /// Number of rows with strictly positive weight.
    pub fn support(&self) -> usize {
        self.w.iter().filter(|&&w| w > 0.0).count()
    }
}

pub(crate) fn check_bandwidth(h: &[f64]) -> Result<()> {
    if h.iter().all(|&h| h > 0.0 && h.is_finite()) {
        Ok(())
    } else {
        Err(RodeoError::invalid(format!(
            "bandwidths must be positive and finite, got {h:?}"
        )))
    }
}

/// Evaluates `W` and the `L_j` diagonals for the covariate rows `rows` around
/// `x`. `rows` yields `d`-vectors.
pub fn weight_and_logderiv<'a, I>(
    rows: I,
    x: &[f64],
    h: &[f64],
    kernel: KernelSpec,
) -> Result<WeightDiagonals>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let d = x.len();
    if h.len() != d {
        return Err(RodeoError::DimensionMismatch {
            expected: d,
            got: h.len(),
        });
    }
    check_bandwidth(h)?;

    let mut w = Vec::new();
    let mut l: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut wl: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut k = vec![0.0; d];
    for row in rows {
        if row.len() != d {
            return Err(RodeoError::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        for j in 0..d {
            k[j] = kernel_weight(kernel, (row[j] - x[j]) / h[j]);
        }
        let wi: f64 = k.iter().product();
        w.push(wi);
        for j in 0..d {
            let delta = row[j] - x[j];
            if wi > 0.0 {
                let others: f64 = k
                    .iter()
                    .enumerate()
                    .filter(|&(m, _)| m != j)
                    .map(|(_, v)| v)
                    .product();
                wl[j].push(kernel_h_derivative(kernel, delta, h[j]) * others);
                l[j].push(log_derivative(kernel, delta, h[j]).unwrap_or(0.0));
            } else {
                wl[j].push(0.0);
                l[j].push(0.0);
            }
        }
    }
    Ok(WeightDiagonals {
        w,
        l,
        wl,
        h: h.to_vec(),
    })
}
