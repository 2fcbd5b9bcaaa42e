//! Multi-point rodeo variants and the linear prefit.
//!
//! - [`linear_prefit`] removes a (lasso-penalized) linear trend so the rodeo
//!   can be run on residuals.
//! - [`global_rodeo`] replaces the local statistic with `T_j`, the average of
//!   `Z_j^2` over a set of evaluation points, thresholded by its null mean
//!   plus two null standard deviations (scaled by `sqrt(ln n)`).
//! - [`greedy_rodeo`] shrinks one bandwidth per step: the coordinate with the
//!   largest average `|Z_j| / lambda_j`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;

use crate::dataset::{Dataset, Purpose, RngSeed};
use crate::error::{Result, RodeoError};
use crate::kernels::KernelSpec;
use crate::linalg::CONDITION_LIMIT;
use crate::loclin::{dot, BandwidthVector, LocalProblem, Smoother};
use crate::rodeo::{
    initial_bandwidth, step_action, threshold, RodeoConfig, StepAction, StepRecord,
};

pub const PREFIT_TOLERANCE: f64 = 1e-10;
pub const PREFIT_MAX_SWEEPS: usize = 10_000;

/// Default number of evaluation points for the multi-point variants.
pub const DEFAULT_EVAL_POINTS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPrefit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub penalty: f64,
    pub sweeps: usize,
    pub residual_data: Dataset,
}

/// Minimizes `1/2 sum (y_i - a - x_i.b)^2 + penalty * sum |b_j|` by cyclic
/// coordinate descent on centered data. The intercept is unpenalized.
pub fn linear_prefit(data: &Dataset, penalty: f64) -> Result<LinearPrefit> {
    if !(penalty >= 0.0 && penalty.is_finite()) {
        return Err(RodeoError::invalid(format!(
            "penalty must be finite and >= 0, got {penalty}"
        )));
    }
    let n = data.n();
    let d = data.d();
    let nf = n as f64;
    let mut means = vec![0.0; d];
    for row in data.rows() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v / nf;
        }
    }
    let y_mean = data.y().iter().sum::<f64>() / nf;

    // Column-major centered design.
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| data.rows().map(|r| r[j] - means[j]).collect())
        .collect();
    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();

    if penalty == 0.0 {
        check_full_rank(&cols, n)?;
    }

    let mut resid: Vec<f64> = data.y().iter().map(|y| y - y_mean).collect();
    let mut b = vec![0.0; d];
    let mut sweeps = 0;
    while sweeps < PREFIT_MAX_SWEEPS {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..d {
            if norms[j] == 0.0 {
                continue;
            }
            let rho = dot(&cols[j], &resid) + norms[j] * b[j];
            let new = soft(rho, penalty) / norms[j];
            let delta = new - b[j];
            if delta != 0.0 {
                for (r, x) in resid.iter_mut().zip(&cols[j]) {
                    *r -= delta * x;
                }
                b[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < PREFIT_TOLERANCE {
            break;
        }
    }

    let intercept = y_mean - dot(&means, &b);
    let residuals: Vec<f64> = data
        .rows()
        .zip(data.y())
        .map(|(r, y)| y - intercept - dot(r, &b))
        .collect();
    Ok(LinearPrefit {
        intercept,
        coefficients: b,
        penalty,
        sweeps,
        residual_data: data.with_y(residuals)?,
    })
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn check_full_rank(cols: &[Vec<f64>], n: usize) -> Result<()> {
    let d = cols.len();
    if n <= d {
        return Err(RodeoError::Singular(format!(
            "least squares needs n > d, got n = {n}, d = {d}"
        )));
    }
    let gram = DMatrix::from_fn(d, d, |a, b| dot(&cols[a], &cols[b]));
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let (min, max) = (eig.min(), eig.max());
    if !(min > 0.0 && max / min <= CONDITION_LIMIT) {
        return Err(RodeoError::Singular(format!(
            "centered design is rank deficient (eigenvalues {min:e} .. {max:e})"
        )));
    }
    Ok(())
}

/// `k` distinct data rows chosen uniformly without replacement.
pub fn sample_eval_points(data: &Dataset, k: usize, seed: RngSeed) -> Result<Vec<Vec<f64>>> {
    if k == 0 || k > data.n() {
        return Err(RodeoError::invalid(format!(
            "need 1..={} evaluation points, got {k}",
            data.n()
        )));
    }
    let mut rng = seed.rng(Purpose::EvalPoints);
    let mut idx = index::sample(&mut rng, data.n(), k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| data.row(i).to_vec()).collect())
}

/// Per-variable global statistics at one bandwidth vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalStats {
    /// `T_j = (1/k) sum_i Z_j(x_i)^2`
    pub t: Vec<f64>,
    /// `tr(P_j) = ||G_j||_F^2`
    pub trace_p: Vec<f64>,
    /// `tr(P_j P_j) = ||G_j^T G_j||_F^2`
    pub trace_pp: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Null expectation of `T_j`, `sigma^2 tr(P_j) / k`.
    pub null_mean: Vec<f64>,
    pub eval_points: usize,
    pub h: BandwidthVector,
}

struct VariableStat {
    t: f64,
    trace_p: f64,
    trace_pp: f64,
    lambda: f64,
    null_mean: f64,
}

/// Builds the statistics for the listed variables without forming any
/// `n x n` matrix: only the `k x k` Gram matrix of the derivative weights.
fn global_stats_for(
    data: &Dataset,
    eval_points: &[Vec<f64>],
    h: &BandwidthVector,
    kernel: KernelSpec,
    smoother: Smoother,
    sigma: f64,
    variables: &[usize],
) -> Result<Vec<VariableStat>> {
    let k = eval_points.len();
    if k == 0 {
        return Err(RodeoError::invalid("no evaluation points"));
    }
    let problems = eval_points
        .iter()
        .map(|x| LocalProblem::new(data, x, h, kernel, smoother))
        .collect::<Result<Vec<_>>>()?;
    let kf = k as f64;
    let s2 = sigma * sigma;
    let log_n = (data.n() as f64).ln();
    Ok(variables
        .iter()
        .map(|&j| {
            let g: Vec<Vec<f64>> = problems.iter().map(|p| p.derivative_weights(j)).collect();
            let t = g.iter().map(|gi| dot(gi, data.y()).powi(2)).sum::<f64>() / kf;
            let mut trace_p = 0.0;
            let mut trace_pp = 0.0;
            for a in 0..k {
                let aa = dot(&g[a], &g[a]);
                trace_p += aa;
                trace_pp += aa * aa;
                for b in 0..a {
                    trace_pp += 2.0 * dot(&g[a], &g[b]).powi(2);
                }
            }
            let null_mean = s2 / kf * trace_p;
            let lambda = null_mean + 2.0 * s2 / kf * (trace_pp * log_n).sqrt();
            VariableStat {
                t,
                trace_p,
                trace_pp,
                lambda,
                null_mean,
            }
        })
        .collect())
}

pub fn global_statistic(
    data: &Dataset,
    eval_points: &[Vec<f64>],
    h: &BandwidthVector,
    kernel: KernelSpec,
    smoother: Smoother,
    sigma: f64,
) -> Result<GlobalStats> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(RodeoError::invalid("sigma must be finite and >= 0"));
    }
    let all: Vec<usize> = (0..data.d()).collect();
    let stats = global_stats_for(data, eval_points, h, kernel, smoother, sigma, &all)?;
    Ok(GlobalStats {
        t: stats.iter().map(|s| s.t).collect(),
        trace_p: stats.iter().map(|s| s.trace_p).collect(),
        trace_pp: stats.iter().map(|s| s.trace_pp).collect(),
        lambda: stats.iter().map(|s| s.lambda).collect(),
        null_mean: stats.iter().map(|s| s.null_mean).collect(),
        eval_points: eval_points.len(),
        h: h.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalResult {
    pub h_star: BandwidthVector,
    pub h0: f64,
    /// Rodeo trace schema: `z` holds `T_j`, `lambda` the global threshold and
    /// `scale` the null mean of `T_j`.
    pub trace: Vec<StepRecord>,
    pub stopping_time: usize,
    pub sigma_used: f64,
    pub unfinished: Vec<usize>,
}

/// Hard-threshold dynamics driven by `(T_j, lambda_j)`.
pub fn global_rodeo(
    data: &Dataset,
    eval_points: &[Vec<f64>],
    config: &RodeoConfig,
) -> Result<GlobalResult> {
    config.validate()?;
    check_points(data, eval_points)?;
    let d = data.d();
    let h0 = initial_bandwidth(config.c0, data.n())?;
    let sigma = config.sigma_policy.resolve(data)?;
    let mut h = BandwidthVector::uniform(h0, d)?;
    let mut active: Vec<usize> = (0..d).collect();
    let mut trace = Vec::new();
    let mut t = 0;
    while !active.is_empty() && t < config.max_steps {
        t += 1;
        let stats = global_stats_for(
            data,
            eval_points,
            &h,
            config.kernel,
            config.smoother,
            sigma,
            &active,
        )?;
        let mut next_h = h.clone();
        let mut next_active = Vec::with_capacity(active.len());
        for (&j, s) in active.iter().zip(&stats) {
            let h_before = h.get(j);
            let action = step_action(s.t > s.lambda, h_before, config);
            if action == StepAction::Shrunk {
                next_h.scale(j, config.beta);
                next_active.push(j);
            }
            trace.push(StepRecord {
                step: t,
                variable: j,
                h_before,
                z: s.t,
                lambda: s.lambda,
                scale: s.null_mean,
                action,
            });
        }
        h = next_h;
        active = next_active;
    }
    Ok(GlobalResult {
        h_star: h,
        h0,
        trace,
        stopping_time: t,
        sigma_used: sigma,
        unfinished: active,
    })
}

fn check_points(data: &Dataset, eval_points: &[Vec<f64>]) -> Result<()> {
    if eval_points.is_empty() {
        return Err(RodeoError::invalid("no evaluation points"));
    }
    match eval_points.iter().find(|p| p.len() != data.d()) {
        Some(p) => Err(RodeoError::DimensionMismatch {
            expected: data.d(),
            got: p.len(),
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyEvent {
    pub step: usize,
    pub variable: usize,
    /// Average `|Z_j| / lambda_j` over the evaluation points.
    pub score: f64,
    pub h_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyTrace {
    pub events: Vec<GreedyEvent>,
    /// 1-based rank of each variable's first shrink; `None` if never shrunk.
    pub selection_order: Vec<Option<usize>>,
    pub h_final: BandwidthVector,
    pub h0: f64,
    pub stopping_time: usize,
    pub sigma_used: f64,
    /// Variables whose best score exceeded 1 but could not shrink past
    /// `h_floor`.
    pub frozen: Vec<usize>,
}

impl GreedyTrace {
    /// Variables in order of first shrink.
    pub fn ordering(&self) -> Vec<usize> {
        let mut ranked: Vec<(usize, usize)> = self
            .selection_order
            .iter()
            .enumerate()
            .filter_map(|(j, r)| r.map(|r| (r, j)))
            .collect();
        ranked.sort_unstable();
        ranked.into_iter().map(|(_, j)| j).collect()
    }
}

fn ratio(z: f64, lambda: f64) -> f64 {
    if lambda > 0.0 {
        z.abs() / lambda
    } else if z == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// One bandwidth per step: the active variable with the largest average
/// normalized derivative. A variable is deactivated once its score drops to
/// 1 or below.
pub fn greedy_rodeo(
    data: &Dataset,
    eval_points: &[Vec<f64>],
    config: &RodeoConfig,
) -> Result<GreedyTrace> {
    config.validate()?;
    check_points(data, eval_points)?;
    let n = data.n();
    let d = data.d();
    let h0 = initial_bandwidth(config.c0, n)?;
    let sigma = config.sigma_policy.resolve(data)?;
    let kf = eval_points.len() as f64;

    let mut h = BandwidthVector::uniform(h0, d)?;
    let mut active: Vec<usize> = (0..d).collect();
    let mut selection_order = vec![None; d];
    let mut next_rank = 1;
    let mut events = Vec::new();
    let mut frozen = Vec::new();
    let mut t = 0;

    while !active.is_empty() && t < config.max_steps {
        let problems = eval_points
            .iter()
            .map(|x| LocalProblem::new(data, x, &h, config.kernel, config.smoother))
            .collect::<Result<Vec<_>>>()?;
        let mut scores = Vec::with_capacity(active.len());
        for &j in &active {
            let mut total = 0.0;
            for p in &problems {
                let s = p.derivative(j, sigma)?;
                total += ratio(s.z, threshold(s.scale, n));
            }
            scores.push((j, total / kf));
        }
        scores.retain(|&(_, s)| s > 1.0);
        // Highest score first, ties to the lowest index.
        scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut chosen = None;
        for &(j, score) in &scores {
            if step_action(true, h.get(j), config) == StepAction::Shrunk {
                chosen = Some((j, score));
                break;
            }
            frozen.push(j);
        }
        active = scores
            .iter()
            .map(|&(j, _)| j)
            .filter(|j| !frozen.contains(j))
            .collect();
        active.sort_unstable();

        let Some((j, score)) = chosen else { break };
        t += 1;
        h.scale(j, config.beta);
        if selection_order[j].is_none() {
            selection_order[j] = Some(next_rank);
            next_rank += 1;
        }
        events.push(GreedyEvent {
            step: t,
            variable: j,
            score,
            h_after: h.get(j),
        });
    }
    frozen.sort_unstable();
    Ok(GreedyTrace {
        events,
        selection_order,
        h_final: h,
        h0,
        stopping_time: t,
        sigma_used: sigma,
        frozen,
    })
}
