//! Local rodeo at a single target point.
//!
//! Every bandwidth starts at `h0 = c0 / ln ln n` and every coordinate is
//! active. Each sweep evaluates the derivative statistic `Z_j` and its
//! threshold `lambda_j = s_j sqrt(2 ln n)` for all active coordinates at the
//! current bandwidth vector, then shrinks `h_j <- beta h_j` where
//! `|Z_j| > lambda_j` and deactivates the rest. The hard variant refits at the
//! final bandwidths; the soft variant integrates soft-thresholded derivatives
//! along the bandwidth path instead.

use crate::dataset::{Dataset, RngSeed};
use crate::error::{Result, RodeoError};
use crate::kernels::KernelSpec;
use crate::loclin::{BandwidthVector, LocalProblem, Smoother};
use crate::sigma::{self, SigmaMethod, DEFAULT_PAIRS};

/// Where the noise level comes from. Estimates are computed once per run on
/// the whole dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaPolicy {
    Known(f64),
    Rice(usize),
    Median(usize),
}

impl Default for SigmaPolicy {
    fn default() -> Self {
        SigmaPolicy::Median(DEFAULT_PAIRS)
    }
}

impl SigmaPolicy {
    /// Parses `known:V`, `rice:J` or `median:J`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| RodeoError::invalid(format!("bad sigma policy {s:?}")))?;
        let bad = || RodeoError::invalid(format!("bad sigma policy argument in {s:?}"));
        match kind {
            "known" => {
                let v: f64 = arg.parse().map_err(|_| bad())?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(bad());
                }
                Ok(SigmaPolicy::Known(v))
            }
            "rice" => Ok(SigmaPolicy::Rice(arg.parse().map_err(|_| bad())?)),
            "median" => Ok(SigmaPolicy::Median(arg.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }

    pub fn resolve(&self, data: &Dataset) -> Result<f64> {
        match *self {
            SigmaPolicy::Known(s) if s >= 0.0 && s.is_finite() => Ok(s),
            SigmaPolicy::Known(s) => Err(RodeoError::invalid(format!("invalid sigma {s}"))),
            SigmaPolicy::Rice(j) => Ok(sigma::estimate(data, SigmaMethod::Rice, j)?.sigma),
            SigmaPolicy::Median(j) => Ok(sigma::estimate(data, SigmaMethod::Median, j)?.sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RodeoConfig {
    pub beta: f64,
    pub c0: f64,
    pub kernel: KernelSpec,
    pub sigma_policy: SigmaPolicy,
    pub max_steps: usize,
    pub h_floor: f64,
    pub seed: RngSeed,
    pub smoother: Smoother,
}

impl Default for RodeoConfig {
    fn default() -> Self {
        Self {
            beta: 0.8,
            c0: 1.0,
            kernel: KernelSpec::Gaussian,
            sigma_policy: SigmaPolicy::default(),
            max_steps: 100,
            h_floor: 1e-3,
            seed: RngSeed::default(),
            smoother: Smoother::LocalLinear,
        }
    }
}

impl RodeoConfig {
    /// Defaults for the soft variant (slower shrinkage).
    pub fn soft_default() -> Self {
        Self {
            beta: 0.9,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(RodeoError::invalid(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(RodeoError::invalid(format!(
                "c0 must be > 0, got {}",
                self.c0
            )));
        }
        if !(self.h_floor > 0.0 && self.h_floor < self.c0) {
            return Err(RodeoError::invalid(format!(
                "h_floor must lie in (0, c0), got {}",
                self.h_floor
            )));
        }
        if self.max_steps == 0 {
            return Err(RodeoError::invalid("max_steps must be positive"));
        }
        Ok(())
    }
}

/// `c0 / ln(ln n)`. Requires `n >= 16`.
pub fn initial_bandwidth(c0: f64, n: usize) -> Result<f64> {
    if n < 16 {
        return Err(RodeoError::invalid(format!(
            "need n >= 16 for the initial bandwidth, got {n}"
        )));
    }
    if c0.is_nan() || c0 <= 0.0 {
        return Err(RodeoError::invalid(format!("c0 must be > 0, got {c0}")));
    }
    Ok(c0 / (n as f64).ln().ln())
}

/// `scale * sqrt(2 ln n)`
pub fn threshold(scale: f64, n: usize) -> f64 {
    scale * (2.0 * (n as f64).ln()).sqrt()
}

/// `sign(z) (|z| - lambda)_+`
pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    let m = z.abs() - lambda;
    if m > 0.0 {
        m.copysign(z)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepAction {
    Shrunk,
    /// Derivative under threshold; the coordinate is deactivated.
    Removed,
    /// Derivative over threshold but shrinking would cross `h_floor`.
    Frozen,
}

impl StepAction {
    pub fn name(self) -> &'static str {
        match self {
            StepAction::Shrunk => "shrunk",
            StepAction::Removed => "removed",
            StepAction::Frozen => "frozen",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub variable: usize,
    pub h_before: f64,
    pub z: f64,
    pub lambda: f64,
    pub scale: f64,
    pub action: StepAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RodeoResult {
    pub h_star: BandwidthVector,
    pub h0: f64,
    pub estimate: f64,
    pub trace: Vec<StepRecord>,
    pub stopping_time: usize,
    pub sigma_used: f64,
    /// Soft variant: the accumulated `sum_t <D(t), dh(t)>` subtracted from
    /// the initial estimate. Zero for the hard variant.
    pub correction: f64,
    /// Coordinates still active when `max_steps` ran out.
    pub unfinished: Vec<usize>,
}

/// Decides the fate of one coordinate in a sweep.
pub(crate) fn step_action(passes: bool, h_before: f64, config: &RodeoConfig) -> StepAction {
    if !passes {
        StepAction::Removed
    } else if h_before * config.beta >= config.h_floor {
        StepAction::Shrunk
    } else {
        StepAction::Frozen
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Hard,
    Soft,
}

pub fn rodeo_hard(data: &Dataset, x: &[f64], config: &RodeoConfig) -> Result<RodeoResult> {
    run(data, x, config, Mode::Hard)
}

pub fn rodeo_soft(data: &Dataset, x: &[f64], config: &RodeoConfig) -> Result<RodeoResult> {
    run(data, x, config, Mode::Soft)
}

fn run(data: &Dataset, x: &[f64], config: &RodeoConfig, mode: Mode) -> Result<RodeoResult> {
    config.validate()?;
    let n = data.n();
    let d = data.d();
    if x.len() != d {
        return Err(RodeoError::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    let h0 = initial_bandwidth(config.c0, n)?;
    let sigma = config.sigma_policy.resolve(data)?;

    let mut h = BandwidthVector::uniform(h0, d)?;
    let mut active: Vec<usize> = (0..d).collect();
    let mut trace = Vec::new();
    let mut correction = 0.0;
    let mut initial_estimate = None;
    let mut t = 0;

    while !active.is_empty() && t < config.max_steps {
        t += 1;
        let problem = LocalProblem::new(data, x, &h, config.kernel, config.smoother)?;
        if mode == Mode::Soft && initial_estimate.is_none() {
            initial_estimate = Some(problem.fit().estimate);
        }
        let mut next_h = h.clone();
        let mut next_active = Vec::with_capacity(active.len());
        for &j in &active {
            let stat = problem.derivative(j, sigma)?;
            let lambda = threshold(stat.scale, n);
            let h_before = h.get(j);
            let action = step_action(stat.z.abs() > lambda, h_before, config);
            if action == StepAction::Shrunk {
                next_h.scale(j, config.beta);
                next_active.push(j);
                if mode == Mode::Soft {
                    correction += soft_threshold(stat.z, lambda) * (1.0 - config.beta) * h_before;
                }
            }
            trace.push(StepRecord {
                step: t,
                variable: j,
                h_before,
                z: stat.z,
                lambda,
                scale: stat.scale,
                action,
            });
        }
        h = next_h;
        active = next_active;
    }

    let estimate = match mode {
        Mode::Hard => {
            LocalProblem::new(data, x, &h, config.kernel, config.smoother)?
                .fit()
                .estimate
        }
        Mode::Soft => initial_estimate.unwrap_or(f64::NAN) - correction,
    };
    Ok(RodeoResult {
        h_star: h,
        h0,
        estimate,
        trace,
        stopping_time: t,
        sigma_used: sigma,
        correction,
        unfinished: active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SyntheticSpec, Variant};
    use crate::loclin::fit_local_linear;

    #[test]
    fn initial_bandwidth_values() {
        // 1 / ln(ln 16) = 1 / ln(2.7725887) = 0.9806023
        assert!((initial_bandwidth(1.0, 16).unwrap() - 0.980_602_3).abs() < 1e-7);
        assert!((initial_bandwidth(2.0, 16).unwrap() - 1.961_204_5).abs() < 1e-7);
        assert!(initial_bandwidth(1.0, 15).is_err());
        assert!(initial_bandwidth(0.0, 100).is_err());
    }

    #[test]
    fn threshold_values() {
        assert!((threshold(1.0, 100) - 3.03485).abs() < 1e-5);
        assert_eq!(threshold(0.0, 100), 0.0);
        assert_eq!(threshold(2.0, 100), 2.0 * threshold(1.0, 100));
    }

    #[test]
    fn soft_operator() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
    }

    #[test]
    fn policy_parsing() {
        assert_eq!(
            SigmaPolicy::parse("known:0.5").unwrap(),
            SigmaPolicy::Known(0.5)
        );
        assert_eq!(
            SigmaPolicy::parse("rice:10").unwrap(),
            SigmaPolicy::Rice(10)
        );
        assert_eq!(
            SigmaPolicy::parse("median:7").unwrap(),
            SigmaPolicy::Median(7)
        );
        assert!(SigmaPolicy::parse("known:-1").is_err());
        assert!(SigmaPolicy::parse("mean:3").is_err());
        assert!(SigmaPolicy::parse("rice").is_err());
    }

    #[test]
    fn config_validation() {
        let ok = RodeoConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            RodeoConfig {
                beta: 1.0,
                ..ok.clone()
            },
            RodeoConfig {
                c0: -1.0,
                ..ok.clone()
            },
            RodeoConfig {
                h_floor: 2.0,
                ..ok.clone()
            },
            RodeoConfig {
                max_steps: 0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn linear_data(n: usize, d: usize) -> Dataset {
        let spec = SyntheticSpec::new(Variant::Linear((1..=d).map(|j| j as f64).collect()), d, 0.0)
            .unwrap();
        spec.generate(n, RngSeed::new(5, 0)).unwrap()
    }

    #[test]
    fn linear_data_removes_everything_at_once() {
        let data = linear_data(200, 4);
        let config = RodeoConfig {
            sigma_policy: SigmaPolicy::Known(1.0),
            ..Default::default()
        };
        let res = rodeo_hard(&data, &[0.5; 4], &config).unwrap();
        assert_eq!(res.stopping_time, 1);
        assert!(res.h_star.as_slice().iter().all(|&h| h == res.h0));
        assert!(res.trace.iter().all(|r| r.action == StepAction::Removed));
        assert!(res.unfinished.is_empty());

        let soft = rodeo_soft(&data, &[0.5; 4], &config).unwrap();
        let base = fit_local_linear(&data, &[0.5; 4], &res.h_star, config.kernel).unwrap();
        assert_eq!(soft.estimate, base.estimate);
        assert_eq!(soft.correction, 0.0);
    }

    fn two_relevant(seed: u64) -> Dataset {
        SyntheticSpec::new(Variant::TwoRelevant, 5, 0.5)
            .unwrap()
            .generate(400, RngSeed::new(seed, 0))
            .unwrap()
    }

    #[test]
    fn invariants_on_noisy_run() {
        let data = two_relevant(21);
        let config = RodeoConfig {
            sigma_policy: SigmaPolicy::Known(0.5),
            ..Default::default()
        };
        let x = [0.5; 5];
        let res = rodeo_hard(&data, &x, &config).unwrap();
        // Refit identity.
        let refit = fit_local_linear(&data, &x, &res.h_star, config.kernel).unwrap();
        assert_eq!(res.estimate.to_bits(), refit.estimate.to_bits());
        // Lattice.
        for &h in res.h_star.as_slice() {
            let k = (h / res.h0).ln() / config.beta.ln();
            assert!((k - k.round()).abs() < 1e-9 && k.round() <= res.stopping_time as f64);
            assert!(h <= res.h0);
        }
        // Removed coordinates never come back; shrink iff passes threshold.
        let mut gone = [false; 5];
        for rec in &res.trace {
            assert!(!gone[rec.variable]);
            if rec.action != StepAction::Shrunk {
                gone[rec.variable] = true;
            }
            let passes = rec.z.abs() > rec.lambda;
            assert_eq!(
                rec.action == StepAction::Shrunk,
                passes && rec.h_before * config.beta >= config.h_floor
            );
        }
        // Determinism.
        assert_eq!(res, rodeo_hard(&data, &x, &config).unwrap());
        // Termination bound.
        let bound = ((res.h0 / config.h_floor).ln() / (1.0 / config.beta).ln()).ceil() as usize + 1;
        assert!(res.stopping_time <= bound);
    }

    #[test]
    fn zero_sigma_runs_to_floor() {
        let data = two_relevant(2);
        let config = RodeoConfig {
            sigma_policy: SigmaPolicy::Known(0.0),
            h_floor: 0.05,
            ..Default::default()
        };
        let res = rodeo_hard(&data, &[0.5; 5], &config).unwrap();
        assert!(res.trace.iter().any(|r| r.action == StepAction::Frozen));
        let bound = ((res.h0 / config.h_floor).ln() / (1.0 / config.beta).ln()).ceil() as usize + 1;
        assert!(res.stopping_time <= bound);
    }

    #[test]
    fn max_steps_cuts_off() {
        let data = two_relevant(3);
        let config = RodeoConfig {
            sigma_policy: SigmaPolicy::Known(0.0),
            max_steps: 2,
            ..Default::default()
        };
        let res = rodeo_hard(&data, &[0.5; 5], &config).unwrap();
        assert_eq!(res.stopping_time, 2);
        assert!(!res.unfinished.is_empty());
    }

    #[test]
    fn soft_correction_accumulates_shrunk_steps() {
        let data = two_relevant(4);
        let config = RodeoConfig {
            sigma_policy: SigmaPolicy::Known(0.5),
            ..RodeoConfig::soft_default()
        };
        let x = [0.5; 5];
        let res = rodeo_soft(&data, &x, &config).unwrap();
        let expect: f64 = res
            .trace
            .iter()
            .filter(|r| r.action == StepAction::Shrunk)
            .map(|r| soft_threshold(r.z, r.lambda) * (1.0 - config.beta) * r.h_before)
            .sum();
        assert!((res.correction - expect).abs() < 1e-12);
        let h0 = BandwidthVector::uniform(res.h0, 5).unwrap();
        let base = fit_local_linear(&data, &x, &h0, config.kernel)
            .unwrap()
            .estimate;
        assert!((res.estimate - (base - expect)).abs() < 1e-12);
        // Same bandwidth dynamics as hard.
        let hard = rodeo_hard(&data, &x, &config).unwrap();
        assert_eq!(hard.h_star, res.h_star);
    }

    #[test]
    fn estimated_sigma_is_used() {
        let data = two_relevant(5);
        let config = RodeoConfig {
            sigma_policy: SigmaPolicy::Rice(20),
            ..Default::default()
        };
        let res = rodeo_hard(&data, &[0.5; 5], &config).unwrap();
        let direct = sigma::sigma_rice(&data, 20).unwrap().sigma;
        assert_eq!(res.sigma_used, direct);
    }
}
