//! Experiment orchestration: the leave-one-out baseline, Monte Carlo runs
//! over seeded replicates, summaries and CSV reports.
//!
//! Replicates run in parallel but each one draws only from its own RNG
//! stream and results are collected in replicate order, so every emitted
//! byte is a function of the configuration alone.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::{format_float, load_csv, Dataset, Purpose, RngSeed, SyntheticSpec};
use crate::error::{Result, RodeoError};
use crate::kernels::KernelSpec;
use crate::loclin::{fit_local, BandwidthVector, LocalProblem, Smoother};
use crate::rodeo::{rodeo_hard, rodeo_soft, RodeoConfig, StepAction, StepRecord};
use crate::variants::{
    global_rodeo, greedy_rodeo, linear_prefit, sample_eval_points, GreedyEvent, DEFAULT_EVAL_POINTS,
};

/// Self-weights at or above this are treated as `G_ii = 1`.
pub const SELF_WEIGHT_LIMIT: f64 = 1.0 - 1e-10;

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Default cross-validation grid: 20 log-spaced bandwidths on `[0.05, 1.5]`.
pub fn default_cv_grid() -> Vec<f64> {
    log_grid(0.05, 1.5, 20)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoocvResult {
    pub best_h: f64,
    /// One entry per grid value; `None` when that bandwidth was disqualified.
    pub risks: Vec<Option<f64>>,
}

/// Below this value of `1 - G_ii` the leave-one-out residual is computed by
/// an explicit refit without row `i`.
pub const REFIT_BELOW: f64 = 1e-4;

fn held_out_fit(
    data: &Dataset,
    i: usize,
    h: &BandwidthVector,
    kernel: KernelSpec,
    smoother: Smoother,
) -> Option<f64> {
    let rows: Vec<Vec<f64>> = (0..data.n())
        .filter(|&l| l != i)
        .map(|l| data.row(l).to_vec())
        .collect();
    let y: Vec<f64> = (0..data.n())
        .filter(|&l| l != i)
        .map(|l| data.y()[l])
        .collect();
    let rest = Dataset::from_rows(&rows, y).ok()?;
    Some(
        fit_local(&rest, data.row(i), h, kernel, smoother)
            .ok()?
            .estimate,
    )
}

/// Leave-one-out risk of a single scalar bandwidth applied to every
/// coordinate, via `(Y_i - m(X_i)) / (1 - G_ii)`.
///
/// Returns `None` if some fit lacks support or has `G_ii = 1`. Rows with
/// `1 - G_ii < REFIT_BELOW` fall back to an explicit refit.
pub fn loocv_risk(data: &Dataset, h: f64, kernel: KernelSpec, smoother: Smoother) -> Option<f64> {
    let hv = BandwidthVector::uniform(h, data.d()).ok()?;
    let mut total = 0.0;
    for (i, row) in data.rows().enumerate() {
        let g = LocalProblem::new(data, row, &hv, kernel, smoother)
            .ok()?
            .effective_weights();
        if g[i] >= SELF_WEIGHT_LIMIT {
            return None;
        }
        // The weights sum to one, so both the residual and 1 - G_ii can be
        // formed from the other rows without cancellation against 1.
        let yi = data.y()[i];
        let (mut resid, mut rest) = (0.0, 0.0);
        for (l, (&gl, &yl)) in g.iter().zip(data.y()).enumerate() {
            if l != i {
                resid += gl * (yi - yl);
                rest += gl;
            }
        }
        if rest <= 0.0 {
            return None;
        }
        let loo = if rest < REFIT_BELOW {
            // Dividing by a tiny 1 - G_ii amplifies rounding; refit instead.
            yi - held_out_fit(data, i, &hv, kernel, smoother)?
        } else {
            resid / rest
        };
        total += loo * loo;
    }
    Some(total / data.n() as f64)
}

/// Picks the grid bandwidth with smallest leave-one-out risk. Risks within
/// `1e-14 * mean(Y^2)` of the minimum count as ties and the largest such
/// bandwidth wins. A bandwidth is also disqualified if the fit at `x` fails.
pub fn loocv_bandwidth(
    data: &Dataset,
    x: &[f64],
    grid: &[f64],
    kernel: KernelSpec,
    smoother: Smoother,
) -> Result<LoocvResult> {
    if grid.is_empty() || grid.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
        return Err(RodeoError::invalid("grid must be nonempty and positive"));
    }
    if data.n() < data.d() + 2 {
        return Err(RodeoError::invalid(format!(
            "leave-one-out needs n >= d + 2, got n = {}",
            data.n()
        )));
    }
    if x.len() != data.d() {
        return Err(RodeoError::DimensionMismatch {
            expected: data.d(),
            got: x.len(),
        });
    }
    let risks: Vec<Option<f64>> = grid
        .iter()
        .map(|&h| {
            let hv = BandwidthVector::uniform(h, data.d()).ok()?;
            LocalProblem::new(data, x, &hv, kernel, smoother).ok()?;
            loocv_risk(data, h, kernel, smoother)
        })
        .collect();
    let min = risks
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(RodeoError::InsufficientSupport {
            support: 0,
            required: data.d() + 1,
        });
    }
    let scale = data.y().iter().map(|y| y * y).sum::<f64>() / data.n() as f64;
    let tol = 1e-14 * scale;
    let best_h = grid
        .iter()
        .zip(&risks)
        .filter(|(_, r)| matches!(r, Some(r) if *r - min <= tol))
        .map(|(&h, _)| h)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LoocvResult { best_h, risks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Hard,
    Soft,
    Global,
    Greedy,
    Baseline,
}

impl Algorithm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Algorithm::Hard),
            "soft" => Ok(Algorithm::Soft),
            "global" => Ok(Algorithm::Global),
            "greedy" => Ok(Algorithm::Greedy),
            "baseline" => Ok(Algorithm::Baseline),
            other => Err(RodeoError::invalid(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        spec: SyntheticSpec,
        n: usize,
    },
    /// A fixed file; every replicate sees the same data.
    File {
        path: PathBuf,
        target: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestPoints {
    Fixed(Vec<Vec<f64>>),
    /// One fresh point per replicate: from the covariate law for synthetic
    /// data, a uniformly chosen data row otherwise.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub algorithm: Algorithm,
    pub replicates: usize,
    pub test_points: TestPoints,
    /// `rodeo.seed.master_seed` seeds everything; stream indices are set
    /// per replicate.
    pub rodeo: RodeoConfig,
    pub output_dir: Option<PathBuf>,
    /// Evaluation points for the global and greedy variants.
    pub eval_points: usize,
    /// Linear prefit penalty for the global and greedy variants.
    pub prefit: Option<f64>,
    pub cv_grid: Vec<f64>,
}

impl ExperimentConfig {
    pub fn new(source: DataSource, algorithm: Algorithm, rodeo: RodeoConfig) -> Self {
        Self {
            source,
            algorithm,
            replicates: 1,
            test_points: TestPoints::Random,
            rodeo,
            output_dir: None,
            eval_points: DEFAULT_EVAL_POINTS,
            prefit: None,
            cv_grid: default_cv_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(RodeoError::invalid("replicates must be at least 1"));
        }
        if let TestPoints::Fixed(p) = &self.test_points {
            if p.is_empty() {
                return Err(RodeoError::invalid("empty test point list"));
            }
        }
        match &self.source {
            DataSource::Synthetic { spec, .. } => spec.validate()?,
            DataSource::File { path, .. } => {
                if !path.exists() {
                    return Err(RodeoError::invalid(format!(
                        "data file {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        self.rodeo.validate()
    }
}

/// One (replicate, test point) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub run: usize,
    pub replicate: usize,
    pub point: usize,
    pub x: Vec<f64>,
    pub estimate: f64,
    pub truth: Option<f64>,
    pub sq_error: Option<f64>,
    pub stopping_time: usize,
    pub h: Vec<f64>,
    pub removed: usize,
    pub frozen: usize,
    pub unfinished: usize,
    pub error: Option<String>,
}

impl ReplicateRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Order statistics under the lower-middle convention: the `p`-quantile of
/// `m` sorted values is element `ceil(p m) - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_unstable_by(f64::total_cmp);
        let at = |p: f64| {
            let k = (p * v.len() as f64).ceil() as usize;
            v[k.max(1) - 1]
        };
        Some(Self {
            min: v[0],
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub bandwidths: Vec<Quartiles>,
    pub sq_error: Option<Quartiles>,
    pub stopping_time: Quartiles,
    pub removed: usize,
    pub frozen: usize,
    pub unfinished: usize,
    pub succeeded: usize,
    pub failed: usize,
}

pub fn report_summary(rows: &[ReplicateRow]) -> Result<Summary> {
    let good: Vec<&ReplicateRow> = rows.iter().filter(|r| r.ok()).collect();
    let Some(first) = good.first() else {
        return Err(RodeoError::invalid("no successful rows to summarize"));
    };
    let d = first.h.len();
    let bandwidths = (0..d)
        .map(|j| {
            let hs: Vec<f64> = good.iter().map(|r| r.h[j]).collect();
            Quartiles::of(&hs).expect("nonempty")
        })
        .collect();
    let errs: Vec<f64> = good.iter().filter_map(|r| r.sq_error).collect();
    let steps: Vec<f64> = good.iter().map(|r| r.stopping_time as f64).collect();
    Ok(Summary {
        bandwidths,
        sq_error: Quartiles::of(&errs),
        stopping_time: Quartiles::of(&steps).expect("nonempty"),
        removed: good.iter().map(|r| r.removed).sum(),
        frozen: good.iter().map(|r| r.frozen).sum(),
        unfinished: good.iter().map(|r| r.unfinished).sum(),
        succeeded: good.len(),
        failed: rows.len() - good.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReplicateRow>,
    pub summary: Option<Summary>,
    /// `(run, record)` for hard, soft and global runs.
    pub trace: Vec<(usize, StepRecord)>,
    /// `(run, event)` for greedy runs.
    pub greedy: Vec<(usize, GreedyEvent)>,
    /// `(run, variable, rank)` for greedy runs.
    pub ordering: Vec<(usize, usize, usize)>,
    pub d: usize,
}

struct ReplicateOutput {
    rows: Vec<ReplicateRow>,
    trace: Vec<(usize, StepRecord)>,
    greedy: Vec<(usize, GreedyEvent)>,
    ordering: Vec<(usize, usize, usize)>,
}

/// Termination tallies from a step trace: the last action of each variable.
fn tally(trace: &[StepRecord], d: usize) -> (usize, usize) {
    let mut last = vec![None; d];
    for r in trace {
        last[r.variable] = Some(r.action);
    }
    let removed = last
        .iter()
        .filter(|a| **a == Some(StepAction::Removed))
        .count();
    let frozen = last
        .iter()
        .filter(|a| **a == Some(StepAction::Frozen))
        .count();
    (removed, frozen)
}

fn load_source(
    config: &ExperimentConfig,
    seed: RngSeed,
) -> Result<(Dataset, Option<&SyntheticSpec>)> {
    match &config.source {
        DataSource::Synthetic { spec, n } => Ok((spec.generate(*n, seed)?, Some(spec))),
        DataSource::File { path, target } => Ok((load_csv(path, target)?, None)),
    }
}

fn test_points_for(
    config: &ExperimentConfig,
    data: &Dataset,
    spec: Option<&SyntheticSpec>,
    seed: RngSeed,
) -> Vec<Vec<f64>> {
    match &config.test_points {
        TestPoints::Fixed(p) => p.clone(),
        TestPoints::Random => {
            let mut rng = seed.rng(Purpose::TestPoint);
            match spec {
                Some(s) => vec![s.sample_point(&mut rng)],
                None => {
                    use rand::Rng;
                    vec![data.row(rng.random_range(0..data.n())).to_vec()]
                }
            }
        }
    }
}

fn run_replicate(config: &ExperimentConfig, replicate: usize) -> ReplicateOutput {
    let seed = config.rodeo.seed.with_stream(replicate as u64);
    let points_hint = match &config.test_points {
        TestPoints::Fixed(p) => p.len(),
        TestPoints::Random => 1,
    };
    let mut out = ReplicateOutput {
        rows: Vec::new(),
        trace: Vec::new(),
        greedy: Vec::new(),
        ordering: Vec::new(),
    };
    let failed = |out: &mut ReplicateOutput, msg: String, point: usize, x: Vec<f64>| {
        out.rows.push(ReplicateRow {
            run: replicate * points_hint + point,
            replicate,
            point,
            x,
            estimate: f64::NAN,
            truth: None,
            sq_error: None,
            stopping_time: 0,
            h: Vec::new(),
            removed: 0,
            frozen: 0,
            unfinished: 0,
            error: Some(msg),
        });
    };

    let (data, spec) = match load_source(config, seed) {
        Ok(v) => v,
        Err(e) => {
            for p in 0..points_hint {
                failed(&mut out, e.to_string(), p, Vec::new());
            }
            return out;
        }
    };
    let d = data.d();
    let points = test_points_for(config, &data, spec, seed);
    let mut rodeo = config.rodeo.clone();
    rodeo.seed = seed;

    // Bandwidths of the global and greedy variants do not depend on the test
    // point; compute them once per replicate.
    let shared = match config.algorithm {
        Algorithm::Global | Algorithm::Greedy => {
            Some(shared_bandwidths(config, &rodeo, &data, seed))
        }
        _ => None,
    };

    for (p, x) in points.into_iter().enumerate() {
        let run = replicate * points_hint + p;
        let truth = spec.and_then(|s| s.true_function(&x).ok());
        let outcome: Result<(f64, usize, Vec<f64>, usize, usize, usize)> = (|| {
            if x.len() != d {
                return Err(RodeoError::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
            match config.algorithm {
                Algorithm::Hard | Algorithm::Soft => {
                    let res = if config.algorithm == Algorithm::Hard {
                        rodeo_hard(&data, &x, &rodeo)?
                    } else {
                        rodeo_soft(&data, &x, &rodeo)?
                    };
                    let (removed, frozen) = tally(&res.trace, d);
                    out.trace
                        .extend(res.trace.iter().cloned().map(|r| (run, r)));
                    Ok((
                        res.estimate,
                        res.stopping_time,
                        res.h_star.into_vec(),
                        removed,
                        frozen,
                        res.unfinished.len(),
                    ))
                }
                Algorithm::Global | Algorithm::Greedy => {
                    let shared = match shared.as_ref().expect("computed above") {
                        Ok(s) => s,
                        Err(e) => return Err(RodeoError::invalid(e.clone())),
                    };
                    let h = BandwidthVector::new(shared.h.clone())?;
                    let estimate = shared.offset(&x)
                        + fit_local(&shared.data, &x, &h, rodeo.kernel, rodeo.smoother)?.estimate;
                    out.trace
                        .extend(shared.trace.iter().cloned().map(|r| (run, r)));
                    out.greedy
                        .extend(shared.greedy.iter().cloned().map(|e| (run, e)));
                    out.ordering
                        .extend(shared.ordering.iter().map(|&(j, rank)| (run, j, rank)));
                    Ok((
                        estimate,
                        shared.stopping_time,
                        shared.h.clone(),
                        shared.removed,
                        shared.frozen,
                        shared.unfinished,
                    ))
                }
                Algorithm::Baseline => {
                    let cv =
                        loocv_bandwidth(&data, &x, &config.cv_grid, rodeo.kernel, rodeo.smoother)?;
                    let h = BandwidthVector::uniform(cv.best_h, d)?;
                    let estimate = fit_local(&data, &x, &h, rodeo.kernel, rodeo.smoother)?.estimate;
                    Ok((estimate, 0, h.into_vec(), 0, 0, 0))
                }
            }
        })();
        match outcome {
            Ok((estimate, stopping_time, h, removed, frozen, unfinished)) => {
                out.rows.push(ReplicateRow {
                    run,
                    replicate,
                    point: p,
                    x,
                    estimate,
                    truth,
                    sq_error: truth.map(|t| (estimate - t).powi(2)),
                    stopping_time,
                    h,
                    removed,
                    frozen,
                    unfinished,
                    error: None,
                })
            }
            Err(e) => failed(&mut out, e.to_string(), p, x),
        }
    }
    out
}

struct SharedRun {
    /// Data the bandwidths were selected on (residuals under a prefit).
    data: Dataset,
    prefit: Option<(f64, Vec<f64>)>,
    h: Vec<f64>,
    stopping_time: usize,
    trace: Vec<StepRecord>,
    greedy: Vec<GreedyEvent>,
    ordering: Vec<(usize, usize)>,
    removed: usize,
    frozen: usize,
    unfinished: usize,
}

impl SharedRun {
    fn offset(&self, x: &[f64]) -> f64 {
        match &self.prefit {
            Some((a, b)) => a + b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>(),
            None => 0.0,
        }
    }
}

fn shared_bandwidths(
    config: &ExperimentConfig,
    rodeo: &RodeoConfig,
    data: &Dataset,
    seed: RngSeed,
) -> std::result::Result<SharedRun, String> {
    (|| -> Result<SharedRun> {
        let (work, prefit) = match config.prefit {
            Some(penalty) => {
                let fit = linear_prefit(data, penalty)?;
                (fit.residual_data, Some((fit.intercept, fit.coefficients)))
            }
            None => (data.clone(), None),
        };
        let k = config.eval_points.min(work.n());
        let pts = sample_eval_points(&work, k, seed)?;
        let d = work.d();
        if config.algorithm == Algorithm::Global {
            let res = global_rodeo(&work, &pts, rodeo)?;
            let (removed, frozen) = tally(&res.trace, d);
            Ok(SharedRun {
                data: work,
                prefit,
                h: res.h_star.into_vec(),
                stopping_time: res.stopping_time,
                trace: res.trace,
                greedy: Vec::new(),
                ordering: Vec::new(),
                removed,
                frozen,
                unfinished: res.unfinished.len(),
            })
        } else {
            let res = greedy_rodeo(&work, &pts, rodeo)?;
            let ordering: Vec<(usize, usize)> = res
                .selection_order
                .iter()
                .enumerate()
                .filter_map(|(j, r)| r.map(|r| (j, r)))
                .collect();
            let frozen = res.frozen.len();
            let unfinished = if res.stopping_time >= rodeo.max_steps {
                1
            } else {
                0
            };
            Ok(SharedRun {
                data: work,
                prefit,
                h: res.h_final.clone().into_vec(),
                stopping_time: res.stopping_time,
                trace: Vec::new(),
                greedy: res.events,
                ordering,
                removed: d - frozen,
                frozen,
                unfinished,
            })
        }
    })()
    .map_err(|e| e.to_string())
}

/// Runs every replicate, then writes the report files when `output_dir` is
/// set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let outputs: Vec<ReplicateOutput> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, r))
        .collect();
    let d = match &config.source {
        DataSource::Synthetic { spec, .. } => spec.d,
        DataSource::File { path, target } => load_csv(path, target)?.d(),
    };
    let mut report = ExperimentReport {
        rows: Vec::new(),
        summary: None,
        trace: Vec::new(),
        greedy: Vec::new(),
        ordering: Vec::new(),
        d,
    };
    for o in outputs {
        report.rows.extend(o.rows);
        report.trace.extend(o.trace);
        report.greedy.extend(o.greedy);
        report.ordering.extend(o.ordering);
    }
    report.summary = report_summary(&report.rows).ok();
    if let Some(dir) = &config.output_dir {
        write_report(&report, dir)?;
    }
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn replicates_csv(report: &ExperimentReport) -> String {
    let d = report.d;
    let mut s = String::from("run,replicate,point");
    for j in 1..=d {
        let _ = write!(s, ",x{j}");
    }
    s.push_str(",estimate,truth,sq_error,stopping_time");
    for j in 1..=d {
        let _ = write!(s, ",h{j}");
    }
    s.push_str(",removed,frozen,unfinished,status\n");
    for r in &report.rows {
        let _ = write!(s, "{},{},{}", r.run, r.replicate, r.point);
        for j in 0..d {
            let _ = write!(s, ",{}", opt(r.x.get(j).copied()));
        }
        let estimate = if r.ok() { Some(r.estimate) } else { None };
        let _ = write!(
            s,
            ",{},{},{},{}",
            opt(estimate),
            opt(r.truth),
            opt(r.sq_error),
            r.stopping_time
        );
        for j in 0..d {
            let _ = write!(s, ",{}", opt(r.h.get(j).copied()));
        }
        let status = match &r.error {
            None => "ok".to_owned(),
            Some(e) => csv_field(&format!("error: {e}")),
        };
        let _ = writeln!(s, ",{},{},{},{}", r.removed, r.frozen, r.unfinished, status);
    }
    s
}

pub fn summary_csv(summary: Option<&Summary>, d: usize) -> String {
    let mut s = String::from("quantity,variable,count,min,q1,median,q3,max\n");
    let Some(sm) = summary else {
        return s;
    };
    let quart = |s: &mut String, name: &str, var: &str, q: &Quartiles| {
        let _ = writeln!(
            s,
            "{name},{var},{},{},{},{},{},{}",
            sm.succeeded,
            format_float(q.min),
            format_float(q.q1),
            format_float(q.median),
            format_float(q.q3),
            format_float(q.max)
        );
    };
    for (j, q) in sm.bandwidths.iter().enumerate().take(d) {
        quart(&mut s, "h_star", &(j + 1).to_string(), q);
    }
    if let Some(q) = &sm.sq_error {
        quart(&mut s, "sq_error", "", q);
    }
    quart(&mut s, "stopping_time", "", &sm.stopping_time);
    for (name, count) in [
        ("removed", sm.removed),
        ("frozen", sm.frozen),
        ("unfinished", sm.unfinished),
        ("succeeded", sm.succeeded),
        ("failed", sm.failed),
    ] {
        let _ = writeln!(s, "{name},,{count},,,,,");
    }
    s
}

/// Step traces share one schema; variables are 1-based.
pub fn trace_csv(trace: &[(usize, StepRecord)]) -> String {
    let mut s = String::from("run,step,variable,h_before,z,lambda,scale,action\n");
    for (run, r) in trace {
        let _ = writeln!(
            s,
            "{run},{},{},{},{},{},{},{}",
            r.step,
            r.variable + 1,
            format_float(r.h_before),
            format_float(r.z),
            format_float(r.lambda),
            format_float(r.scale),
            r.action.name()
        );
    }
    s
}

/// Greedy events, optionally prefixed by a run id column.
pub fn greedy_csv(events: &[(usize, GreedyEvent)], with_run: bool) -> String {
    let mut s = String::from(if with_run {
        "run,step,variable,score,h_after\n"
    } else {
        "step,variable,score,h_after\n"
    });
    for (run, e) in events {
        if with_run {
            let _ = write!(s, "{run},");
        }
        let _ = writeln!(
            s,
            "{},{},{},{}",
            e.step,
            e.variable + 1,
            format_float(e.score),
            format_float(e.h_after)
        );
    }
    s
}

pub fn ordering_csv(ordering: &[(usize, usize, usize)], with_run: bool) -> String {
    let mut s = String::from(if with_run {
        "run,variable,rank\n"
    } else {
        "variable,rank\n"
    });
    let mut sorted = ordering.to_vec();
    sorted.sort_unstable_by_key(|&(run, _, rank)| (run, rank));
    for (run, j, rank) in sorted {
        if with_run {
            let _ = write!(s, "{run},");
        }
        let _ = writeln!(s, "{},{rank}", j + 1);
    }
    s
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| RodeoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `replicates.csv`, `summary.csv`, and `trace.csv` or
/// `greedy_trace.csv` plus `ordering.csv`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| RodeoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_file(&dir.join("replicates.csv"), &replicates_csv(report))?;
    write_file(
        &dir.join("summary.csv"),
        &summary_csv(report.summary.as_ref(), report.d),
    )?;
    if report.greedy.is_empty() && report.ordering.is_empty() {
        write_file(&dir.join("trace.csv"), &trace_csv(&report.trace))?;
    } else {
        write_file(
            &dir.join("greedy_trace.csv"),
            &greedy_csv(&report.greedy, true),
        )?;
        write_file(
            &dir.join("ordering.csv"),
            &ordering_csv(&report.ordering, true),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Variant;
    use crate::rodeo::SigmaPolicy;

    fn row(h: Vec<f64>, err: f64) -> ReplicateRow {
        ReplicateRow {
            run: 0,
            replicate: 0,
            point: 0,
            x: vec![0.5; h.len()],
            estimate: 1.0,
            truth: Some(1.0),
            sq_error: Some(err),
            stopping_time: 3,
            h,
            removed: 1,
            frozen: 0,
            unfinished: 0,
            error: None,
        }
    }

    #[test]
    fn quartile_conventions() {
        let q = Quartiles::of(&[5.0, 3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(
            (q.min, q.q1, q.median, q.q3, q.max),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        let q = Quartiles::of(&[0.7, 0.2]).unwrap();
        assert_eq!(q.median, 0.2);
        let q = Quartiles::of(&[0.3]).unwrap();
        assert_eq!(
            (q.min, q.q1, q.median, q.q3, q.max),
            (0.3, 0.3, 0.3, 0.3, 0.3)
        );
        assert!(Quartiles::of(&[]).is_none());
    }

    #[test]
    fn summary_of_rows() {
        let s = report_summary(&[row(vec![0.4, 0.9], 0.01)]).unwrap();
        assert_eq!(s.bandwidths[1].q1, 0.9);
        assert_eq!(s.sq_error.unwrap().max, 0.01);
        let mut bad = row(vec![], 0.0);
        bad.error = Some("boom".into());
        let s = report_summary(&[row(vec![0.4], 0.0), row(vec![0.2], 0.0), bad.clone()]).unwrap();
        assert_eq!(s.bandwidths[0].median, 0.2);
        assert_eq!((s.succeeded, s.failed), (2, 1));
        assert!(report_summary(&[]).is_err());
        assert!(report_summary(&[bad]).is_err());
    }

    #[test]
    fn grid_shape() {
        let g = default_cv_grid();
        assert_eq!(g.len(), 20);
        assert!((g[0] - 0.05).abs() < 1e-15 && (g[19] - 1.5).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    fn spec_data(variant: Variant, d: usize, n: usize, sigma: f64) -> Dataset {
        SyntheticSpec::new(variant, d, sigma)
            .unwrap()
            .generate(n, RngSeed::new(12, 0))
            .unwrap()
    }

    #[test]
    fn loocv_tie_breaks_to_largest() {
        let base = spec_data(Variant::PureNoise, 2, 30, 1.0);
        let flat = base.with_y(vec![1.5; 30]).unwrap();
        let grid = [0.2, 0.5, 1.0];
        let res = loocv_bandwidth(
            &flat,
            &[0.5, 0.5],
            &grid,
            KernelSpec::Gaussian,
            Smoother::LocalLinear,
        )
        .unwrap();
        assert!(res.risks.iter().all(|r| r.unwrap() < 1e-20));
        assert_eq!(res.best_h, 1.0);

        let lin = spec_data(Variant::Linear(vec![1.0, 2.0]), 2, 30, 0.0);
        let res = loocv_bandwidth(
            &lin,
            &[0.5, 0.5],
            &grid,
            KernelSpec::Gaussian,
            Smoother::LocalLinear,
        )
        .unwrap();
        assert!(res.risks.iter().all(|r| r.unwrap() <= 1e-16));
        assert_eq!(res.best_h, 1.0);
    }

    #[test]
    fn loocv_disqualifies_starved_bandwidths() {
        let data = spec_data(Variant::TwoRelevant, 2, 30, 0.1);
        let res = loocv_bandwidth(
            &data,
            &[0.5, 0.5],
            &[0.01, 0.8],
            KernelSpec::Epanechnikov,
            Smoother::LocalLinear,
        )
        .unwrap();
        assert_eq!(res.risks[0], None);
        assert_eq!(res.best_h, 0.8);
        assert!(loocv_bandwidth(
            &data,
            &[0.5, 0.5],
            &[],
            KernelSpec::Gaussian,
            Smoother::LocalLinear
        )
        .is_err());
    }

    #[test]
    fn trivial_experiment() {
        let spec = SyntheticSpec::new(Variant::Linear(vec![1.0, -1.0, 2.0]), 3, 0.0).unwrap();
        let rodeo = RodeoConfig {
            sigma_policy: SigmaPolicy::Known(1.0),
            ..Default::default()
        };
        let mut cfg = ExperimentConfig::new(
            DataSource::Synthetic { spec, n: 100 },
            Algorithm::Hard,
            rodeo,
        );
        cfg.test_points = TestPoints::Fixed(vec![vec![0.5; 3]]);
        let rep = run_experiment(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 1);
        let r = &rep.rows[0];
        assert_eq!(r.stopping_time, 1);
        let h0 = crate::rodeo::initial_bandwidth(1.0, 100).unwrap();
        assert!(r.h.iter().all(|&h| h == h0));
        assert_eq!(r.removed, 3);
        assert!(r.sq_error.unwrap() < 1e-16);
    }

    #[test]
    fn failed_replicates_are_counted() {
        let spec = SyntheticSpec::new(Variant::TwoRelevant, 2, 0.1).unwrap();
        let rodeo = RodeoConfig {
            sigma_policy: SigmaPolicy::Known(0.1),
            ..Default::default()
        };
        let mut cfg = ExperimentConfig::new(
            DataSource::Synthetic { spec, n: 40 },
            Algorithm::Hard,
            rodeo,
        );
        cfg.replicates = 2;
        // Second point has the wrong dimension.
        cfg.test_points = TestPoints::Fixed(vec![vec![0.5, 0.5], vec![0.5]]);
        let rep = run_experiment(&cfg).unwrap();
        let s = rep.summary.as_ref().unwrap();
        assert_eq!((s.succeeded, s.failed), (2, 2));
        let csv = replicates_csv(&rep);
        assert_eq!(csv.matches("error: ").count(), 2);
    }
}
