use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;

use rodeo::dataset::{format_float, load_csv, parse_vector, Purpose};
use rodeo::harness::{
    self, default_cv_grid, loocv_bandwidth, run_experiment, summary_csv, trace_csv, Algorithm,
    DataSource, ExperimentConfig, TestPoints,
};
use rodeo::loclin::fit_local;
use rodeo::rodeo::{rodeo_hard, rodeo_soft};
use rodeo::sigma::{self, SigmaMethod, DEFAULT_PAIRS};
use rodeo::variants::{
    global_rodeo, greedy_rodeo, linear_prefit, sample_eval_points, DEFAULT_EVAL_POINTS,
};
use rodeo::{
    BandwidthVector, Dataset, KernelSpec, RngSeed, RodeoConfig, RodeoError, SigmaPolicy, Smoother,
    SyntheticSpec,
};

#[derive(Parser)]
#[command(
    name = "rodeo",
    version,
    about = "Rodeo bandwidth selection for local regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One local fit at a point with a given bandwidth.
    Fit(FitArgs),
    /// Rodeo at a single point.
    Rodeo(RodeoArgs),
    /// Global rodeo over sampled evaluation points.
    Global(GlobalArgs),
    /// Greedy rodeo over sampled evaluation points.
    Greedy(GlobalArgs),
    /// Noise level from nearest pairs.
    Sigma(SigmaArgs),
    /// Leave-one-out choice of a single scalar bandwidth.
    Loocv(LoocvArgs),
    /// Monte Carlo experiment over replicates.
    Experiment(ExperimentArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Response column of --data.
    #[arg(long, default_value = "y")]
    target: String,
    /// two-relevant, cubic-sine, one-dim-sine, turlach, linear[:b1,..,bd] or pure-noise.
    #[arg(long)]
    synthetic: Option<String>,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Defaults to the function's natural dimension, or 10.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct PointArgs {
    /// Comma-separated test point.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "x_random")]
    x: Option<String>,
    /// Draw the test point from the covariate law (or a random data row).
    #[arg(long)]
    x_random: bool,
}

#[derive(Args, Clone)]
struct SmoothArgs {
    #[arg(long, default_value = "gaussian")]
    kernel: String,
    /// local-linear or kernel.
    #[arg(long, default_value = "local-linear")]
    smoother: String,
}

#[derive(Args, Clone)]
struct TuneArgs {
    /// Shrink factor; 0.8 by default, 0.9 for the soft variant.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    c0: f64,
    /// known:V, rice:J or median:J.
    #[arg(long, default_value = "median:20")]
    sigma_policy: String,
    #[arg(long, default_value_t = 100)]
    max_steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    h_floor: f64,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    point: PointArgs,
    #[command(flatten)]
    smooth: SmoothArgs,
    /// Scalar or comma-separated bandwidth vector.
    #[arg(long)]
    h: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum RodeoVariant {
    Hard,
    Soft,
}

#[derive(Args)]
struct RodeoArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    point: PointArgs,
    #[command(flatten)]
    smooth: SmoothArgs,
    #[command(flatten)]
    tune: TuneArgs,
    #[arg(long, value_enum, default_value = "hard")]
    variant: RodeoVariant,
    /// Directory for result.csv and trace.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GlobalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    smooth: SmoothArgs,
    #[command(flatten)]
    tune: TuneArgs,
    /// Number of evaluation points.
    #[arg(long, default_value_t = DEFAULT_EVAL_POINTS)]
    k: usize,
    /// Fit a linear model with this L1 penalty first and work on residuals.
    #[arg(long)]
    prefit: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SigmaKind {
    Rice,
    Median,
}

#[derive(Args)]
struct SigmaArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "median")]
    method: SigmaKind,
    /// Number of nearest pairs.
    #[arg(long, default_value_t = DEFAULT_PAIRS)]
    pairs: usize,
}

#[derive(Args)]
struct LoocvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    point: PointArgs,
    #[command(flatten)]
    smooth: SmoothArgs,
    /// Comma-separated bandwidth grid.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    smooth: SmoothArgs,
    #[command(flatten)]
    tune: TuneArgs,
    #[arg(long, value_enum)]
    algorithm: AlgorithmArg,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Fixed test points, separated by ';'. Random per replicate otherwise.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "x_random")]
    x: Option<String>,
    #[arg(long)]
    x_random: bool,
    #[arg(long, default_value_t = DEFAULT_EVAL_POINTS)]
    k: usize,
    #[arg(long)]
    prefit: Option<f64>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Hard,
    Soft,
    Global,
    Greedy,
    Baseline,
}

type Res<T> = Result<T, RodeoError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Res<String> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Rodeo(a) => cmd_rodeo(a),
        Command::Global(a) => cmd_global(a, false),
        Command::Greedy(a) => cmd_global(a, true),
        Command::Sigma(a) => cmd_sigma(a),
        Command::Loocv(a) => cmd_loocv(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

fn synthetic_spec(a: &DataArgs, name: &str) -> Res<SyntheticSpec> {
    let d = match a.d {
        Some(d) => d,
        None => match name.split_once(':') {
            Some(("linear", coefs)) => parse_vector(coefs)?.len(),
            _ => match name {
                "one-dim-sine" => 1,
                _ => 10,
            },
        },
    };
    SyntheticSpec::parse(name, d, a.sigma)
}

fn source(a: &DataArgs) -> Res<DataSource> {
    match (&a.data, &a.synthetic) {
        (Some(path), None) => Ok(DataSource::File {
            path: path.clone(),
            target: a.target.clone(),
        }),
        (None, Some(name)) => Ok(DataSource::Synthetic {
            spec: synthetic_spec(a, name)?,
            n: a.n,
        }),
        _ => Err(RodeoError::InvalidInput(
            "give exactly one of --data or --synthetic".into(),
        )),
    }
}

fn load(a: &DataArgs) -> Res<(Dataset, Option<SyntheticSpec>)> {
    match source(a)? {
        DataSource::File { path, target } => Ok((load_csv(path, &target)?, None)),
        DataSource::Synthetic { spec, n } => {
            let data = spec.generate(n, RngSeed::new(a.seed, 0))?;
            Ok((data, Some(spec)))
        }
    }
}

fn test_point(
    p: &PointArgs,
    data: &Dataset,
    spec: Option<&SyntheticSpec>,
    seed: u64,
) -> Res<Vec<f64>> {
    let x = match (&p.x, p.x_random) {
        (Some(s), false) => parse_vector(s)?,
        (None, true) => {
            let mut rng = RngSeed::new(seed, 0).rng(Purpose::TestPoint);
            match spec {
                Some(s) => s.sample_point(&mut rng),
                None => data.row(rng.random_range(0..data.n())).to_vec(),
            }
        }
        _ => {
            return Err(RodeoError::InvalidInput(
                "give exactly one of --x or --x-random".into(),
            ))
        }
    };
    if x.len() != data.d() {
        return Err(RodeoError::DimensionMismatch {
            expected: data.d(),
            got: x.len(),
        });
    }
    Ok(x)
}

fn config(
    data: &DataArgs,
    smooth: &SmoothArgs,
    tune: &TuneArgs,
    default_beta: f64,
) -> Res<RodeoConfig> {
    let cfg = RodeoConfig {
        beta: tune.beta.unwrap_or(default_beta),
        c0: tune.c0,
        kernel: KernelSpec::parse(&smooth.kernel)?,
        sigma_policy: SigmaPolicy::parse(&tune.sigma_policy)?,
        max_steps: tune.max_steps,
        h_floor: tune.h_floor,
        seed: RngSeed::new(data.seed, 0),
        smoother: Smoother::parse(&smooth.smoother)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn h_columns(s: &mut String, d: usize) {
    for j in 1..=d {
        let _ = write!(s, ",h{j}");
    }
}

fn h_values(s: &mut String, h: &[f64]) {
    for v in h {
        let _ = write!(s, ",{}", format_float(*v));
    }
}

fn write_out(dir: &Option<PathBuf>, files: &[(&str, &str)]) -> Res<()> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|source| RodeoError::Io {
            path: dir.clone(),
            source,
        })?;
        for (name, contents) in files {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|source| RodeoError::Io { path, source })?;
        }
    }
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Res<String> {
    let (data, spec) = load(&a.data)?;
    let x = test_point(&a.point, &data, spec.as_ref(), a.data.seed)?;
    let hv = parse_vector(&a.h)?;
    let h = if hv.len() == 1 {
        BandwidthVector::uniform(hv[0], data.d())?
    } else {
        BandwidthVector::new(hv)?
    };
    let kernel = KernelSpec::parse(&a.smooth.kernel)?;
    let smoother = Smoother::parse(&a.smooth.smoother)?;
    let fit = fit_local(&data, &x, &h, kernel, smoother)?;
    let mut s = String::from("estimate,condition_flag");
    for c in 0..fit.coefficients.len() {
        let _ = write!(s, ",b{c}");
    }
    let _ = write!(s, "\n{},{}", format_float(fit.estimate), fit.condition_flag);
    h_values(&mut s, &fit.coefficients);
    s.push('\n');
    Ok(s)
}

fn cmd_rodeo(a: RodeoArgs) -> Res<String> {
    let (data, spec) = load(&a.data)?;
    let x = test_point(&a.point, &data, spec.as_ref(), a.data.seed)?;
    let (res, name) = match a.variant {
        RodeoVariant::Hard => (
            rodeo_hard(&data, &x, &config(&a.data, &a.smooth, &a.tune, 0.8)?)?,
            "hard",
        ),
        RodeoVariant::Soft => (
            rodeo_soft(&data, &x, &config(&a.data, &a.smooth, &a.tune, 0.9)?)?,
            "soft",
        ),
    };
    let mut s = String::from("variant,estimate,stopping_time,sigma,correction,h0");
    h_columns(&mut s, data.d());
    let _ = write!(
        s,
        "\n{name},{},{},{},{},{}",
        format_float(res.estimate),
        res.stopping_time,
        format_float(res.sigma_used),
        format_float(res.correction),
        format_float(res.h0)
    );
    h_values(&mut s, res.h_star.as_slice());
    s.push('\n');
    let trace: Vec<_> = res.trace.into_iter().map(|r| (0, r)).collect();
    write_out(
        &a.out,
        &[("result.csv", &s), ("trace.csv", &trace_csv(&trace))],
    )?;
    Ok(s)
}

fn cmd_global(a: GlobalArgs, greedy: bool) -> Res<String> {
    let (data, _) = load(&a.data)?;
    let cfg = config(&a.data, &a.smooth, &a.tune, 0.8)?;
    let work = match a.prefit {
        Some(p) => linear_prefit(&data, p)?.residual_data,
        None => data,
    };
    let pts = sample_eval_points(&work, a.k.min(work.n()), cfg.seed)?;
    if greedy {
        let res = greedy_rodeo(&work, &pts, &cfg)?;
        let events: Vec<_> = res.events.iter().cloned().map(|e| (0, e)).collect();
        let trace = harness::greedy_csv(&events, false);
        let ordering: Vec<_> = res
            .selection_order
            .iter()
            .enumerate()
            .filter_map(|(j, r)| r.map(|r| (0, j, r)))
            .collect();
        let ordering = harness::ordering_csv(&ordering, false);
        write_out(
            &a.out,
            &[("greedy_trace.csv", &trace), ("ordering.csv", &ordering)],
        )?;
        Ok(trace)
    } else {
        let res = global_rodeo(&work, &pts, &cfg)?;
        let mut s = String::from("stopping_time,sigma,h0");
        h_columns(&mut s, work.d());
        let _ = write!(
            s,
            "\n{},{},{}",
            res.stopping_time,
            format_float(res.sigma_used),
            format_float(res.h0)
        );
        h_values(&mut s, res.h_star.as_slice());
        s.push('\n');
        let trace: Vec<_> = res.trace.into_iter().map(|r| (0, r)).collect();
        write_out(
            &a.out,
            &[("result.csv", &s), ("trace.csv", &trace_csv(&trace))],
        )?;
        Ok(s)
    }
}

fn cmd_sigma(a: SigmaArgs) -> Res<String> {
    let (data, _) = load(&a.data)?;
    let method = match a.method {
        SigmaKind::Rice => SigmaMethod::Rice,
        SigmaKind::Median => SigmaMethod::Median,
    };
    let est = sigma::estimate(&data, method, a.pairs)?;
    Ok(format!(
        "method,J,sigma,sigma2,D\n{},{},{},{},{}\n",
        est.method.name(),
        est.pairs,
        format_float(est.sigma),
        format_float(est.sigma2),
        format_float(est.max_distance)
    ))
}

fn cmd_loocv(a: LoocvArgs) -> Res<String> {
    let (data, spec) = load(&a.data)?;
    let x = test_point(&a.point, &data, spec.as_ref(), a.data.seed)?;
    let grid = match &a.grid {
        Some(g) => parse_vector(g)?,
        None => default_cv_grid(),
    };
    let kernel = KernelSpec::parse(&a.smooth.kernel)?;
    let smoother = Smoother::parse(&a.smooth.smoother)?;
    let res = loocv_bandwidth(&data, &x, &grid, kernel, smoother)?;
    let mut s = String::from("h,risk,selected\n");
    for (h, r) in grid.iter().zip(&res.risks) {
        let risk = r.map(format_float).unwrap_or_default();
        let _ = writeln!(s, "{},{risk},{}", format_float(*h), *h == res.best_h);
    }
    Ok(s)
}

fn cmd_experiment(a: ExperimentArgs) -> Res<String> {
    let default_beta = if matches!(a.algorithm, AlgorithmArg::Soft) {
        0.9
    } else {
        0.8
    };
    let rodeo = config(&a.data, &a.smooth, &a.tune, default_beta)?;
    let algorithm = match a.algorithm {
        AlgorithmArg::Hard => Algorithm::Hard,
        AlgorithmArg::Soft => Algorithm::Soft,
        AlgorithmArg::Global => Algorithm::Global,
        AlgorithmArg::Greedy => Algorithm::Greedy,
        AlgorithmArg::Baseline => Algorithm::Baseline,
    };
    let mut cfg = ExperimentConfig::new(source(&a.data)?, algorithm, rodeo);
    cfg.replicates = a.replicates;
    cfg.test_points = match &a.x {
        Some(list) => {
            TestPoints::Fixed(list.split(';').map(parse_vector).collect::<Res<Vec<_>>>()?)
        }
        None => TestPoints::Random,
    };
    cfg.output_dir = Some(a.out);
    cfg.eval_points = a.k;
    cfg.prefit = a.prefit;
    if let Some(g) = &a.grid {
        cfg.cv_grid = parse_vector(g)?;
    }
    let report = run_experiment(&cfg)?;
    if report.summary.is_none() {
        let first = report
            .rows
            .iter()
            .find_map(|r| r.error.clone())
            .unwrap_or_default();
        return Err(RodeoError::Singular(format!(
            "every replicate failed; first error: {first}"
        )));
    }
    Ok(summary_csv(report.summary.as_ref(), report.d))
}
