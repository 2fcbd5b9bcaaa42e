//! Data model, CSV ingestion/emission, synthetic generators and the RNG
//! contract.
//!
//! Every random draw in the crate goes through [`RngSeed`]. A seed names a
//! ChaCha20 key (derived from the master seed and a purpose tag) and a
//! ChaCha stream (the replicate number), so replicate `r` of an experiment is
//! reproducible in isolation and independent of every other replicate.
//! Standard normal deviates use the Marsaglia polar method on top of that
//! stream.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Result, RodeoError};

/// Covariates (row-major, `n x d`) and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    d: usize,
    column_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from row vectors. Column names default to `x1..xd`.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(RodeoError::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        let x = rows.iter().flatten().copied().collect();
        Self::new(x, y, d, default_names(d))
    }

    /// Builds a dataset from a row-major covariate buffer.
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: usize, column_names: Vec<String>) -> Result<Self> {
        let n = y.len();
        if d == 0 {
            return Err(RodeoError::invalid("dataset needs at least one covariate"));
        }
        if n < 2 {
            return Err(RodeoError::invalid(format!(
                "dataset needs at least 2 rows, got {n}"
            )));
        }
        if x.len() != n * d {
            return Err(RodeoError::DimensionMismatch {
                expected: n * d,
                got: x.len(),
            });
        }
        if column_names.len() != d {
            return Err(RodeoError::DimensionMismatch {
                expected: d,
                got: column_names.len(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(RodeoError::invalid("dataset contains a non-finite value"));
        }
        Ok(Self {
            x,
            y,
            n,
            d,
            column_names,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.d)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Same covariates, new responses.
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y, self.d, self.column_names.clone())
    }
}

fn default_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

/// Formats a float with 17 significant digits, which round-trips every f64.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads a CSV with a header row. Every column other than `target` becomes a
/// covariate, in header order.
pub fn load_csv(path: impl AsRef<Path>, target: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| RodeoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let target_idx = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| RodeoError::MissingColumn(target.to_owned()))?;
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != target_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut x = Vec::new();
    let mut y = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        for (c, cell) in record.iter().enumerate() {
            let v = f64::from_str(cell)
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| RodeoError::Parse {
                    row: r + 1,
                    column: header[c].clone(),
                    value: cell.to_owned(),
                })?;
            if c == target_idx {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    if y.len() < 2 {
        return Err(RodeoError::invalid(format!(
            "{} has {} data rows, need at least 2",
            path.display(),
            y.len()
        )));
    }
    Dataset::new(x, y, names.len(), names)
}

/// Writes covariates in order followed by the response column `target`.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>, target: &str) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| RodeoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let mut header = data.column_names.join(",");
    header.push(',');
    header.push_str(target);
    writeln!(out, "{header}").map_err(io_err)?;
    for (row, y) in data.rows().zip(&data.y) {
        let mut line: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
        line.push(format_float(*y));
        writeln!(out, "{}", line.join(",")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// The regression functions used by the synthetic studies.
#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    /// `5 x1^2 x2^2`
    TwoRelevant,
    /// `2 (x1 + 1)^3 + 2 sin(10 x2)`
    CubicSine,
    /// `sin(15 / x) / x` on `x ~ U(0,1) + 1/2`
    OneDimSine,
    /// `(x1 - 1/2)^2 + x2 + x3 + x4 + x5`
    Turlach,
    /// Intercept-free `b . x`.
    Linear(Vec<f64>),
    PureNoise,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::TwoRelevant => "two-relevant",
            Variant::CubicSine => "cubic-sine",
            Variant::OneDimSine => "one-dim-sine",
            Variant::Turlach => "turlach",
            Variant::Linear(_) => "linear",
            Variant::PureNoise => "pure-noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub variant: Variant,
    pub d: usize,
    pub sigma: f64,
}

impl SyntheticSpec {
    pub fn new(variant: Variant, d: usize, sigma: f64) -> Result<Self> {
        let spec = Self { variant, d, sigma };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses a CLI name such as `two-relevant` or `linear:1,0,-2`. A bare
    /// `linear` uses unit coefficients.
    pub fn parse(name: &str, d: usize, sigma: f64) -> Result<Self> {
        let (head, args) = match name.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (name, None),
        };
        let variant = match head {
            "two-relevant" => Variant::TwoRelevant,
            "cubic-sine" => Variant::CubicSine,
            "one-dim-sine" => Variant::OneDimSine,
            "turlach" => Variant::Turlach,
            "pure-noise" => Variant::PureNoise,
            "linear" => match args {
                None => Variant::Linear(vec![1.0; d]),
                Some(a) => Variant::Linear(parse_vector(a)?),
            },
            other => {
                return Err(RodeoError::invalid(format!(
                    "unknown synthetic function {other:?}"
                )))
            }
        };
        Self::new(variant, d, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(RodeoError::invalid("d must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(RodeoError::invalid("sigma must be finite and >= 0"));
        }
        let ok = match &self.variant {
            Variant::TwoRelevant | Variant::CubicSine => self.d >= 2,
            Variant::OneDimSine => self.d == 1,
            Variant::Turlach => self.d >= 5,
            Variant::Linear(b) => b.len() == self.d,
            Variant::PureNoise => true,
        };
        if ok {
            Ok(())
        } else {
            Err(RodeoError::invalid(format!(
                "{} does not support d = {}",
                self.variant.name(),
                self.d
            )))
        }
    }

    /// Noiseless regression function.
    pub fn true_function(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.d {
            return Err(RodeoError::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(self.eval(x))
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match &self.variant {
            Variant::TwoRelevant => 5.0 * x[0] * x[0] * x[1] * x[1],
            Variant::CubicSine => 2.0 * (x[0] + 1.0).powi(3) + 2.0 * (10.0 * x[1]).sin(),
            Variant::OneDimSine => (15.0 / x[0]).sin() / x[0],
            Variant::Turlach => (x[0] - 0.5).powi(2) + x[1] + x[2] + x[3] + x[4],
            Variant::Linear(b) => b.iter().zip(x).map(|(b, x)| b * x).sum(),
            Variant::PureNoise => 0.0,
        }
    }

    /// Shift added to `Uniform(0,1)` covariates.
    fn covariate_shift(&self) -> f64 {
        match self.variant {
            Variant::OneDimSine => 0.5,
            _ => 0.0,
        }
    }

    /// One draw from the covariate law.
    pub fn sample_point<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let shift = self.covariate_shift();
        (0..self.d).map(|_| rng.random::<f64>() + shift).collect()
    }

    /// Draws `n` rows. Each row consumes `d` uniforms then one standard normal,
    /// whatever `sigma` is, so datasets differing only in `sigma` share their
    /// covariates.
    pub fn generate(&self, n: usize, seed: RngSeed) -> Result<Dataset> {
        self.validate()?;
        if n < 2 {
            return Err(RodeoError::invalid(format!(
                "n must be at least 2, got {n}"
            )));
        }
        let mut rng = seed.rng(Purpose::Data);
        let mut x = Vec::with_capacity(n * self.d);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row = self.sample_point(&mut rng);
            let z = standard_normal(&mut rng);
            let m = self.eval(&row);
            y.push(if self.sigma == 0.0 {
                m
            } else {
                m + self.sigma * z
            });
            x.extend(row);
        }
        Dataset::new(x, y, self.d, default_names(self.d))
    }
}

/// `gen_synthetic` under its operation name.
pub fn gen_synthetic(spec: &SyntheticSpec, n: usize, seed: RngSeed) -> Result<Dataset> {
    spec.generate(n, seed)
}

/// Parses `"v1,v2,..."` into finite floats.
pub fn parse_vector(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| RodeoError::invalid(format!("bad number {t:?}")))
        })
        .collect()
}

/// Independent random streams drawn from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Data,
    TestPoint,
    EvalPoints,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Data => 0,
            Purpose::TestPoint => 1,
            Purpose::EvalPoints => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RngSeed {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RngSeed {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    pub fn with_stream(self, stream_index: u64) -> Self {
        Self {
            stream_index,
            ..self
        }
    }

    /// ChaCha20 keyed by `(master_seed, purpose)`, positioned on stream
    /// `stream_index`.
    pub fn rng(&self, purpose: Purpose) -> ChaCha20Rng {
        let key = self.master_seed ^ purpose.tag().wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha20Rng::seed_from_u64(key);
        rng.set_stream(self.stream_index);
        rng
    }
}

/// Marsaglia polar method; the spare deviate is discarded so each call
/// consumes a whole number of accepted pairs.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u = 2.0 * rng.random::<f64>() - 1.0;
        let v = 2.0 * rng.random::<f64>() - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}
