//! Noise-level estimators built from the responses of the `J` closest pairs
//! of design points.

use crate::dataset::Dataset;
use crate::error::{Result, RodeoError};

pub const DEFAULT_PAIRS: usize = 20;

/// `sqrt(pi) / 2`
const MEDIAN_SCALE: f64 = 0.886_226_925_452_758;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMethod {
    Rice,
    Median,
}

impl SigmaMethod {
    pub fn name(self) -> &'static str {
        match self {
            SigmaMethod::Rice => "rice",
            SigmaMethod::Median => "median",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaEstimate {
    pub sigma: f64,
    pub sigma2: f64,
    /// Number of pairs used.
    pub pairs: usize,
    /// Largest distance among the pairs used.
    pub max_distance: f64,
    pub method: SigmaMethod,
}

/// A pair of row indices `i < l` and their Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub i: usize,
    pub l: usize,
    pub distance: f64,
}

/// The `j` closest pairs, ascending by `(distance, i, l)`.
pub fn nearest_pairs(data: &Dataset, j: usize) -> Result<Vec<Pair>> {
    let n = data.n();
    let total = n * (n - 1) / 2;
    if j == 0 || j > total {
        return Err(RodeoError::invalid(format!(
            "pair count must be in 1..={total}, got {j}"
        )));
    }
    let mut pairs = Vec::with_capacity(total);
    for i in 0..n {
        let a = data.row(i);
        for l in i + 1..n {
            let b = data.row(l);
            let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
            pairs.push(Pair {
                i,
                l,
                distance: d2.sqrt(),
            });
        }
    }
    let order = |p: &Pair, q: &Pair| {
        p.distance
            .total_cmp(&q.distance)
            .then(p.i.cmp(&q.i))
            .then(p.l.cmp(&q.l))
    };
    if j < total {
        pairs.select_nth_unstable_by(j - 1, order);
        pairs.truncate(j);
    }
    pairs.sort_unstable_by(order);
    Ok(pairs)
}

pub fn sigma_rice(data: &Dataset, j: usize) -> Result<SigmaEstimate> {
    let pairs = nearest_pairs(data, j)?;
    let y = data.y();
    let ss: f64 = pairs.iter().map(|p| (y[p.i] - y[p.l]).powi(2)).sum();
    let sigma2 = ss / (2.0 * j as f64);
    Ok(SigmaEstimate {
        sigma: sigma2.sqrt(),
        sigma2,
        pairs: j,
        max_distance: max_distance(&pairs),
        method: SigmaMethod::Rice,
    })
}

/// Median of absolute pair differences, rescaled. For an even number of pairs
/// the median is the lower-middle order statistic.
pub fn sigma_median(data: &Dataset, j: usize) -> Result<SigmaEstimate> {
    let pairs = nearest_pairs(data, j)?;
    let y = data.y();
    let mut diffs: Vec<f64> = pairs.iter().map(|p| (y[p.i] - y[p.l]).abs()).collect();
    diffs.sort_unstable_by(f64::total_cmp);
    let sigma = MEDIAN_SCALE * diffs[(diffs.len() - 1) / 2];
    Ok(SigmaEstimate {
        sigma,
        sigma2: sigma * sigma,
        pairs: j,
        max_distance: max_distance(&pairs),
        method: SigmaMethod::Median,
    })
}

pub fn estimate(data: &Dataset, method: SigmaMethod, j: usize) -> Result<SigmaEstimate> {
    match method {
        SigmaMethod::Rice => sigma_rice(data, j),
        SigmaMethod::Median => sigma_median(data, j),
    }
}

fn max_distance(pairs: &[Pair]) -> f64 {
    pairs.iter().map(|p| p.distance).fold(0.0, f64::max)
}
