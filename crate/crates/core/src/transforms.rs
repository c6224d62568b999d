//! Gaussianizing maps `s(x) = Φ⁻¹(F_X(x))`.
//!
//! With a known, strictly increasing input CDF the map sends `X` to an exactly
//! standard normal `X̃` and is one-to-one, so `I(X;Z) = I(X̃;Z)`. The
//! empirical-rank variant (Blom scores) is for data whose input distribution
//! is unknown; it carries no guarantee that the resulting bound stays valid.

use crate::error::{Error, Result};
use crate::normal;
use std::fmt::Write as _;
use std::str::FromStr;

/// A strictly increasing input CDF with a closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceCdf {
    StandardNormal,
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Finite mixture of normals. Weights must sum to one.
    NormalMixture {
        weights: Vec<f64>,
        means: Vec<f64>,
        sds: Vec<f64>,
    },
}

impl SourceCdf {
    /// Equal-weight two-component mixture `½N(μ₁, σ₁²) + ½N(μ₂, σ₂²)`.
    pub fn two_component(mu1: f64, mu2: f64, var1: f64, var2: f64) -> Self {
        SourceCdf::NormalMixture {
            weights: vec![0.5, 0.5],
            means: vec![mu1, mu2],
            sds: vec![var1.sqrt(), var2.sqrt()],
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SourceCdf::StandardNormal => Ok(()),
            SourceCdf::Normal { sd, .. } if *sd > 0.0 => Ok(()),
            SourceCdf::Normal { sd, .. } => Err(Error::InvalidArgument(format!("normal sd {sd} must be positive"))),
            SourceCdf::NormalMixture { weights, means, sds } => {
                if weights.is_empty() || weights.len() != means.len() || weights.len() != sds.len() {
                    return Err(Error::InvalidArgument(
                        "mixture component lists differ in length".into(),
                    ));
                }
                if sds.iter().any(|s| !(*s > 0.0)) || weights.iter().any(|w| !(*w > 0.0)) {
                    return Err(Error::InvalidArgument(
                        "mixture weights and sds must be positive".into(),
                    ));
                }
                if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidArgument("mixture weights must sum to 1".into()));
                }
                Ok(())
            }
        }
    }

    /// `(F(x), 1 − F(x))`, each computed without cancellation.
    pub fn tails(&self, x: f64) -> (f64, f64) {
        match self {
            SourceCdf::StandardNormal => (normal::cdf(x), normal::sf(x)),
            SourceCdf::Normal { mean, sd } => {
                let u = (x - mean) / sd;
                (normal::cdf(u), normal::sf(u))
            }
            SourceCdf::NormalMixture { weights, means, sds } => {
                let mut lo = 0.0;
                let mut hi = 0.0;
                for ((w, m), s) in weights.iter().zip(means).zip(sds) {
                    let u = (x - m) / s;
                    lo += w * normal::cdf(u);
                    hi += w * normal::sf(u);
                }
                (lo, hi)
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.tails(x).0
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            SourceCdf::StandardNormal => normal::pdf(x),
            SourceCdf::Normal { mean, sd } => normal::pdf((x - mean) / sd) / sd,
            SourceCdf::NormalMixture { weights, means, sds } => weights
                .iter()
                .zip(means)
                .zip(sds)
                .map(|((w, m), s)| w * normal::pdf((x - m) / s) / s)
                .sum(),
        }
    }

    /// Variance of the distribution.
    pub fn variance(&self) -> f64 {
        match self {
            SourceCdf::StandardNormal => 1.0,
            SourceCdf::Normal { sd, .. } => sd * sd,
            SourceCdf::NormalMixture { weights, means, sds } => {
                let mean: f64 = weights.iter().zip(means).map(|(w, m)| w * m).sum();
                weights
                    .iter()
                    .zip(means)
                    .zip(sds)
                    .map(|((w, m), s)| w * (s * s + (m - mean) * (m - mean)))
                    .sum()
            }
        }
    }

    fn bracket(&self) -> (f64, f64) {
        match self {
            SourceCdf::StandardNormal => (-40.0, 40.0),
            SourceCdf::Normal { mean, sd } => (mean - 40.0 * sd, mean + 40.0 * sd),
            SourceCdf::NormalMixture { means, sds, .. } => {
                let lo = means
                    .iter()
                    .zip(sds)
                    .map(|(m, s)| m - 40.0 * s)
                    .fold(f64::INFINITY, f64::min);
                let hi = means
                    .iter()
                    .zip(sds)
                    .map(|(m, s)| m + 40.0 * s)
                    .fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
        }
    }

    /// The `x` with normal score `score`, i.e. `F⁻¹(Φ(score))`.
    pub fn from_score(&self, score: f64) -> f64 {
        match self {
            SourceCdf::StandardNormal => score,
            SourceCdf::Normal { mean, sd } => mean + sd * score,
            SourceCdf::NormalMixture { .. } => {
                // Bisection on whichever tail is smaller so that extreme scores keep precision.
                let lower_tail = score <= 0.0;
                let target = if lower_tail {
                    normal::cdf(score)
                } else {
                    normal::sf(score)
                };
                let (mut lo, mut hi) = self.bracket();
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let (c, s) = self.tails(mid);
                    let below = if lower_tail { c < target } else { s > target };
                    if below {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

impl FromStr for SourceCdf {
    type Err = Error;

    /// `gaussian`, `normal:MEAN,SD`, `mixture` (the default ±5, variance 25/4
    /// components) or `mixture:MU1,MU2,VAR1,VAR2`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a)),
            None => (s.trim(), None),
        };
        let nums = |a: &str| -> Result<Vec<f64>> {
            a.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{t}: {e}"))))
                .collect()
        };
        let cdf = match (name, args) {
            ("gaussian" | "standard-normal", None) => SourceCdf::StandardNormal,
            ("normal", Some(a)) => match nums(a)?.as_slice() {
                [m, s] => SourceCdf::Normal { mean: *m, sd: *s },
                _ => return Err(Error::Parse("normal takes MEAN,SD".into())),
            },
            ("mixture", None) => SourceCdf::two_component(-5.0, 5.0, 6.25, 6.25),
            ("mixture", Some(a)) => match nums(a)?.as_slice() {
                [m1, m2, v1, v2] => SourceCdf::two_component(*m1, *m2, *v1, *v2),
                _ => return Err(Error::Parse("mixture takes MU1,MU2,VAR1,VAR2".into())),
            },
            _ => return Err(Error::Parse(format!("unknown input distribution `{s}`"))),
        };
        cdf.validate()?;
        Ok(cdf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    KnownCdf,
    EmpiricalRank,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GaussianizingMap {
    Known(SourceCdf),
    EmpiricalRank,
}

impl GaussianizingMap {
    pub fn known(cdf: SourceCdf) -> Result<Self> {
        cdf.validate()?;
        Ok(GaussianizingMap::Known(cdf))
    }

    pub fn kind(&self) -> MapKind {
        match self {
            GaussianizingMap::Known(_) => MapKind::KnownCdf,
            GaussianizingMap::EmpiricalRank => MapKind::EmpiricalRank,
        }
    }
}

/// `Φ⁻¹(F(x))` for a single value.
pub fn forward(cdf: &SourceCdf, x: f64) -> Result<f64> {
    let (lo, hi) = cdf.tails(x);
    if !(lo > 0.0) || !(hi > 0.0) {
        return Err(Error::SupportViolation(x));
    }
    Ok(normal::score_from_tails(lo, hi))
}

/// Applies the map to every observation.
pub fn gaussianize(x: &[f64], map: &GaussianizingMap) -> Result<Vec<f64>> {
    match map {
        GaussianizingMap::Known(cdf) => x.iter().map(|&v| forward(cdf, v)).collect(),
        GaussianizingMap::EmpiricalRank => blom_scores(x),
    }
}

/// Ranks with ties averaged, then separated by `1e-9` per position in index order.
fn jittered_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0;
        for (pos, &idx) in order[start..end].iter().enumerate() {
            ranks[idx] = if end - start > 1 { avg + 1e-9 * pos as f64 } else { avg };
        }
        start = end;
    }
    ranks
}

fn blom_scores(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewPoints { got: n, min: 3 });
    }
    let denom = n as f64 + 0.25;
    Ok(jittered_ranks(x)
        .into_iter()
        .map(|r| normal::quantile((r - 0.375) / denom))
        .collect())
}

/// Sorted `(value, score)` pairs from an empirical-rank map, kept for
/// reproducing a transform outside this process.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTable {
    pub values: Vec<f64>,
    pub scores: Vec<f64>,
}

impl EmpiricalTable {
    pub fn from_sample(x: &[f64]) -> Result<Self> {
        let scores = blom_scores(x)?;
        let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(scores).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        Ok(Self {
            values: pairs.iter().map(|p| p.0).collect(),
            scores: pairs.iter().map(|p| p.1).collect(),
        })
    }

    /// Score for `x` by linear interpolation; constant beyond the table ends.
    pub fn apply(&self, x: f64) -> f64 {
        let v = &self.values;
        let idx = v.partition_point(|&t| t < x);
        if idx == 0 {
            return self.scores[0];
        }
        if idx == v.len() {
            return self.scores[v.len() - 1];
        }
        let (x0, x1) = (v[idx - 1], v[idx]);
        if x1 == x0 {
            return self.scores[idx];
        }
        let t = (x - x0) / (x1 - x0);
        self.scores[idx - 1] + t * (self.scores[idx] - self.scores[idx - 1])
    }

    /// Two whitespace-separated columns under a `# value score` header.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# value score\n");
        for (v, s) in self.values.iter().zip(&self.scores) {
            let _ = writeln!(out, "{v} {s}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        let mut scores = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse(format!("bad table line `{line}`")));
            };
            values.push(a.parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?);
            scores.push(b.parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?);
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Parse("table values are not sorted".into()));
        }
        if values.is_empty() {
            return Err(Error::Parse("empty table".into()));
        }
        Ok(Self { values, scores })
    }
}
