//! Kraskov–Stögbauer–Grassberger k-nearest-neighbour MI estimator, second
//! variant, for scalar `X` and `Z` under the max-norm.

use crate::error::{Error, Result};
use crate::rng;
use crate::sample::JointSample;
use rand_distr::{Distribution, Normal};
use statrs::function::gamma::digamma;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnConfig {
    pub k: usize,
    /// Standard deviation of independent normal jitter added to both
    /// coordinates before estimation. Zero disables jitter.
    pub jitter_scale: f64,
    pub jitter_seed: u64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 3,
            jitter_scale: 0.0,
            jitter_seed: 0,
        }
    }
}

/// Number of `v` in sorted `s` with `|v - c| <= r`.
fn count_within(s: &[f64], c: f64, r: f64) -> usize {
    let lo = s.partition_point(|&v| v < c && c - v > r);
    let hi = s.partition_point(|&v| v <= c || v - c <= r);
    hi - lo
}

/// MI estimate in nats. May be negative.
pub fn estimate_mi(sample: &JointSample, cfg: &KnnConfig) -> Result<f64> {
    let n = sample.len();
    let k = cfg.k;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n < k + 1 {
        return Err(Error::TooFewPoints { got: n, min: k + 1 });
    }
    if !(cfg.jitter_scale >= 0.0) {
        return Err(Error::InvalidArgument("jitter_scale must be non-negative".into()));
    }
    let (x, z) = if cfg.jitter_scale > 0.0 {
        let mut r = rng::stream(cfg.jitter_seed, &[]);
        let noise = Normal::new(0.0, cfg.jitter_scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let x: Vec<f64> = sample.x.iter().map(|v| v + noise.sample(&mut r)).collect();
        let z: Vec<f64> = sample.z.iter().map(|v| v + noise.sample(&mut r)).collect();
        (x, z)
    } else {
        (sample.x.clone(), sample.z.clone())
    };

    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(z.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if pairs.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DuplicatePoints);
    }

    let mut xs = x.clone();
    xs.sort_by(f64::total_cmp);
    let mut zs = z.clone();
    zs.sort_by(f64::total_cmp);

    // counts[c] = number of (point, marginal) pairs with neighbour count c
    let mut counts = vec![0usize; n];
    let mut neigh: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        neigh.clear();
        neigh.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| ((x[j] - x[i]).abs().max((z[j] - z[i]).abs()), j)),
        );
        let key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        neigh.select_nth_unstable_by(k - 1, key);
        let (mut ex, mut ez) = (0.0f64, 0.0f64);
        for &(_, j) in &neigh[..k] {
            ex = ex.max((x[j] - x[i]).abs());
            ez = ez.max((z[j] - z[i]).abs());
        }
        counts[count_within(&xs, x[i], ex) - 1] += 1;
        counts[count_within(&zs, z[i], ez) - 1] += 1;
    }
    // summing by count value makes the result independent of row order
    let psi_sum: f64 = counts
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0)
        .map(|(c, &m)| m as f64 * digamma(c as f64))
        .sum();
    let kf = k as f64;
    Ok(digamma(kf) - 1.0 / kf - psi_sum / n as f64 + digamma(n as f64))
}
