//! Sample estimate of ν, BCa bootstrap intervals for `−½ log ν̂`, and the
//! composite estimator `max(k-NN estimate, BCa lower limit)`.
//!
//! `ν̂ = 1 − var(fitted)/reference variance`, where the fitted values come from
//! a smoothing spline of the response on the predictor. With
//! [`Direction::InputGivenOutput`] the response is `X̃ = s(X)` and the
//! predictor is `Z`; with [`Direction::OutputGivenInput`] the roles swap.

use crate::bounds::Direction;
use crate::error::{Error, Result};
use crate::knnmi::{self, KnnConfig};
use crate::normal;
use crate::rng;
use crate::sample::{covariance, variance, JointSample};
use crate::spline;
use crate::transforms::{gaussianize, GaussianizingMap, SourceCdf};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MIN_POINTS: usize = 15;
pub const MIN_REPLICATES: usize = 200;
/// Share of invalid resamples above which an interval is flagged degenerate.
pub const DEGENERATE_SHARE: f64 = 0.2;
/// Redraws allowed per bootstrap replicate when a resample has too few
/// distinct predictor values for the spline.
pub const MAX_REDRAWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NuMethod {
    /// Smoothing-spline conditional mean.
    Spline,
    /// Least-squares line, so that `ν̂ = 1 − Corr²` under the sample reference.
    Correlation,
}

/// Denominator of the `ν̂` ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VarianceReference {
    /// A fixed population variance, e.g. 1 for a correctly Gaussianized input.
    Known(f64),
    /// The sample variance of the response in the same (re)sample.
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub map: GaussianizingMap,
    pub direction: Direction,
    pub method: NuMethod,
    pub knot_count: usize,
    pub grid_size: usize,
    pub reference: VarianceReference,
}

impl PipelineConfig {
    /// Spline regression of `X̃` on `Z` with the sample-variance reference.
    pub fn new(map: GaussianizingMap) -> Self {
        Self {
            map,
            direction: Direction::InputGivenOutput,
            method: NuMethod::Spline,
            knot_count: spline::DEFAULT_KNOTS,
            grid_size: spline::DEFAULT_GRID_SIZE,
            reference: VarianceReference::Sample,
        }
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn with_method(mut self, method: NuMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_reference(mut self, reference: VarianceReference) -> Self {
        self.reference = reference;
        self
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::new(GaussianizingMap::Known(SourceCdf::StandardNormal))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuHatResult {
    pub nu_hat: f64,
    pub fitted_variance: f64,
    pub reference_variance: f64,
    /// `−½ log ν̂`, present iff `ν̂ ∈ (0, 1]`.
    pub bound_nats: Option<f64>,
    /// Smoothing parameter used (spline method only).
    pub lambda: Option<f64>,
}

impl NuHatResult {
    fn from_variances(fitted_variance: f64, reference_variance: f64, lambda: Option<f64>) -> Self {
        let nu_hat = 1.0 - fitted_variance / reference_variance;
        let bound_nats = (nu_hat > 0.0 && nu_hat <= 1.0).then(|| -0.5 * nu_hat.ln());
        Self {
            nu_hat,
            fitted_variance,
            reference_variance,
            bound_nats,
            lambda,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.bound_nats.is_some()
    }

    pub fn bound(&self) -> Result<f64> {
        self.bound_nats.ok_or(Error::InvalidNu(self.nu_hat))
    }
}

/// Predictor and response after Gaussianizing `X`.
#[derive(Debug, Clone)]
struct Prepared {
    pred: Vec<f64>,
    resp: Vec<f64>,
}

impl Prepared {
    fn new(sample: &JointSample, cfg: &PipelineConfig) -> Result<Self> {
        let xt = gaussianize(&sample.x, &cfg.map)?;
        Ok(match cfg.direction {
            Direction::InputGivenOutput => Self {
                pred: sample.z.clone(),
                resp: xt,
            },
            Direction::OutputGivenInput => Self {
                pred: xt,
                resp: sample.z.clone(),
            },
        })
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self {
            pred: idx.iter().map(|&i| self.pred[i]).collect(),
            resp: idx.iter().map(|&i| self.resp[i]).collect(),
        }
    }

    fn without(&self, i: usize) -> Self {
        let mut p = self.clone();
        p.pred.remove(i);
        p.resp.remove(i);
        p
    }

    fn distinct_pred(&self) -> usize {
        let mut v = self.pred.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    }

    fn reference(&self, cfg: &PipelineConfig) -> f64 {
        match cfg.reference {
            VarianceReference::Known(v) => v,
            VarianceReference::Sample => variance(&self.resp),
        }
    }

    /// `lambda = None` selects it by CV.
    fn statistic(&self, cfg: &PipelineConfig, lambda: Option<f64>) -> Result<NuHatResult> {
        let reference = self.reference(cfg);
        if !(reference > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "reference variance {reference} must be positive"
            )));
        }
        match cfg.method {
            NuMethod::Correlation => {
                let c = covariance(&self.pred, &self.resp);
                let fitted = c * c / variance(&self.pred);
                Ok(NuHatResult::from_variances(fitted, reference, None))
            }
            NuMethod::Spline => {
                let (fitted, lambda) = match lambda {
                    Some(l) => (spline::fitted_values(&self.pred, &self.resp, cfg.knot_count, l)?, l),
                    None => {
                        let grid = spline::default_lambda_grid(&self.pred, cfg.knot_count, cfg.grid_size)?;
                        let f = spline::fit(&self.pred, &self.resp, cfg.knot_count, &grid)?;
                        (f.fitted, f.lambda)
                    }
                };
                Ok(NuHatResult::from_variances(variance(&fitted), reference, Some(lambda)))
            }
        }
    }
}

fn check_sample(sample: &JointSample) -> Result<()> {
    if sample.len() < MIN_POINTS {
        return Err(Error::TooFewPoints {
            got: sample.len(),
            min: MIN_POINTS,
        });
    }
    Ok(())
}

/// `ν̂` with the smoothing parameter chosen by leave-one-out CV.
pub fn nu_hat(sample: &JointSample, cfg: &PipelineConfig) -> Result<NuHatResult> {
    check_sample(sample)?;
    Prepared::new(sample, cfg)?.statistic(cfg, None)
}

/// `ν̂` at a fixed smoothing parameter.
pub fn nu_hat_fixed(sample: &JointSample, cfg: &PipelineConfig, lambda: f64) -> Result<NuHatResult> {
    check_sample(sample)?;
    Prepared::new(sample, cfg)?.statistic(cfg, Some(lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcaConfig {
    pub level: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BcaConfig {
    fn default() -> Self {
        Self {
            level: 0.90,
            replicates: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcaInterval {
    /// The statistic on the original sample, nats.
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    /// Replicates requested.
    pub replicates: usize,
    /// Replicates with a valid statistic; the interval uses only these.
    pub valid: usize,
    pub z0: f64,
    pub a: f64,
    /// More than 20% of replicates were invalid.
    pub degenerate: bool,
    /// Smoothing parameter held fixed across resamples.
    pub lambda: Option<f64>,
}

/// Order statistic `θ*_(⌈αB⌉)` of sorted replicates, index clamped to `[1, B]`.
fn order_stat(sorted: &[f64], alpha: f64) -> f64 {
    let b = sorted.len();
    // Φ(Φ⁻¹(α)) carries ~1e-12 error; the offset keeps αB = 100 + noise at 100
    let idx = ((alpha * b as f64 - 1e-6).ceil().max(0.0) as usize).clamp(1, b);
    sorted[idx - 1]
}

/// Plain percentile interval from replicate statistics.
pub fn percentile_interval(boot: &[f64], level: f64) -> (f64, f64) {
    let mut s = boot.to_vec();
    s.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    (order_stat(&s, tail), order_stat(&s, 1.0 - tail))
}

/// Jackknife acceleration `Σ(θ̄−θᵢ)³ / (6 [Σ(θ̄−θᵢ)²]^{3/2})`; 0 when undefined.
pub fn acceleration(jack: &[f64]) -> f64 {
    if jack.is_empty() {
        return 0.0;
    }
    let m = jack.iter().sum::<f64>() / jack.len() as f64;
    let (lo, hi) = jack
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &t| (l.min(t), h.max(t)));
    // all-equal statistics: only rounding noise is left
    if hi - lo <= 1e-12 * (1.0 + m.abs()) {
        return 0.0;
    }
    let (mut s2, mut s3) = (0.0, 0.0);
    for &t in jack {
        let d = m - t;
        s2 += d * d;
        s3 += d * d * d;
    }
    let den = 6.0 * s2.powf(1.5);
    if den > 0.0 && den.is_finite() {
        s3 / den
    } else {
        0.0
    }
}

/// BCa interval from an original statistic, its valid bootstrap replicates
/// and leave-one-out (jackknife) statistics. `total` is the number of
/// replicates requested, used for the degeneracy flag.
pub fn bca_from_replicates(
    theta_hat: f64,
    boot: &[f64],
    jack: &[f64],
    level: f64,
    total: usize,
) -> Result<BcaInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level {level} must lie in (0, 1)")));
    }
    let b = boot.len();
    if b == 0 {
        return Err(Error::DegenerateBootstrap { invalid: total, total });
    }
    let mut sorted = boot.to_vec();
    sorted.sort_by(f64::total_cmp);
    let below = sorted.partition_point(|&t| t < theta_hat);
    // keep z0 finite when the original statistic is outside the replicate range
    let p = (below as f64 / b as f64).clamp(0.5 / b as f64, 1.0 - 0.5 / b as f64);
    let z0 = normal::quantile(p);
    let a = acceleration(jack);
    let tail = 0.5 * (1.0 - level);
    let adjust = |alpha: f64| {
        let za = normal::quantile(alpha);
        let w = z0 + za;
        let den = 1.0 - a * w;
        if den <= 0.0 {
            // the acceleration pushed the endpoint past the last replicate
            if alpha < 0.5 {
                0.0
            } else {
                1.0
            }
        } else {
            normal::cdf(z0 + w / den)
        }
    };
    let invalid = total.saturating_sub(b);
    Ok(BcaInterval {
        estimate: theta_hat,
        lower: order_stat(&sorted, adjust(tail)),
        upper: order_stat(&sorted, adjust(1.0 - tail)),
        level,
        replicates: total,
        valid: b,
        z0,
        a,
        degenerate: invalid as f64 > DEGENERATE_SHARE * total as f64,
        lambda: None,
    })
}

/// BCa interval for `−½ log ν̂` from `B` paired resamples. The smoothing
/// parameter is chosen by CV on the original sample and held fixed; knots
/// follow each resample. Replicate `b` uses its own RNG stream, so the
/// result does not depend on thread scheduling.
pub fn bca_interval(sample: &JointSample, cfg: &PipelineConfig, bca: &BcaConfig) -> Result<BcaInterval> {
    check_sample(sample)?;
    if bca.replicates < MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!(
            "{} bootstrap replicates, at least {MIN_REPLICATES} required",
            bca.replicates
        )));
    }
    let prepared = Prepared::new(sample, cfg)?;
    let original = prepared.statistic(cfg, None)?;
    let theta_hat = original.bound()?;
    let lambda = original.lambda;
    let n = sample.len();
    let needs_knots = cfg.method == NuMethod::Spline;

    let boot: Vec<Option<f64>> = (0..bca.replicates as u64)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(bca.seed, &[b]);
            let mut idx = vec![0usize; n];
            for _ in 0..MAX_REDRAWS {
                idx.iter_mut().for_each(|i| *i = r.random_range(0..n));
                let resample = prepared.select(&idx);
                if needs_knots && resample.distinct_pred() < cfg.knot_count {
                    continue;
                }
                return resample.statistic(cfg, lambda).ok().and_then(|s| s.bound_nats);
            }
            None
        })
        .collect();
    let valid: Vec<f64> = boot.into_iter().flatten().collect();

    let jack: Vec<f64> = (0..n)
        .filter_map(|i| {
            prepared
                .without(i)
                .statistic(cfg, lambda)
                .ok()
                .and_then(|s| s.bound_nats)
        })
        .collect();

    let mut interval = bca_from_replicates(theta_hat, &valid, &jack, bca.level, bca.replicates)?;
    interval.lambda = lambda;
    Ok(interval)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompositeSource {
    Knn,
    CiLower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeEstimate {
    pub value: f64,
    pub knn_value: f64,
    pub ci_lower: Option<f64>,
    pub source: CompositeSource,
    pub warning: Option<String>,
}

/// `max(knn, lower limit)`. A missing or degenerate interval falls back to
/// the k-NN value with a warning.
pub fn combine(knn_value: f64, interval: Option<&BcaInterval>) -> CompositeEstimate {
    match interval {
        Some(iv) if !iv.degenerate => {
            let (value, source) = if iv.lower > knn_value {
                (iv.lower, CompositeSource::CiLower)
            } else {
                (knn_value, CompositeSource::Knn)
            };
            CompositeEstimate {
                value,
                knn_value,
                ci_lower: Some(iv.lower),
                source,
                warning: None,
            }
        }
        Some(iv) => CompositeEstimate {
            value: knn_value,
            knn_value,
            ci_lower: Some(iv.lower),
            source: CompositeSource::Knn,
            warning: Some(format!(
                "degenerate bootstrap: {} of {} replicates invalid",
                iv.replicates - iv.valid,
                iv.replicates
            )),
        },
        None => CompositeEstimate {
            value: knn_value,
            knn_value,
            ci_lower: None,
            source: CompositeSource::Knn,
            warning: Some("no bootstrap interval".into()),
        },
    }
}

/// Full composite estimate, nats.
pub fn composite(
    sample: &JointSample,
    knn: &KnnConfig,
    cfg: &PipelineConfig,
    bca: &BcaConfig,
) -> Result<CompositeEstimate> {
    let knn_value = knnmi::estimate_mi(sample, knn)?;
    match bca_interval(sample, cfg, bca) {
        Ok(iv) => Ok(combine(knn_value, Some(&iv))),
        Err(e) => {
            let mut c = combine(knn_value, None);
            c.warning = Some(format!("bootstrap failed: {e}"));
            Ok(c)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn gaussian_sample(n: usize, rho: f64, seed: u64) -> JointSample {
        let mut r = rng::stream(seed, &[]);
        let g = Normal::new(0.0, 1.0).unwrap();
        let s = (1.0 - rho * rho).sqrt();
        let (mut x, mut z) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let a: f64 = g.sample(&mut r);
            x.push(a);
            z.push(rho * a + s * g.sample(&mut r));
        }
        JointSample::new(x, z).unwrap()
    }

    #[test]
    fn nu_hat_definition() {
        let s = gaussian_sample(60, 0.8, 1);
        let cfg = PipelineConfig::default();
        let r = nu_hat(&s, &cfg).unwrap();
        assert!((r.nu_hat - (1.0 - r.fitted_variance / r.reference_variance)).abs() < 1e-15);
        assert!((r.reference_variance - variance(&s.x)).abs() < 1e-9);
        assert!((r.bound_nats.unwrap() + 0.5 * r.nu_hat.ln()).abs() < 1e-15);
        let known = nu_hat(&s, &cfg.clone().with_reference(VarianceReference::Known(1.0))).unwrap();
        assert_eq!(known.reference_variance, 1.0);
        assert_eq!(known.fitted_variance, r.fitted_variance);
    }

    #[test]
    fn correlation_method_is_one_minus_r_squared() {
        let s = gaussian_sample(40, 0.5, 2);
        let cfg = PipelineConfig::default().with_method(NuMethod::Correlation);
        let r = nu_hat(&s, &cfg).unwrap();
        let c = crate::sample::correlation(&s.x, &s.z);
        assert!((r.nu_hat - (1.0 - c * c)).abs() < 1e-9);
    }

    #[test]
    fn row_order_does_not_matter() {
        let s = gaussian_sample(30, 0.6, 3);
        let idx: Vec<usize> = (0..30).rev().collect();
        let cfg = PipelineConfig::default();
        let a = nu_hat(&s, &cfg).unwrap();
        let b = nu_hat(&s.select(&idx), &cfg).unwrap();
        assert!((a.nu_hat - b.nu_hat).abs() < 1e-12);
    }

    #[test]
    fn noiseless_linear_data_give_tiny_nu() {
        let x: Vec<f64> = (0..30).map(|i| -2.0 + i as f64 * 0.13).collect();
        let z: Vec<f64> = x.iter().map(|v| 0.7 * v).collect();
        let s = JointSample::new(x, z).unwrap();
        let r = nu_hat(&s, &PipelineConfig::default()).unwrap();
        assert!(r.nu_hat <= 1e-6);
        assert!(r.bound_nats.is_none_or(|b| b >= 6.9));
    }

    #[test]
    fn invalid_nu_is_reported() {
        let r = NuHatResult::from_variances(1.2, 1.0, None);
        assert!(!r.is_valid());
        assert_eq!(r.bound(), Err(Error::InvalidNu(1.0 - 1.2)));
    }

    #[test]
    fn bca_reduces_to_percentile_without_bias_or_skew() {
        // symmetric replicate distribution centred on the estimate
        let b = 2000;
        let boot: Vec<f64> = (0..b)
            .map(|i| 1.0 + normal::quantile((i as f64 + 0.5) / b as f64) * 0.1)
            .collect();
        let jack = vec![0.7; 25];
        let bca = bca_from_replicates(1.0 + 1e-12, &boot, &jack, 0.9, b).unwrap();
        let (lo, hi) = percentile_interval(&boot, 0.9);
        assert_eq!(bca.a, 0.0);
        // one quantile step at each end
        let step = boot[101] - boot[100];
        assert!((bca.lower - lo).abs() <= step, "{} vs {lo}", bca.lower);
        assert!((bca.upper - hi).abs() <= step);
    }

    #[test]
    fn bca_shifts_with_bias() {
        // estimate sits above most replicates -> z0 > 0 -> interval shifts up
        let b = 1000;
        let boot: Vec<f64> = (0..b).map(|i| i as f64 / b as f64).collect();
        let iv = bca_from_replicates(0.8, &boot, &[1.0, 2.0, 3.0], 0.9, b).unwrap();
        assert!(iv.z0 > 0.8);
        let (lo, _) = percentile_interval(&boot, 0.9);
        assert!(iv.lower > lo);
        assert!(iv.lower <= iv.upper);
    }

    #[test]
    fn acceleration_oracle() {
        // hand-computed: mean 2, deviations (1, 1, -2) -> s3 = -6, s2 = 6
        let a = acceleration(&[1.0, 1.0, 4.0]);
        assert!((a - (-6.0 / (6.0 * 6.0f64.powf(1.5)))).abs() < 1e-15);
        assert_eq!(acceleration(&[2.0, 2.0]), 0.0);
    }

    #[test]
    fn bootstrap_is_deterministic_and_ordered() {
        let s = gaussian_sample(25, 0.9, 4);
        let cfg = PipelineConfig::default();
        let bc = BcaConfig {
            replicates: 300,
            seed: 17,
            ..Default::default()
        };
        let a = bca_interval(&s, &cfg, &bc).unwrap();
        let b = bca_interval(&s, &cfg, &bc).unwrap();
        assert_eq!(a, b);
        assert!(a.lower <= a.upper);
        assert!(a.lambda.is_some());
        assert!(!a.degenerate);
        let few = BcaConfig { replicates: 100, ..bc };
        assert!(bca_interval(&s, &cfg, &few).is_err());
    }

    #[test]
    fn composite_takes_the_max() {
        let iv = BcaInterval {
            estimate: 2.0,
            lower: 1.5,
            upper: 2.5,
            level: 0.9,
            replicates: 2000,
            valid: 2000,
            z0: 0.0,
            a: 0.0,
            degenerate: false,
            lambda: None,
        };
        let c = combine(1.0, Some(&iv));
        assert_eq!((c.value, c.source), (1.5, CompositeSource::CiLower));
        let c = combine(1.7, Some(&iv));
        assert_eq!((c.value, c.source), (1.7, CompositeSource::Knn));
        let bad = BcaInterval {
            degenerate: true,
            valid: 1000,
            ..iv
        };
        let c = combine(1.0, Some(&bad));
        assert_eq!((c.value, c.source), (1.0, CompositeSource::Knn));
        assert!(c.warning.is_some());
    }

    #[test]
    fn too_few_points() {
        let s = gaussian_sample(10, 0.5, 5);
        assert!(matches!(
            nu_hat(&s, &PipelineConfig::default()),
            Err(Error::TooFewPoints { .. })
        ));
    }
}
