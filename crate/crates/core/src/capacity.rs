//! Capacity lower bounds for channels described by their first two
//! conditional moments.
//!
//! If the pseudo-input `M = m(X)` is Gaussian, `−½ log ν(Z|X)` with
//! `V[Z] = V[M] + E{V[Z|X]}` is a lower bound on `I(X;Z)` for that input,
//! and hence on capacity. [`bound_at`] evaluates it by Monte Carlo over `M`;
//! [`maximize_capacity_bound`] searches over Gaussian pseudo-inputs.

use crate::bounds::{bound_from_nu_directed, log_det_spd, BoundEstimate, Direction, NuStatistic};
use crate::error::{Error, Result};
use crate::normal;
use crate::rng;
use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub const MIN_DRAWS: usize = 1000;
/// Largest share of pseudo-input draws allowed to map outside the domain.
pub const ESCAPE_SHARE: f64 = 0.001;
const INVERSION_TOL: f64 = 1e-10;
const MONOTONE_GRID: usize = 1000;

type MeanFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type VarFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;
type InverseFn = dyn Fn(&[f64]) -> Option<Vec<f64>> + Send + Sync;

/// A channel given by `x ↦ E[Z|X=x]` and `x ↦ V[Z|X=x]` on an open box.
pub struct ChannelMoments {
    mean_fn: Box<MeanFn>,
    cond_var_fn: Box<VarFn>,
    domain: Vec<(f64, f64)>,
    dim_z: usize,
    inverse: Option<Box<InverseFn>>,
}

impl std::fmt::Debug for ChannelMoments {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChannelMoments")
            .field("domain", &self.domain)
            .field("dim_z", &self.dim_z)
            .field("inverse", &self.inverse.is_some())
            .finish()
    }
}

/// Point `t ∈ (0, 1)` mapped into the interval `(lo, hi)`, which may be unbounded.
fn interior_point(lo: f64, hi: f64, t: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => lo + t * (hi - lo),
        (true, false) => lo + t / (1.0 - t),
        (false, true) => hi - (1.0 - t) / t,
        (false, false) => (t - 0.5) / (t * (1.0 - t)),
    }
}

impl ChannelMoments {
    pub fn new(
        mean_fn: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        cond_var_fn: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        domain: Vec<(f64, f64)>,
        dim_z: usize,
    ) -> Result<Self> {
        if domain.is_empty() || dim_z == 0 {
            return Err(Error::InvalidArgument("channel dimensions must be positive".into()));
        }
        if domain.iter().any(|&(a, b)| !(a < b)) {
            return Err(Error::InvalidArgument(
                "domain box must have lo < hi in every coordinate".into(),
            ));
        }
        Ok(Self {
            mean_fn: Box::new(mean_fn),
            cond_var_fn: Box::new(cond_var_fn),
            domain,
            dim_z,
            inverse: None,
        })
    }

    /// Scalar channel on `(lo, hi)`. The mean function is spot-checked for
    /// strict monotonicity on a grid.
    pub fn scalar(
        mean: impl Fn(f64) -> f64 + Send + Sync + 'static,
        var: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        let ch = Self::new(
            move |x: &[f64]| vec![mean(x[0])],
            move |x: &[f64]| DMatrix::from_element(1, 1, var(x[0])),
            vec![(lo, hi)],
            1,
        )?;
        ch.check_monotone()?;
        Ok(ch)
    }

    /// Supplies an explicit inverse of the mean function. Required when the
    /// input has more than one coordinate.
    pub fn with_inverse(mut self, inverse: impl Fn(&[f64]) -> Option<Vec<f64>> + Send + Sync + 'static) -> Self {
        self.inverse = Some(Box::new(inverse));
        self
    }

    /// `m(x) = βx`, `v(x) = σ²` on the real line.
    pub fn linear_gaussian(beta: f64, sigma2: f64) -> Result<Self> {
        if beta == 0.0 || !(sigma2 > 0.0) {
            return Err(Error::InvalidArgument(
                "linear channel needs beta ≠ 0 and sigma2 > 0".into(),
            ));
        }
        Ok(
            Self::scalar(move |x| beta * x, move |_| sigma2, f64::NEG_INFINITY, f64::INFINITY)?
                .with_inverse(move |m: &[f64]| Some(vec![m[0] / beta])),
        )
    }

    /// `m(x) = x/(1+|x|)`, `v(x) = c·(1+x)` on `(0, 10)`.
    pub fn saturating(noise_scale: f64) -> Result<Self> {
        if !(noise_scale > 0.0) {
            return Err(Error::InvalidArgument("noise scale must be positive".into()));
        }
        Self::scalar(|x| x / (1.0 + x.abs()), move |x| noise_scale * (1.0 + x), 0.0, 10.0)
    }

    /// `m(x) = x`, `v(x) = σ²(1+x²)` on `(−L, L)`.
    pub fn input_scaled_noise(sigma2: f64, half_width: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && half_width > 0.0) {
            return Err(Error::InvalidArgument("sigma2 and half width must be positive".into()));
        }
        Self::scalar(|x| x, move |x| sigma2 * (1.0 + x * x), -half_width, half_width)
    }

    pub fn dim_x(&self) -> usize {
        self.domain.len()
    }

    pub fn dim_z(&self) -> usize {
        self.dim_z
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        (self.mean_fn)(x)
    }

    pub fn cond_var(&self, x: &[f64]) -> DMatrix<f64> {
        (self.cond_var_fn)(x)
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.len() == self.domain.len() && x.iter().zip(&self.domain).all(|(v, &(a, b))| *v > a && *v < b)
    }

    fn scalar_mean(&self, x: f64) -> f64 {
        (self.mean_fn)(&[x])[0]
    }

    fn endpoint(v: f64) -> f64 {
        if v.is_finite() {
            v
        } else {
            v.signum() * 1e300
        }
    }

    /// `(inf m, sup m)` over the domain of a scalar channel, from the
    /// endpoint values (or limits at ±∞).
    pub fn output_range(&self) -> Option<(f64, f64)> {
        if self.dim_x() != 1 || self.dim_z != 1 {
            return None;
        }
        let (lo, hi) = self.domain[0];
        let a = self.scalar_mean(Self::endpoint(lo));
        let b = self.scalar_mean(Self::endpoint(hi));
        Some((a.min(b), a.max(b)))
    }

    fn check_monotone(&self) -> Result<()> {
        let (lo, hi) = self.domain[0];
        let vals: Vec<f64> = (1..MONOTONE_GRID)
            .map(|i| self.scalar_mean(interior_point(lo, hi, i as f64 / MONOTONE_GRID as f64)))
            .collect();
        let inc = vals.windows(2).all(|w| w[1] > w[0]);
        let dec = vals.windows(2).all(|w| w[1] < w[0]);
        if inc || dec {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "mean function is not strictly monotone on the domain".into(),
            ))
        }
    }

    /// `m⁻¹(target)`. `Ok(None)` when the target lies outside `m(domain)`.
    pub fn invert(&self, target: &[f64]) -> Result<Option<Vec<f64>>> {
        if let Some(inv) = &self.inverse {
            return Ok(inv(target).filter(|x| self.in_domain(x)));
        }
        if self.dim_x() != 1 || self.dim_z != 1 {
            return Err(Error::InvalidArgument(
                "numerical inversion needs a scalar channel; supply an inverse".into(),
            ));
        }
        self.invert_scalar(target[0]).map(|o| o.map(|x| vec![x]))
    }

    fn invert_scalar(&self, target: f64) -> Result<Option<f64>> {
        let (lo, hi) = self.domain[0];
        let inc = self.scalar_mean(interior_point(lo, hi, 0.75)) > self.scalar_mean(interior_point(lo, hi, 0.25));
        // g < 0 below the root, g > 0 above it
        let g = |x: f64| {
            let d = self.scalar_mean(x) - target;
            if inc {
                d
            } else {
                -d
            }
        };
        let mut a = if lo.is_finite() {
            lo
        } else {
            interior_point(lo, hi, 0.5).min(-1.0)
        };
        let mut b = if hi.is_finite() {
            hi
        } else {
            interior_point(lo, hi, 0.5).max(1.0)
        };
        let mut ga = g(a);
        let mut gb = g(b);
        if ga.is_nan() || gb.is_nan() {
            return Err(Error::InversionFailure(target));
        }
        while ga >= 0.0 {
            if lo.is_finite() || a < -1e300 {
                return Ok(None);
            }
            b = a;
            gb = ga;
            a *= 2.0;
            ga = g(a);
        }
        while gb <= 0.0 {
            if hi.is_finite() || b > 1e300 {
                return Ok(None);
            }
            a = b;
            ga = g(a);
            b *= 2.0;
            gb = g(b);
        }
        if ga.is_nan() || gb.is_nan() {
            return Err(Error::InversionFailure(target));
        }
        for _ in 0..2000 {
            let mid = 0.5 * (a + b);
            if b - a <= INVERSION_TOL * (1.0 + mid.abs()) || mid == a || mid == b {
                break;
            }
            let gm = g(mid);
            if gm.is_nan() {
                return Err(Error::InversionFailure(target));
            }
            if gm < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        let x = 0.5 * (a + b);
        Ok((x > lo && x < hi).then_some(x))
    }
}

/// Built-in channels by name: `linear` (βx, σ²), `saturating` (x/(1+|x|),
/// c(1+x) on (0, 10)), `scaled-noise` (x, σ²(1+x²) on (−L, L)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinChannel {
    LinearGaussian { beta: f64, sigma2: f64 },
    Saturating { noise_scale: f64 },
    InputScaledNoise { sigma2: f64, half_width: f64 },
}

impl BuiltinChannel {
    pub fn build(&self) -> Result<ChannelMoments> {
        match *self {
            BuiltinChannel::LinearGaussian { beta, sigma2 } => ChannelMoments::linear_gaussian(beta, sigma2),
            BuiltinChannel::Saturating { noise_scale } => ChannelMoments::saturating(noise_scale),
            BuiltinChannel::InputScaledNoise { sigma2, half_width } => {
                ChannelMoments::input_scaled_noise(sigma2, half_width)
            }
        }
    }
}

impl FromStr for BuiltinChannel {
    type Err = Error;

    /// `linear[:BETA,SIGMA2]`, `saturating[:C]`, `scaled-noise[:SIGMA2,L]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a)),
            None => (s.trim(), None),
        };
        let nums: Vec<f64> = match args {
            Some(a) => a
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{t}: {e}"))))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        match (name, nums.as_slice()) {
            ("linear", []) => Ok(BuiltinChannel::LinearGaussian { beta: 1.0, sigma2: 1.0 }),
            ("linear", [b, s]) => Ok(BuiltinChannel::LinearGaussian { beta: *b, sigma2: *s }),
            ("saturating", []) => Ok(BuiltinChannel::Saturating { noise_scale: 0.01 }),
            ("saturating", [c]) => Ok(BuiltinChannel::Saturating { noise_scale: *c }),
            ("scaled-noise", []) => Ok(BuiltinChannel::InputScaledNoise {
                sigma2: 1.0,
                half_width: 10.0,
            }),
            ("scaled-noise", [s, l]) => Ok(BuiltinChannel::InputScaledNoise {
                sigma2: *s,
                half_width: *l,
            }),
            _ => Err(Error::Parse(format!("unknown channel `{s}`"))),
        }
    }
}

/// Normal distribution of the pseudo-input `M = m(X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPseudoInput {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianPseudoInput {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::DimensionMismatch(
                "pseudo-input mean and covariance differ in size".into(),
            ));
        }
        if covariance.clone().cholesky().is_none() {
            return Err(Error::NonPositiveDefinite("pseudo-input covariance"));
        }
        Ok(Self { mean, covariance })
    }

    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, variance))
    }
}

/// A Monte Carlo capacity bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityBound {
    pub bound: BoundEstimate,
    pub stderr: f64,
    pub draws: usize,
    pub escaped: usize,
}

/// `−½ log ν(Z|X)` for `M ~ pseudo`, with `E{V[Z|X]}` averaged over
/// `mc_draws` draws of `X = m⁻¹(M)`. The same `seed` gives the same draws of
/// the underlying standard normals (common random numbers).
pub fn bound_at(
    channel: &ChannelMoments,
    pseudo: &GaussianPseudoInput,
    mc_draws: usize,
    seed: u64,
) -> Result<CapacityBound> {
    if mc_draws < MIN_DRAWS {
        return Err(Error::TooFewPoints {
            got: mc_draws,
            min: MIN_DRAWS,
        });
    }
    let d = channel.dim_z();
    if pseudo.mean.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "pseudo-input has dimension {}, channel output {d}",
            pseudo.mean.len()
        )));
    }
    let chol = pseudo
        .covariance
        .clone()
        .cholesky()
        .ok_or(Error::NonPositiveDefinite("pseudo-input covariance"))?;
    let l = chol.l();
    let mut r = rng::stream(seed, &[]);
    let mut vars: Vec<DMatrix<f64>> = Vec::with_capacity(mc_draws);
    let mut escaped = 0usize;
    let mut u = DVector::zeros(d);
    for _ in 0..mc_draws {
        for k in 0..d {
            u[k] = StandardNormal.sample(&mut r);
        }
        let m = &pseudo.mean + &l * &u;
        match channel.invert(m.as_slice())? {
            Some(x) => {
                let v = channel.cond_var(&x);
                if v.nrows() != d || v.ncols() != d {
                    return Err(Error::DimensionMismatch(
                        "conditional variance has the wrong size".into(),
                    ));
                }
                vars.push(v);
            }
            None => escaped += 1,
        }
    }
    if escaped as f64 > ESCAPE_SHARE * mc_draws as f64 {
        return Err(Error::DomainEscape(escaped as f64 / mc_draws as f64));
    }
    let kept = vars.len() as f64;
    let e_bar = vars.iter().fold(DMatrix::zeros(d, d), |acc, v| acc + v) / kept;
    let total = &pseudo.covariance + &e_bar;
    let nu = NuStatistic::from_logdets(
        log_det_spd(&e_bar, "expected conditional variance")?,
        log_det_spd(&total, "output variance")?,
    );
    let bound = bound_from_nu_directed(&nu, Direction::OutputGivenInput)?;
    // influence of draw i on the bound: ½ tr(G (V_i − Ē)), G = (V_M + Ē)⁻¹ − Ē⁻¹
    let g = total.try_inverse().ok_or(Error::SingularMatrix("output variance"))?
        - e_bar
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMatrix("expected conditional variance"))?;
    let infl: Vec<f64> = vars.iter().map(|v| 0.5 * (&g * (v - &e_bar)).trace()).collect();
    let var_infl = infl.iter().map(|t| t * t).sum::<f64>() / (kept - 1.0);
    Ok(CapacityBound {
        bound,
        stderr: (var_infl / kept).sqrt(),
        draws: mc_draws,
        escaped,
    })
}

/// Search region for Gaussian pseudo-inputs, parametrized by the mean and
/// the log-Cholesky factor of the covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBox {
    pub mean: Vec<(f64, f64)>,
    /// Bounds on `log L_kk`.
    pub log_chol_diag: Vec<(f64, f64)>,
    /// Bounds on `L_jk`, `j > k`, in row-major order of the lower triangle.
    pub chol_offdiag: Vec<(f64, f64)>,
}

impl SearchBox {
    /// One-dimensional box: mean in `mean`, variance in `variance`.
    pub fn scalar(mean: (f64, f64), variance: (f64, f64)) -> Result<Self> {
        if !(variance.0 > 0.0 && variance.0 <= variance.1 && mean.0 <= mean.1) {
            return Err(Error::InfeasibleSearchBox(
                "bounds must be ordered, variances positive".into(),
            ));
        }
        Ok(Self {
            mean: vec![mean],
            log_chol_diag: vec![(0.5 * variance.0.ln(), 0.5 * variance.1.ln())],
            chol_offdiag: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        self.mean
            .iter()
            .chain(&self.log_chol_diag)
            .chain(&self.chol_offdiag)
            .copied()
            .collect()
    }

    fn project(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.bounds())
            .map(|(t, (a, b))| t.clamp(a, b))
            .collect()
    }

    /// Pseudo-input for a parameter vector (projected onto the box first).
    pub fn pseudo_input(&self, theta: &[f64]) -> Result<GaussianPseudoInput> {
        let p = self.project(theta);
        let d = self.dim();
        let mean = DVector::from_column_slice(&p[..d]);
        let mut l = DMatrix::zeros(d, d);
        for k in 0..d {
            l[(k, k)] = p[d + k].exp();
        }
        let mut idx = 2 * d;
        for j in 0..d {
            for k in 0..j {
                l[(j, k)] = p[idx];
                idx += 1;
            }
        }
        GaussianPseudoInput::new(mean, &l * l.transpose())
    }

    fn validate(&self, channel: &ChannelMoments) -> Result<()> {
        let d = self.dim();
        if self.log_chol_diag.len() != d || self.chol_offdiag.len() != d * (d - 1) / 2 {
            return Err(Error::InfeasibleSearchBox(
                "parameter bounds do not match the dimension".into(),
            ));
        }
        if d != channel.dim_z() {
            return Err(Error::InfeasibleSearchBox(format!(
                "box dimension {d} differs from channel output dimension {}",
                channel.dim_z()
            )));
        }
        if self.bounds().iter().any(|&(a, b)| !(a <= b)) {
            return Err(Error::InfeasibleSearchBox("bounds must satisfy lo ≤ hi".into()));
        }
        if let Some((m_lo, m_hi)) = channel.output_range() {
            // two-sided 99.9% mass of the widest allowed normal
            let q = normal::quantile(0.9995);
            let sd_max = self.log_chol_diag[0].1.exp();
            let (a, b) = self.mean[0];
            if a - q * sd_max < m_lo || b + q * sd_max > m_hi {
                return Err(Error::InfeasibleSearchBox(format!(
                    "mean range [{a}, {b}] with sd up to {sd_max} puts more than 0.1% mass outside ({m_lo}, {m_hi})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityOptimum {
    pub pseudo: GaussianPseudoInput,
    pub theta: Vec<f64>,
    pub bound: CapacityBound,
    pub evaluations: usize,
    /// The evaluation budget ran out before the simplex converged; the
    /// result is the best point seen.
    pub budget_exhausted: bool,
}

struct Objective<'a> {
    channel: &'a ChannelMoments,
    search: &'a SearchBox,
    mc_draws: usize,
    seed: u64,
    budget: usize,
    evaluations: &'a AtomicUsize,
    best: &'a Mutex<Option<(f64, Vec<f64>)>>,
}

const PENALTY: f64 = 1e6;

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        if self.evaluations.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(argmin::core::Error::msg("evaluation budget exhausted"));
        }
        let p = self.search.project(theta);
        let value = self
            .search
            .pseudo_input(&p)
            .and_then(|pseudo| bound_at(self.channel, &pseudo, self.mc_draws, self.seed))
            .map(|b| -b.bound.nats)
            .unwrap_or(PENALTY);
        let mut best = self.best.lock().expect("objective lock");
        if best.as_ref().is_none_or(|(c, _)| value < *c) {
            *best = Some((value, p));
        }
        Ok(value)
    }
}

/// Maximizes the bound over Gaussian pseudo-inputs in `search` with
/// Nelder–Mead, using at most `budget` bound evaluations. All evaluations
/// share one seed, so the objective is a deterministic function.
pub fn maximize_capacity_bound(
    channel: &ChannelMoments,
    search: &SearchBox,
    budget: usize,
    mc_draws: usize,
    seed: u64,
) -> Result<CapacityOptimum> {
    search.validate(channel)?;
    let bounds = search.bounds();
    let center: Vec<f64> = bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let mut simplex = vec![center.clone()];
    for (k, &(a, b)) in bounds.iter().enumerate() {
        let mut v = center.clone();
        v[k] += (0.25 * (b - a)).max(1e-3);
        simplex.push(v);
    }
    let evaluations = AtomicUsize::new(0);
    let best = Mutex::new(None);
    let objective = Objective {
        channel,
        search,
        mc_draws,
        seed,
        budget,
        evaluations: &evaluations,
        best: &best,
    };
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-12)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let run = Executor::new(objective, solver)
        .configure(|state| state.max_iters(budget as u64))
        .run();
    let converged = match &run {
        Ok(res) => matches!(
            res.state().get_termination_status(),
            TerminationStatus::Terminated(TerminationReason::SolverConverged)
        ),
        Err(_) => false,
    };
    let evaluations = evaluations.load(Ordering::SeqCst).min(budget);
    let (_, theta) = best
        .into_inner()
        .expect("objective lock")
        .ok_or_else(|| Error::InvalidArgument("no evaluation completed".into()))?;
    let pseudo = search.pseudo_input(&theta)?;
    let bound = bound_at(channel, &pseudo, mc_draws, seed)?;
    Ok(CapacityOptimum {
        pseudo,
        theta,
        bound,
        evaluations,
        budget_exhausted: !converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn linear_channel_closed_form() {
        let ch = ChannelMoments::linear_gaussian(2.0, 0.5).unwrap();
        for tau2 in [0.1, 1.0, 7.0] {
            let b = bound_at(&ch, &GaussianPseudoInput::scalar(0.3, tau2).unwrap(), 2000, 1).unwrap();
            assert!((b.bound.nats - 0.5 * (1.0 + tau2 / 0.5f64).ln()).abs() < 1e-12);
            assert!(b.stderr < 1e-12);
        }
        let tiny = bound_at(&ch, &GaussianPseudoInput::scalar(0.0, 1e-12).unwrap(), 2000, 1).unwrap();
        assert!(tiny.bound.nats < 1e-11);
    }

    #[test]
    fn numerical_inversion_matches_analytic() {
        let ch = ChannelMoments::saturating(0.01).unwrap();
        for m in [0.01, 0.3, 0.5, 0.8, 0.9] {
            let x = ch.invert(&[m]).unwrap().unwrap()[0];
            let exact = m / (1.0 - m);
            assert!((x - exact).abs() < 1e-9 * (1.0 + exact), "{x} vs {exact}");
        }
        assert_eq!(ch.invert(&[0.95]).unwrap(), None);
        assert_eq!(ch.invert(&[-0.1]).unwrap(), None);
        let unbounded = ChannelMoments::scalar(|x| x.powi(3) + x, |_| 1.0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let x = unbounded.invert(&[1e6]).unwrap().unwrap()[0];
        assert!((x.powi(3) + x - 1e6).abs() < 1e-3);
        let decreasing = ChannelMoments::scalar(|x| -2.0 * x, |_| 1.0, -1.0, 1.0).unwrap();
        assert!((decreasing.invert(&[1.0]).unwrap().unwrap()[0] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn non_monotone_mean_is_rejected() {
        assert!(ChannelMoments::scalar(|x| x * x, |_| 1.0, -1.0, 1.0).is_err());
    }

    // Brute-force oracle using the analytic inverse x = m/(1−m).
    #[test]
    fn saturating_channel_matches_brute_force() {
        let ch = ChannelMoments::saturating(0.01).unwrap();
        let pseudo = GaussianPseudoInput::scalar(0.5, 0.01).unwrap();
        let b = bound_at(&ch, &pseudo, 20_000, 3).unwrap();
        let mut r = rng::stream(99, &[]);
        let n = 1_000_000;
        let mut acc = 0.0;
        let mut kept = 0;
        for _ in 0..n {
            let u: f64 = StandardNormal.sample(&mut r);
            let m = 0.5 + 0.1 * u;
            if m > 0.0 && m < 10.0 / 11.0 {
                acc += 0.01 * (1.0 + m / (1.0 - m));
                kept += 1;
            }
        }
        let e = acc / kept as f64;
        let oracle = 0.5 * (1.0 + 0.01 / e).ln();
        assert!(
            (b.bound.nats - oracle).abs() < 2.0 * b.stderr,
            "{} vs {oracle} (se {})",
            b.bound.nats,
            b.stderr
        );
    }

    #[test]
    fn escape_is_reported() {
        let ch = ChannelMoments::saturating(0.01).unwrap();
        let wide = GaussianPseudoInput::scalar(0.5, 0.09).unwrap();
        assert!(matches!(bound_at(&ch, &wide, 2000, 1), Err(Error::DomainEscape(_))));
    }

    #[test]
    fn reparametrization_invariance() {
        let a = ChannelMoments::saturating(0.01).unwrap();
        // x = u³ on (0, 10^{1/3})
        let b = ChannelMoments::scalar(
            |u| {
                let x = u * u * u;
                x / (1.0 + x)
            },
            |u| 0.01 * (1.0 + u * u * u),
            0.0,
            10f64.cbrt(),
        )
        .unwrap();
        let pseudo = GaussianPseudoInput::scalar(0.4, 0.005).unwrap();
        let ba = bound_at(&a, &pseudo, 5000, 4).unwrap();
        let bb = bound_at(&b, &pseudo, 5000, 4).unwrap();
        assert!((ba.bound.nats - bb.bound.nats).abs() < 3.0 * ba.stderr.max(1e-12));
    }

    #[test]
    fn more_noise_lowers_the_bound() {
        let pseudo = GaussianPseudoInput::scalar(0.4, 0.005).unwrap();
        let base = bound_at(&ChannelMoments::saturating(0.01).unwrap(), &pseudo, 5000, 5).unwrap();
        let noisy = bound_at(&ChannelMoments::saturating(0.02).unwrap(), &pseudo, 5000, 5).unwrap();
        assert!(noisy.bound.nats < base.bound.nats);
        let lin = ChannelMoments::linear_gaussian(1.0, 1.0).unwrap();
        let lin2 = ChannelMoments::linear_gaussian(1.0, 1.5).unwrap();
        let p = GaussianPseudoInput::scalar(0.0, 2.0).unwrap();
        assert!(bound_at(&lin2, &p, 1000, 1).unwrap().bound.nats < bound_at(&lin, &p, 1000, 1).unwrap().bound.nats);
    }

    #[test]
    fn optimizer_reaches_the_variance_cap() {
        let ch = ChannelMoments::linear_gaussian(1.0, 1.0).unwrap();
        let p = 4.0;
        let search = SearchBox::scalar((-1.0, 1.0), (0.01, p)).unwrap();
        let opt = maximize_capacity_bound(&ch, &search, 400, 1000, 7).unwrap();
        assert!((opt.bound.bound.nats - 0.5 * (1.0f64 + p).ln()).abs() < 1e-3);
    }

    #[test]
    fn optimum_is_stationary_for_scaled_noise() {
        let ch = ChannelMoments::input_scaled_noise(0.5, 10.0).unwrap();
        let search = SearchBox::scalar((-1.0, 1.0), (0.01, 7.0)).unwrap();
        let draws = 4000;
        let opt = maximize_capacity_bound(&ch, &search, 300, draws, 8).unwrap();
        for k in 0..opt.theta.len() {
            for f in [0.99, 1.01] {
                let mut t = opt.theta.clone();
                t[k] = if t[k] == 0.0 {
                    0.01 * (f - 1.0) * 100.0
                } else {
                    t[k] * f
                };
                let b = bound_at(&ch, &search.pseudo_input(&t).unwrap(), draws, 8).unwrap();
                assert!(b.bound.nats <= opt.bound.bound.nats + 2.0 * opt.bound.stderr);
            }
        }
    }

    #[test]
    fn saturating_optimum_dominates_random_inputs() {
        let ch = ChannelMoments::saturating(0.01).unwrap();
        let search = SearchBox::scalar((0.3, 0.6), (0.005f64.powi(2), 0.09f64.powi(2))).unwrap();
        let draws = 2000;
        let opt = maximize_capacity_bound(&ch, &search, 300, draws, 9).unwrap();
        let mut r = rng::stream(10, &[]);
        for _ in 0..50 {
            let theta = vec![r.random_range(0.3..0.6), r.random_range(0.005f64.ln()..0.09f64.ln())];
            let b = bound_at(&ch, &search.pseudo_input(&theta).unwrap(), draws, 9).unwrap();
            assert!(opt.bound.bound.nats >= b.bound.nats - 1e-9);
        }
    }

    #[test]
    fn infeasible_box() {
        let ch = ChannelMoments::saturating(0.01).unwrap();
        let search = SearchBox::scalar((0.1, 0.8), (0.001, 0.04)).unwrap();
        assert!(matches!(
            maximize_capacity_bound(&ch, &search, 50, 1000, 1),
            Err(Error::InfeasibleSearchBox(_))
        ));
    }

    #[test]
    fn budget_flag() {
        let ch = ChannelMoments::saturating(0.01).unwrap();
        let search = SearchBox::scalar((0.3, 0.6), (1e-4, 0.005)).unwrap();
        let opt = maximize_capacity_bound(&ch, &search, 5, 1000, 1).unwrap();
        assert!(opt.budget_exhausted);
        assert!(opt.evaluations <= 5);
    }

    #[test]
    fn builtin_names() {
        assert_eq!(
            "linear:2,0.5".parse::<BuiltinChannel>().unwrap(),
            BuiltinChannel::LinearGaussian { beta: 2.0, sigma2: 0.5 }
        );
        assert!("saturating".parse::<BuiltinChannel>().unwrap().build().is_ok());
        assert!("bogus".parse::<BuiltinChannel>().is_err());
    }
}
