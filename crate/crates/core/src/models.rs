//! Data-generating models with known mutual information.
//!
//! * `BivariateNormal`: `X ~ N(0, σ_X²)`, `Z = βX + ε`.
//! * `Mixture`: `X ~ ½N(μ₁, σ₁²) + ½N(μ₂, σ₂²)`, `Z = βX + ε`.
//! * `DiscreteInput`: a demonstration model, not one of the simulation-study
//!   designs. `X` takes finitely many values and `Z | X = x ~ N(x, sd²)`.
//!
//! In all cases `ε ~ N(0, σ_ε²)` is independent of `X`.

use crate::error::{Error, Result};
use crate::normal;
use crate::rng::StreamRng;
use crate::sample::JointSample;
use crate::transforms::{forward, SourceCdf};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};
use std::str::FromStr;

pub const DEFAULT_TRUTH_DRAWS: usize = 100_000;
pub const MIN_TRUTH_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    BivariateNormal,
    Mixture,
    DiscreteInput,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gaussian" => Ok(ModelKind::BivariateNormal),
            "mixture" => Ok(ModelKind::Mixture),
            "discrete" => Ok(ModelKind::DiscreteInput),
            other => Err(Error::Parse(format!(
                "unknown model `{other}` (gaussian, mixture, discrete)"
            ))),
        }
    }
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::BivariateNormal => "gaussian",
            ModelKind::Mixture => "mixture",
            ModelKind::DiscreteInput => "discrete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GenModel {
    BivariateNormal {
        beta: f64,
        sigma_eps2: f64,
        sigma_x2: f64,
    },
    Mixture {
        beta: f64,
        sigma_eps2: f64,
        mu1: f64,
        mu2: f64,
        sigma1_2: f64,
        sigma2_2: f64,
    },
    DiscreteInput {
        support: Vec<f64>,
        probs: Vec<f64>,
        cond_sd: f64,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} = {v} must be positive and finite"
        )))
    }
}

impl GenModel {
    pub fn bivariate_normal(beta: f64, sigma_eps2: f64, sigma_x2: f64) -> Result<Self> {
        positive("sigma_eps2", sigma_eps2)?;
        positive("sigma_x2", sigma_x2)?;
        if !beta.is_finite() {
            return Err(Error::InvalidArgument("beta must be finite".into()));
        }
        Ok(GenModel::BivariateNormal {
            beta,
            sigma_eps2,
            sigma_x2,
        })
    }

    /// Mixture with the default input, components at ±5 with variance 25/4.
    pub fn mixture(beta: f64, sigma_eps2: f64) -> Result<Self> {
        Self::mixture_with(beta, sigma_eps2, -5.0, 5.0, 6.25, 6.25)
    }

    pub fn mixture_with(beta: f64, sigma_eps2: f64, mu1: f64, mu2: f64, sigma1_2: f64, sigma2_2: f64) -> Result<Self> {
        positive("sigma_eps2", sigma_eps2)?;
        positive("sigma1_2", sigma1_2)?;
        positive("sigma2_2", sigma2_2)?;
        if !(beta.is_finite() && mu1.is_finite() && mu2.is_finite()) {
            return Err(Error::InvalidArgument("mixture parameters must be finite".into()));
        }
        Ok(GenModel::Mixture {
            beta,
            sigma_eps2,
            mu1,
            mu2,
            sigma1_2,
            sigma2_2,
        })
    }

    pub fn discrete(support: Vec<f64>, probs: Vec<f64>, cond_sd: f64) -> Result<Self> {
        positive("cond_sd", cond_sd)?;
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::InvalidArgument(
                "support and probabilities differ in length".into(),
            ));
        }
        if probs.iter().any(|p| !(*p > 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "probabilities must be positive and sum to 1".into(),
            ));
        }
        let mut s = support.clone();
        s.sort_by(f64::total_cmp);
        if s.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("support points must be distinct".into()));
        }
        Ok(GenModel::DiscreteInput {
            support,
            probs,
            cond_sd,
        })
    }

    pub fn discrete_uniform(support: Vec<f64>, cond_sd: f64) -> Result<Self> {
        let p = 1.0 / support.len().max(1) as f64;
        let probs = vec![p; support.len()];
        Self::discrete(support, probs, cond_sd)
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            GenModel::BivariateNormal { .. } => ModelKind::BivariateNormal,
            GenModel::Mixture { .. } => ModelKind::Mixture,
            GenModel::DiscreteInput { .. } => ModelKind::DiscreteInput,
        }
    }

    /// Distribution of `X` for the continuous models.
    pub fn source_cdf(&self) -> Option<SourceCdf> {
        match self {
            GenModel::BivariateNormal { sigma_x2, .. } => Some(SourceCdf::Normal {
                mean: 0.0,
                sd: sigma_x2.sqrt(),
            }),
            GenModel::Mixture {
                mu1,
                mu2,
                sigma1_2,
                sigma2_2,
                ..
            } => Some(SourceCdf::two_component(*mu1, *mu2, *sigma1_2, *sigma2_2)),
            GenModel::DiscreteInput { .. } => None,
        }
    }

    pub fn input_variance(&self) -> f64 {
        match self {
            GenModel::DiscreteInput { support, probs, .. } => {
                let m: f64 = support.iter().zip(probs).map(|(x, p)| x * p).sum();
                support.iter().zip(probs).map(|(x, p)| p * (x - m) * (x - m)).sum()
            }
            other => other.source_cdf().map(|c| c.variance()).unwrap_or(f64::NAN),
        }
    }

    /// Slope and noise variance of `Z` given `X`.
    fn channel(&self) -> (f64, f64) {
        match self {
            GenModel::BivariateNormal { beta, sigma_eps2, .. } | GenModel::Mixture { beta, sigma_eps2, .. } => {
                (*beta, *sigma_eps2)
            }
            GenModel::DiscreteInput { cond_sd, .. } => (1.0, cond_sd * cond_sd),
        }
    }

    pub fn output_variance(&self) -> f64 {
        let (b, s2) = self.channel();
        b * b * self.input_variance() + s2
    }

    /// `h(Z|X) = ½ log(2πe σ²)`.
    pub fn conditional_entropy(&self) -> f64 {
        0.5 * (2.0 * PI * std::f64::consts::E * self.channel().1).ln()
    }

    /// Components `(weight, mean, sd)` of the marginal density of `Z`.
    pub fn output_components(&self) -> Vec<(f64, f64, f64)> {
        let (b, s2) = self.channel();
        match self {
            GenModel::BivariateNormal { sigma_x2, .. } => vec![(1.0, 0.0, (b * b * sigma_x2 + s2).sqrt())],
            GenModel::Mixture {
                mu1,
                mu2,
                sigma1_2,
                sigma2_2,
                ..
            } => vec![
                (0.5, b * mu1, (b * b * sigma1_2 + s2).sqrt()),
                (0.5, b * mu2, (b * b * sigma2_2 + s2).sqrt()),
            ],
            GenModel::DiscreteInput { support, probs, .. } => {
                support.iter().zip(probs).map(|(&x, &p)| (p, x, s2.sqrt())).collect()
            }
        }
    }

    /// `log f_Z(z)`, computed by log-sum-exp over components.
    pub fn output_log_density(&self, z: f64) -> f64 {
        log_mixture_density(&self.output_components(), z)
    }

    /// `H(X)` in nats for the discrete model.
    pub fn input_entropy(&self) -> Option<f64> {
        match self {
            GenModel::DiscreteInput { probs, .. } => Some(-probs.iter().map(|p| p * p.ln()).sum::<f64>()),
            _ => None,
        }
    }

    /// Population `ν(Z|X) = E V[Z|X] / V[Z]` (scalar case).
    pub fn nu_output(&self) -> f64 {
        self.channel().1 / self.output_variance()
    }
}

fn log_mixture_density(comps: &[(f64, f64, f64)], z: f64) -> f64 {
    let terms: Vec<f64> = comps
        .iter()
        .map(|&(w, m, s)| w.ln() + normal::ln_pdf((z - m) / s) - s.ln())
        .collect();
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
}

/// Draws a parameter vector from the study's sampling scheme. The discrete
/// model has no sampling scheme and returns the default demonstration
/// (support {0, 2}, sd 0.3).
pub fn sample_params(kind: ModelKind, rng: &mut StreamRng) -> GenModel {
    match kind {
        ModelKind::BivariateNormal => {
            let beta = rng.random_range(1.0..10.0);
            let sigma_eps2 = 10f64.powf(rng.random_range(-2.0..2.0));
            let sigma_x2 = 10f64.powf(rng.random_range(-2.0..2.0));
            GenModel::BivariateNormal {
                beta,
                sigma_eps2,
                sigma_x2,
            }
        }
        ModelKind::Mixture => {
            let beta = 10f64.powf(rng.random_range(-1.0..1.0));
            let sigma_eps2 = 10f64.powf(rng.random_range(-2.5..2.5));
            GenModel::Mixture {
                beta,
                sigma_eps2,
                mu1: -5.0,
                mu2: 5.0,
                sigma1_2: 6.25,
                sigma2_2: 6.25,
            }
        }
        ModelKind::DiscreteInput => GenModel::DiscreteInput {
            support: vec![0.0, 2.0],
            probs: vec![0.5, 0.5],
            cond_sd: 0.3,
        },
    }
}

fn std_normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` i.i.d. draws of `(X, Z)`.
pub fn generate(model: &GenModel, n: usize, rng: &mut StreamRng) -> JointSample {
    let (b, s2) = model.channel();
    let se = s2.sqrt();
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    match model {
        GenModel::BivariateNormal { sigma_x2, .. } => {
            let sx = sigma_x2.sqrt();
            for _ in 0..n {
                x.push(sx * std_normal(rng));
            }
        }
        GenModel::Mixture {
            mu1,
            mu2,
            sigma1_2,
            sigma2_2,
            ..
        } => {
            for _ in 0..n {
                let v = if rng.random_bool(0.5) {
                    mu1 + sigma1_2.sqrt() * std_normal(rng)
                } else {
                    mu2 + sigma2_2.sqrt() * std_normal(rng)
                };
                x.push(v);
            }
        }
        GenModel::DiscreteInput { support, probs, .. } => {
            let pick = WeightedIndex::new(probs).expect("validated probabilities");
            for _ in 0..n {
                x.push(support[pick.sample(rng)]);
            }
        }
    }
    for &xi in &x {
        z.push(b * xi + se * std_normal(rng));
    }
    JointSample { x, z }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TruthMethod {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthResult {
    pub mi_nats: f64,
    pub method: TruthMethod,
    pub mc_draws: usize,
    pub mc_stderr: f64,
}

impl TruthResult {
    pub fn mi_bits(&self) -> f64 {
        self.mi_nats / LN_2
    }

    pub fn stderr_bits(&self) -> f64 {
        self.mc_stderr / LN_2
    }
}

/// Mean and standard error of per-draw terms, with the drift check: the
/// running mean at 90% of the draws must be within 3 standard errors of
/// the final mean.
fn mc_summary(terms: &[f64]) -> Result<(f64, f64)> {
    let m = terms.len();
    let cut = m * 9 / 10;
    let head: f64 = terms[..cut].iter().sum();
    let total = head + terms[cut..].iter().sum::<f64>();
    let mean = total / m as f64;
    let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (m as f64 - 1.0);
    let stderr = (var / m as f64).sqrt();
    let drift = (head / cut as f64 - mean).abs();
    // the floor covers summation round-off when the draws are nearly constant
    if drift > 3.0 * stderr + 1e-10 * (1.0 + mean.abs()) {
        return Err(Error::NonConvergence { drift, stderr });
    }
    Ok((mean, stderr))
}

/// True `I(X;Z)`. The bivariate normal is closed form. The mixture uses a
/// Monte Carlo average of `−log f_Z(Z)` with the exact mixture density. The
/// discrete model averages `log f(Z|X) − log f(Z)` per draw, which has the
/// same expectation and vanishing variance as the noise shrinks.
pub fn true_mi(model: &GenModel, mc_draws: usize, rng: &mut StreamRng) -> Result<TruthResult> {
    match model {
        GenModel::BivariateNormal {
            beta,
            sigma_eps2,
            sigma_x2,
        } => Ok(TruthResult {
            mi_nats: 0.5 * (beta * beta * sigma_x2 / sigma_eps2).ln_1p(),
            method: TruthMethod::ClosedForm,
            mc_draws: 0,
            mc_stderr: 0.0,
        }),
        GenModel::Mixture { .. } => {
            if mc_draws < MIN_TRUTH_DRAWS {
                return Err(Error::TooFewPoints {
                    got: mc_draws,
                    min: MIN_TRUTH_DRAWS,
                });
            }
            let comps = model.output_components();
            let sample = generate(model, mc_draws, rng);
            let terms: Vec<f64> = sample.z.iter().map(|&z| -log_mixture_density(&comps, z)).collect();
            let (h, se) = mc_summary(&terms)?;
            Ok(TruthResult {
                mi_nats: h - model.conditional_entropy(),
                method: TruthMethod::MonteCarlo,
                mc_draws,
                mc_stderr: se,
            })
        }
        GenModel::DiscreteInput {
            support,
            probs,
            cond_sd,
        } => {
            if mc_draws < MIN_TRUTH_DRAWS {
                return Err(Error::TooFewPoints {
                    got: mc_draws,
                    min: MIN_TRUTH_DRAWS,
                });
            }
            let pick = WeightedIndex::new(probs).expect("validated probabilities");
            let logp: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
            let two_s2 = 2.0 * cond_sd * cond_sd;
            let mut a = vec![0.0; support.len()];
            let terms: Vec<f64> = (0..mc_draws)
                .map(|_| {
                    let j = pick.sample(rng);
                    let e = cond_sd * std_normal(rng);
                    let z = support[j] + e;
                    // log f(z|x_j) − log f(z) = −log Σ_k p_k exp(−((z−x_k)² − e²)/(2σ²))
                    for (k, ak) in a.iter_mut().enumerate() {
                        let d = z - support[k];
                        *ak = logp[k] - (d * d - e * e) / two_s2;
                    }
                    let mx = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    -(mx + a.iter().map(|t| (t - mx).exp()).sum::<f64>().ln())
                })
                .collect();
            let (mi, se) = mc_summary(&terms)?;
            Ok(TruthResult {
                mi_nats: mi,
                method: TruthMethod::MonteCarlo,
                mc_draws,
                mc_stderr: se,
            })
        }
    }
}

/// Probabilists' Gauss–Hermite rule (weight `φ(x)`), by Golub–Welsch.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

const HERMITE_NODES: usize = 40;

/// `E[s(X) | Z = z]` for the mixture model, where `s` is the Gaussianizing
/// map of the input. The posterior of `X` given `z` is a two-component
/// normal mixture; each component's expectation uses Gauss–Hermite.
pub struct ConditionalScore {
    cdf: SourceCdf,
    comps: Vec<(f64, f64, f64, f64)>, // prior weight, prior mean, prior var, z-marginal var
    beta: f64,
    sigma_eps2: f64,
    nodes: (Vec<f64>, Vec<f64>),
}

impl ConditionalScore {
    pub fn new(model: &GenModel) -> Result<Self> {
        let GenModel::Mixture {
            beta,
            sigma_eps2,
            mu1,
            mu2,
            sigma1_2,
            sigma2_2,
        } = model
        else {
            return Err(Error::InvalidArgument(
                "conditional score is defined for the mixture model".into(),
            ));
        };
        let comps = [(*mu1, *sigma1_2), (*mu2, *sigma2_2)]
            .iter()
            .map(|&(m, v)| (0.5, m, v, beta * beta * v + sigma_eps2))
            .collect();
        Ok(Self {
            cdf: model.source_cdf().expect("mixture has a cdf"),
            comps,
            beta: *beta,
            sigma_eps2: *sigma_eps2,
            nodes: gauss_hermite(HERMITE_NODES),
        })
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.moments(z).0
    }

    /// `(E[s(X) | Z = z], V[s(X) | Z = z])`. The variance is accumulated
    /// from centred terms, so it stays accurate when the posterior is narrow.
    pub fn moments(&self, z: f64) -> (f64, f64) {
        let b = self.beta;
        let mut logw = Vec::with_capacity(self.comps.len());
        let mut post = Vec::with_capacity(self.comps.len());
        for &(w, m, v, vz) in &self.comps {
            let sd = vz.sqrt();
            logw.push(w.ln() + normal::ln_pdf((z - b * m) / sd) - sd.ln());
            let gain = v * b / vz;
            post.push((m + gain * (z - b * m), v * self.sigma_eps2 / vz));
        }
        let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let wsum: f64 = logw.iter().map(|l| (l - mx).exp()).sum();
        let mut parts = Vec::with_capacity(post.len());
        for (lw, &(pm, pv)) in logw.iter().zip(&post) {
            let w = (lw - mx).exp() / wsum;
            if w < 1e-300 {
                continue;
            }
            let ps = pv.sqrt();
            let vals: Vec<f64> = self
                .nodes
                .0
                .iter()
                .map(|&t| forward(&self.cdf, pm + ps * t).unwrap_or(if t < 0.0 { -8.3 } else { 8.3 }))
                .collect();
            let e: f64 = vals.iter().zip(&self.nodes.1).map(|(s, wt)| wt * s).sum();
            let v: f64 = vals
                .iter()
                .zip(&self.nodes.1)
                .map(|(s, wt)| wt * (s - e) * (s - e))
                .sum();
            parts.push((w, e, v));
        }
        let mean: f64 = parts.iter().map(|(w, e, _)| w * e).sum();
        let var: f64 = parts.iter().map(|(w, e, v)| w * (v + (e - mean) * (e - mean))).sum();
        (mean, var)
    }
}

/// Population quantities for the mixture model, by Monte Carlo over `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationMoments {
    /// `ν(X̃|Z) = E V[X̃|Z]`, since `V[X̃] = 1`.
    pub nu_input: f64,
    pub nu_input_stderr: f64,
    /// `Corr²(X̃, Z)`.
    pub corr2: f64,
    pub corr2_stderr: f64,
    pub draws: usize,
}

impl PopulationMoments {
    /// `−½ log ν(X̃|Z)` and its delta-method standard error.
    pub fn nu_bound(&self) -> (f64, f64) {
        (-0.5 * self.nu_input.ln(), self.nu_input_stderr / (2.0 * self.nu_input))
    }

    /// `−½ log(1 − Corr²)` and its standard error.
    pub fn corr_bound(&self) -> (f64, f64) {
        let r = 1.0 - self.corr2;
        (-0.5 * r.ln(), self.corr2_stderr / (2.0 * r))
    }
}

const SCORE_GRID: usize = 8193;

/// Population moments of the mixture model from `draws` Monte Carlo draws of
/// `Z`. The conditional score is tabulated on a fine grid over the range of
/// the draws and interpolated linearly.
pub fn mixture_population_moments(model: &GenModel, draws: usize, rng: &mut StreamRng) -> Result<PopulationMoments> {
    let score = ConditionalScore::new(model)?;
    if draws < MIN_TRUTH_DRAWS {
        return Err(Error::TooFewPoints {
            got: draws,
            min: MIN_TRUTH_DRAWS,
        });
    }
    let z = generate(model, draws, rng).z;
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let h = (hi - lo) / (SCORE_GRID - 1) as f64;
    let table: Vec<(f64, f64)> = (0..SCORE_GRID).map(|i| score.moments(lo + i as f64 * h)).collect();
    let (g, cv): (Vec<f64>, Vec<f64>) = z
        .iter()
        .map(|&v| {
            let t = ((v - lo) / h).clamp(0.0, (SCORE_GRID - 1) as f64);
            let i = (t.floor() as usize).min(SCORE_GRID - 2);
            let f = t - i as f64;
            let (a, b) = (table[i], table[i + 1]);
            (a.0 * (1.0 - f) + b.0 * f, a.1 * (1.0 - f) + b.1 * f)
        })
        .unzip();
    let m = draws as f64;
    let gm = g.iter().sum::<f64>() / m;
    let zm = z.iter().sum::<f64>() / m;
    let c_terms: Vec<f64> = g.iter().zip(&z).map(|(a, b)| (a - gm) * (b - zm)).collect();
    let mean_sd = |t: &[f64]| {
        let mu = t.iter().sum::<f64>() / m;
        let var = t.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (m - 1.0);
        (mu, (var / m).sqrt())
    };
    let (ev, ev_se) = mean_sd(&cv);
    let (c, c_se) = mean_sd(&c_terms);
    let vz = model.output_variance();
    Ok(PopulationMoments {
        nu_input: ev,
        nu_input_stderr: ev_se,
        corr2: c * c / vz,
        corr2_stderr: 2.0 * c.abs() * c_se / vz,
        draws,
    })
}
