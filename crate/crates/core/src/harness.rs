//! Monte Carlo replication study: repeated datasets at fixed parameters
//! (bias, rmse, coverage), one dataset per sampled parameter vector (scatter
//! panels), and the discrete-input convergence table.
//!
//! All randomness is derived from a root seed and fixed index paths, and
//! results are aggregated in replicate order, so output does not depend on
//! the number of workers.

use crate::bounds::{nats_to_bits, Direction};
use crate::error::{Error, Result};
use crate::estimate::{self, BcaConfig, BcaInterval, NuMethod, PipelineConfig};
use crate::knnmi::{self, KnnConfig};
use crate::models::{self, GenModel, ModelKind, TruthResult, DEFAULT_TRUTH_DRAWS};
use crate::rng::{self, derive_seed};
use crate::sample::JointSample;
use crate::transforms::GaussianizingMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const DEFAULT_REPLICATIONS: usize = 500;
pub const DEFAULT_PANELS: usize = 60;
/// Largest share of failed replicates a scenario tolerates.
pub const MAX_EXCLUDED_SHARE: f64 = 0.1;
pub const MI_BIN_WIDTH_BITS: f64 = 0.5;

// stream tags
const TAG_TRUTH: u64 = 1;
const TAG_DATA: u64 = 2;
const TAG_BOOT: u64 = 3;
const TAG_CORR_BOOT: u64 = 4;
const TAG_PANEL_PARAMS: u64 = 5;
const TAG_KNN_JITTER: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub model: GenModel,
    pub n: usize,
    pub replications: usize,
    pub level: f64,
    pub b: usize,
    pub k: usize,
    pub seed: u64,
    pub truth_draws: usize,
}

impl Scenario {
    pub fn new(model: GenModel, n: usize, seed: u64) -> Self {
        Self {
            model,
            n,
            replications: DEFAULT_REPLICATIONS,
            level: 0.9,
            b: 2000,
            k: 3,
            seed,
            truth_draws: DEFAULT_TRUTH_DRAWS,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be at least 1".into()));
        }
        if self.model.kind() == ModelKind::DiscreteInput {
            return Err(Error::InvalidArgument(
                "the replication study needs a continuous input model".into(),
            ));
        }
        Ok(())
    }
}

/// Aggregated metrics of one scenario, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub true_mi_bits: f64,
    pub true_mi_stderr_bits: f64,
    pub replications: usize,
    pub excluded: usize,
    pub knn_bias: f64,
    pub knn_rmse: f64,
    pub bound_bias: f64,
    pub composite_bias: f64,
    pub composite_rmse: f64,
    pub corr_composite_bias: Option<f64>,
    pub corr_composite_rmse: Option<f64>,
    /// Share of replicates whose interval contains the true MI.
    pub coverage: f64,
    /// Share of replicates whose lower limit lies below the true MI.
    pub exceedance: f64,
    /// Share of replicates excluded because an estimate was unavailable.
    pub invalid_nu_rate: f64,
}

/// Per-replicate estimates in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub knn: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub composite: f64,
    pub corr_lower: Option<f64>,
    pub corr_composite: Option<f64>,
}

/// Pipeline settings the study uses for a model: `Z` on `X/σ_X` for the
/// bivariate normal, `X̃` on `Z` for the mixture.
pub fn pipeline_for(model: &GenModel) -> Result<PipelineConfig> {
    let cdf = model
        .source_cdf()
        .ok_or_else(|| Error::InvalidArgument("model has no continuous input distribution".into()))?;
    let direction = match model.kind() {
        ModelKind::BivariateNormal => Direction::OutputGivenInput,
        _ => Direction::InputGivenOutput,
    };
    Ok(PipelineConfig::new(GaussianizingMap::known(cdf)?).with_direction(direction))
}

fn correlation_pipeline(model: &GenModel) -> Result<Option<PipelineConfig>> {
    Ok(match model.kind() {
        ModelKind::Mixture => Some(pipeline_for(model)?.with_method(NuMethod::Correlation)),
        _ => None,
    })
}

fn usable(iv: BcaInterval) -> Result<BcaInterval> {
    if iv.degenerate {
        Err(Error::DegenerateBootstrap {
            invalid: iv.replicates - iv.valid,
            total: iv.replicates,
        })
    } else {
        Ok(iv)
    }
}

struct Settings<'a> {
    cfg: &'a PipelineConfig,
    corr: Option<&'a PipelineConfig>,
    knn: KnnConfig,
    level: f64,
    b: usize,
}

/// All estimates for one dataset. `path` identifies the dataset's streams.
fn analyse(sample: &JointSample, st: &Settings, seed: u64, path: &[u64]) -> Result<ReplicateOutcome> {
    let child = path.iter().fold(seed, |acc, &i| derive_seed(acc, i));
    let knn_cfg = KnnConfig {
        jitter_seed: derive_seed(child, TAG_KNN_JITTER),
        ..st.knn.clone()
    };
    let knn = knnmi::estimate_mi(sample, &knn_cfg)?;
    let bca = |tag| BcaConfig {
        level: st.level,
        replicates: st.b,
        seed: derive_seed(child, tag),
    };
    let iv = usable(estimate::bca_interval(sample, st.cfg, &bca(TAG_BOOT))?)?;
    let comp = estimate::combine(knn, Some(&iv));
    let (corr_lower, corr_composite) = match st.corr {
        Some(c) => {
            let civ = usable(estimate::bca_interval(sample, c, &bca(TAG_CORR_BOOT))?)?;
            let cc = estimate::combine(knn, Some(&civ));
            (Some(nats_to_bits(civ.lower)), Some(nats_to_bits(cc.value)))
        }
        None => (None, None),
    };
    Ok(ReplicateOutcome {
        knn: nats_to_bits(knn),
        estimate: nats_to_bits(iv.estimate),
        lower: nats_to_bits(iv.lower),
        upper: nats_to_bits(iv.upper),
        composite: nats_to_bits(comp.value),
        corr_lower,
        corr_composite,
    })
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(pool.install(f))
}

fn bias_rmse(errors: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let m = errors.clone().count() as f64;
    let bias = errors.clone().sum::<f64>() / m;
    let rmse = (errors.map(|e| e * e).sum::<f64>() / m).sqrt();
    (bias, rmse)
}

/// Aggregates replicate outcomes against the true MI (bits).
pub fn aggregate(truth: &TruthResult, outcomes: &[Option<ReplicateOutcome>]) -> Result<ReplicationReport> {
    let total = outcomes.len();
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().flatten().collect();
    let excluded = total - ok.len();
    if excluded as f64 > MAX_EXCLUDED_SHARE * total as f64 || ok.is_empty() {
        return Err(Error::ScenarioFailed { excluded, total });
    }
    let t = truth.mi_bits();
    let m = ok.len() as f64;
    let (knn_bias, knn_rmse) = bias_rmse(ok.iter().map(|o| o.knn - t));
    let (bound_bias, _) = bias_rmse(ok.iter().map(|o| o.estimate - t));
    let (composite_bias, composite_rmse) = bias_rmse(ok.iter().map(|o| o.composite - t));
    let (corr_composite_bias, corr_composite_rmse) = if ok.iter().all(|o| o.corr_composite.is_some()) {
        let (b, r) = bias_rmse(ok.iter().map(|o| o.corr_composite.unwrap_or(f64::NAN) - t));
        (Some(b), Some(r))
    } else {
        (None, None)
    };
    Ok(ReplicationReport {
        true_mi_bits: t,
        true_mi_stderr_bits: truth.stderr_bits(),
        replications: total,
        excluded,
        knn_bias,
        knn_rmse,
        bound_bias,
        composite_bias,
        composite_rmse,
        corr_composite_bias,
        corr_composite_rmse,
        coverage: ok.iter().filter(|o| o.lower <= t && t <= o.upper).count() as f64 / m,
        exceedance: ok.iter().filter(|o| t > o.lower).count() as f64 / m,
        invalid_nu_rate: excluded as f64 / total as f64,
    })
}

/// Replicates one scenario on `workers` threads. Failed replicates are
/// excluded; more than 10% exclusions fail the scenario.
pub fn run_scenario(s: &Scenario, workers: usize) -> Result<ReplicationReport> {
    run_scenario_detailed(s, workers).map(|(r, _)| r)
}

/// As [`run_scenario`], also returning every replicate's outcome (`None`
/// for excluded replicates).
pub fn run_scenario_detailed(
    s: &Scenario,
    workers: usize,
) -> Result<(ReplicationReport, Vec<Option<ReplicateOutcome>>)> {
    s.validate()?;
    let truth = models::true_mi(&s.model, s.truth_draws, &mut rng::stream(s.seed, &[TAG_TRUTH]))?;
    let cfg = pipeline_for(&s.model)?;
    let corr = correlation_pipeline(&s.model)?;
    let st = Settings {
        cfg: &cfg,
        corr: corr.as_ref(),
        knn: KnnConfig {
            k: s.k,
            ..Default::default()
        },
        level: s.level,
        b: s.b,
    };
    let outcomes: Vec<Option<ReplicateOutcome>> = in_pool(workers, || {
        (0..s.replications as u64)
            .into_par_iter()
            .map(|i| {
                let data = models::generate(&s.model, s.n, &mut rng::stream(s.seed, &[TAG_DATA, i]));
                analyse(&data, &st, s.seed, &[i]).ok()
            })
            .collect()
    })?;
    Ok((aggregate(&truth, &outcomes)?, outcomes))
}

/// One row of the scatter-panel table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub model: String,
    pub index: usize,
    pub beta: f64,
    pub sigma_eps2: f64,
    pub sigma_x2: Option<f64>,
    pub n: usize,
    pub true_mi_bits: f64,
    /// Lower edge of the 0.5-bit true-MI bin.
    pub mi_bin: f64,
    pub knn: Option<f64>,
    pub estimate: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub composite: Option<f64>,
    pub corr_lower: Option<f64>,
    pub corr_composite: Option<f64>,
}

fn model_params(model: &GenModel) -> (f64, f64, Option<f64>) {
    match model {
        GenModel::BivariateNormal {
            beta,
            sigma_eps2,
            sigma_x2,
        } => (*beta, *sigma_eps2, Some(*sigma_x2)),
        GenModel::Mixture { beta, sigma_eps2, .. } => (*beta, *sigma_eps2, None),
        GenModel::DiscreteInput { cond_sd, .. } => (1.0, cond_sd * cond_sd, None),
    }
}

pub fn mi_bin(bits: f64) -> f64 {
    (bits / MI_BIN_WIDTH_BITS).floor() * MI_BIN_WIDTH_BITS
}

/// Settings for the scatter panels: `count` parameter vectors drawn from
/// the model's sampling scheme, one dataset each.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSpec {
    pub kind: ModelKind,
    pub count: usize,
    pub n: usize,
    pub level: f64,
    pub b: usize,
    pub k: usize,
    pub seed: u64,
    pub truth_draws: usize,
}

pub fn run_panels(p: &PanelSpec, workers: usize) -> Result<Vec<PanelRow>> {
    let rows: Vec<Result<PanelRow>> = in_pool(workers, || {
        (0..p.count as u64)
            .into_par_iter()
            .map(|i| {
                let model = models::sample_params(p.kind, &mut rng::stream(p.seed, &[TAG_PANEL_PARAMS, i]));
                let truth = models::true_mi(&model, p.truth_draws, &mut rng::stream(p.seed, &[TAG_TRUTH, i]))?;
                let cfg = pipeline_for(&model)?;
                let corr = correlation_pipeline(&model)?;
                let st = Settings {
                    cfg: &cfg,
                    corr: corr.as_ref(),
                    knn: KnnConfig {
                        k: p.k,
                        ..Default::default()
                    },
                    level: p.level,
                    b: p.b,
                };
                let data = models::generate(&model, p.n, &mut rng::stream(p.seed, &[TAG_DATA, i]));
                let out = analyse(&data, &st, p.seed, &[TAG_PANEL_PARAMS, i]).ok();
                let (beta, sigma_eps2, sigma_x2) = model_params(&model);
                Ok(PanelRow {
                    model: p.kind.name().to_string(),
                    index: i as usize,
                    beta,
                    sigma_eps2,
                    sigma_x2,
                    n: p.n,
                    true_mi_bits: truth.mi_bits(),
                    mi_bin: mi_bin(truth.mi_bits()),
                    knn: out.map(|o| o.knn),
                    estimate: out.map(|o| o.estimate),
                    lower: out.map(|o| o.lower),
                    upper: out.map(|o| o.upper),
                    composite: out.map(|o| o.composite),
                    corr_lower: out.and_then(|o| o.corr_lower),
                    corr_composite: out.and_then(|o| o.corr_composite),
                })
            })
            .collect()
    })?;
    rows.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub cond_sd: f64,
    pub nu: f64,
    pub mi_bits: f64,
    pub mi_stderr_bits: f64,
    pub entropy_gap_bits: f64,
}

/// Uniform input on `support_size` points spaced `gap` apart, observed with
/// Gaussian noise of each standard deviation in `sd_sequence`. Every row
/// uses the same random numbers.
pub fn run_convergence_demo(
    support_size: usize,
    gap: f64,
    sd_sequence: &[f64],
    truth_draws: usize,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    if support_size < 2 {
        return Err(Error::InvalidArgument("support needs at least two points".into()));
    }
    if !(gap >= 2.0) {
        return Err(Error::InvalidArgument(format!("support gap {gap} is below 2")));
    }
    let support: Vec<f64> = (0..support_size).map(|i| i as f64 * gap).collect();
    sd_sequence
        .iter()
        .map(|&sd| {
            let model = GenModel::discrete_uniform(support.clone(), sd)?;
            let truth = models::true_mi(&model, truth_draws, &mut rng::stream(seed, &[TAG_TRUTH]))?;
            let h = model.input_entropy().unwrap_or(f64::NAN);
            Ok(ConvergenceRow {
                cond_sd: sd,
                nu: model.nu_output(),
                mi_bits: truth.mi_bits(),
                mi_stderr_bits: truth.stderr_bits(),
                entropy_gap_bits: nats_to_bits(h - truth.mi_nats),
            })
        })
        .collect()
}

/// One row of `scenarios.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub model: String,
    pub beta: f64,
    pub sigma_eps2: f64,
    pub sigma_x2: Option<f64>,
    pub n: usize,
    pub level: f64,
    pub b: usize,
    pub k: usize,
    pub seed: u64,
    pub true_mi_bits: f64,
    pub true_mi_stderr_bits: f64,
    pub replications: usize,
    pub excluded: usize,
    pub knn_bias: f64,
    pub knn_rmse: f64,
    pub bound_bias: f64,
    pub composite_bias: f64,
    pub composite_rmse: f64,
    pub corr_composite_bias: Option<f64>,
    pub corr_composite_rmse: Option<f64>,
    pub coverage: f64,
    pub exceedance: f64,
    pub invalid_nu_rate: f64,
}

/// Column order of `scenarios.csv`.
pub const SCENARIO_COLUMNS: [&str; 23] = [
    "model",
    "beta",
    "sigma_eps2",
    "sigma_x2",
    "n",
    "level",
    "b",
    "k",
    "seed",
    "true_mi_bits",
    "true_mi_stderr_bits",
    "replications",
    "excluded",
    "knn_bias",
    "knn_rmse",
    "bound_bias",
    "composite_bias",
    "composite_rmse",
    "corr_composite_bias",
    "corr_composite_rmse",
    "coverage",
    "exceedance",
    "invalid_nu_rate",
];

impl ScenarioRow {
    pub fn new(s: &Scenario, r: &ReplicationReport) -> Self {
        let (beta, sigma_eps2, sigma_x2) = model_params(&s.model);
        Self {
            model: s.model.kind().name().to_string(),
            beta,
            sigma_eps2,
            sigma_x2,
            n: s.n,
            level: s.level,
            b: s.b,
            k: s.k,
            seed: s.seed,
            true_mi_bits: r.true_mi_bits,
            true_mi_stderr_bits: r.true_mi_stderr_bits,
            replications: r.replications,
            excluded: r.excluded,
            knn_bias: r.knn_bias,
            knn_rmse: r.knn_rmse,
            bound_bias: r.bound_bias,
            composite_bias: r.composite_bias,
            composite_rmse: r.composite_rmse,
            corr_composite_bias: r.corr_composite_bias,
            corr_composite_rmse: r.corr_composite_rmse,
            coverage: r.coverage,
            exceedance: r.exceedance,
            invalid_nu_rate: r.invalid_nu_rate,
        }
    }

    pub fn report(&self) -> ReplicationReport {
        ReplicationReport {
            true_mi_bits: self.true_mi_bits,
            true_mi_stderr_bits: self.true_mi_stderr_bits,
            replications: self.replications,
            excluded: self.excluded,
            knn_bias: self.knn_bias,
            knn_rmse: self.knn_rmse,
            bound_bias: self.bound_bias,
            composite_bias: self.composite_bias,
            composite_rmse: self.composite_rmse,
            corr_composite_bias: self.corr_composite_bias,
            corr_composite_rmse: self.corr_composite_rmse,
            coverage: self.coverage,
            exceedance: self.exceedance,
            invalid_nu_rate: self.invalid_nu_rate,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudyResults {
    pub scenarios: Vec<ScenarioRow>,
    pub panels: Vec<PanelRow>,
    pub convergence: Vec<ConvergenceRow>,
}

fn write_table<T: Serialize>(path: &Path, rows: &[T], header: Option<&[&str]>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(header.is_none())
        .from_path(path)?;
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `scenarios.csv`, `panels.csv` and `convergence.csv` into `dir`.
/// Empty tables are written with their header only.
pub fn emit_results(results: &StudyResults, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_table(&dir.join("scenarios.csv"), &results.scenarios, Some(&SCENARIO_COLUMNS))?;
    write_table(&dir.join("panels.csv"), &results.panels, Some(&PANEL_COLUMNS))?;
    write_table(
        &dir.join("convergence.csv"),
        &results.convergence,
        Some(&CONVERGENCE_COLUMNS),
    )?;
    Ok(())
}

pub const PANEL_COLUMNS: [&str; 15] = [
    "model",
    "index",
    "beta",
    "sigma_eps2",
    "sigma_x2",
    "n",
    "true_mi_bits",
    "mi_bin",
    "knn",
    "estimate",
    "lower",
    "upper",
    "composite",
    "corr_lower",
    "corr_composite",
];

pub const CONVERGENCE_COLUMNS: [&str; 5] = ["cond_sd", "nu", "mi_bits", "mi_stderr_bits", "entropy_gap_bits"];

fn read_table<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Reads back the tables written by [`emit_results`].
pub fn read_results(dir: &Path) -> Result<StudyResults> {
    Ok(StudyResults {
        scenarios: read_table(&dir.join("scenarios.csv"))?,
        panels: read_table(&dir.join("panels.csv"))?,
        convergence: read_table(&dir.join("convergence.csv"))?,
    })
}

/// Study configuration, read from a flat `key = value` file. `#` starts a
/// comment. List values are comma separated.
///
/// | key | default | meaning |
/// |---|---|---|
/// | `model` | `gaussian` | `gaussian` or `mixture` |
/// | `n` | `25,50` | sample sizes |
/// | `replications` | 500 | datasets per scenario |
/// | `B` | 2000 | bootstrap replicates |
/// | `k` | 3 | k-NN neighbours |
/// | `level` | 0.9 | interval level |
/// | `beta`, `sigma_eps2` | `5` / `1` | fixed-parameter scenarios (cartesian product of the lists) |
/// | `sigma_x2` | 1 | input variance (gaussian) |
/// | `sample_params` | `on` | also run the scatter panels |
/// | `panels` | 60 | sampled parameter vectors |
/// | `truth_draws` | 100000 | Monte Carlo draws for the true MI |
/// | `convergence_sd` | `1,0.3,0.1,0.03,0.01` | empty disables the demo |
/// | `convergence_support` | 2 | support points of the discrete input |
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub model: ModelKind,
    pub n: Vec<usize>,
    pub replications: usize,
    pub b: usize,
    pub k: usize,
    pub level: f64,
    pub beta: Vec<f64>,
    pub sigma_eps2: Vec<f64>,
    pub sigma_x2: f64,
    pub sample_params: bool,
    pub panels: usize,
    pub truth_draws: usize,
    pub convergence_sd: Vec<f64>,
    pub convergence_support: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::BivariateNormal,
            n: vec![25, 50],
            replications: DEFAULT_REPLICATIONS,
            b: 2000,
            k: 3,
            level: 0.9,
            beta: vec![5.0],
            sigma_eps2: vec![1.0],
            sigma_x2: 1.0,
            sample_params: true,
            panels: DEFAULT_PANELS,
            truth_draws: DEFAULT_TRUTH_DRAWS,
            convergence_sd: vec![1.0, 0.3, 0.1, 0.03, 0.01],
            convergence_support: 2,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse().map_err(|e| Error::Parse(format!("{key} = {v}: {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| parse_num(key, t))
        .collect()
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "model" => c.model = value.parse()?,
                "n" => c.n = parse_list(key, value)?,
                "replications" => c.replications = parse_num(key, value)?,
                "B" | "b" => c.b = parse_num(key, value)?,
                "k" => c.k = parse_num(key, value)?,
                "level" => c.level = parse_num(key, value)?,
                "beta" => c.beta = parse_list(key, value)?,
                "sigma_eps2" => c.sigma_eps2 = parse_list(key, value)?,
                "sigma_x2" => c.sigma_x2 = parse_num(key, value)?,
                "sample_params" => {
                    c.sample_params = match value {
                        "on" | "true" | "yes" | "1" => true,
                        "off" | "false" | "no" | "0" => false,
                        _ => return Err(Error::Parse(format!("sample_params = {value}: expected on/off"))),
                    }
                }
                "panels" => c.panels = parse_num(key, value)?,
                "truth_draws" => c.truth_draws = parse_num(key, value)?,
                "convergence_sd" => c.convergence_sd = parse_list(key, value)?,
                "convergence_support" => c.convergence_support = parse_num(key, value)?,
                other => return Err(Error::Parse(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        if c.model == ModelKind::DiscreteInput {
            return Err(Error::Parse("the study model must be gaussian or mixture".into()));
        }
        Ok(c)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Fixed-parameter scenarios: every `(beta, sigma_eps2, n)` combination.
    pub fn scenarios(&self, seed: u64) -> Result<Vec<Scenario>> {
        let mut out = Vec::new();
        let mut idx = 0u64;
        for &beta in &self.beta {
            for &se2 in &self.sigma_eps2 {
                let model = match self.model {
                    ModelKind::BivariateNormal => GenModel::bivariate_normal(beta, se2, self.sigma_x2)?,
                    _ => GenModel::mixture(beta, se2)?,
                };
                for &n in &self.n {
                    out.push(Scenario {
                        model: model.clone(),
                        n,
                        replications: self.replications,
                        level: self.level,
                        b: self.b,
                        k: self.k,
                        seed: derive_seed(seed, idx),
                        truth_draws: self.truth_draws,
                    });
                    idx += 1;
                }
            }
        }
        Ok(out)
    }
}

/// Runs everything a configuration asks for.
pub fn run_study(cfg: &StudyConfig, workers: usize, seed: u64) -> Result<StudyResults> {
    let mut results = StudyResults::default();
    for s in cfg.scenarios(seed)? {
        let report = run_scenario(&s, workers)?;
        results.scenarios.push(ScenarioRow::new(&s, &report));
    }
    if cfg.sample_params && cfg.panels > 0 {
        for (j, &n) in cfg.n.iter().enumerate() {
            let spec = PanelSpec {
                kind: cfg.model,
                count: cfg.panels,
                n,
                level: cfg.level,
                b: cfg.b,
                k: cfg.k,
                seed: derive_seed(seed, u64::MAX - j as u64),
                truth_draws: cfg.truth_draws,
            };
            results.panels.extend(run_panels(&spec, workers)?);
        }
    }
    if !cfg.convergence_sd.is_empty() {
        results.convergence =
            run_convergence_demo(cfg.convergence_support, 2.0, &cfg.convergence_sd, cfg.truth_draws, seed)?;
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(model: GenModel, seed: u64) -> Scenario {
        Scenario {
            replications: 12,
            b: 200,
            truth_draws: 10_000,
            ..Scenario::new(model, 25, seed)
        }
    }

    #[test]
    fn report_invariants() {
        let s = small(GenModel::mixture(1.0, 1.0).unwrap(), 3);
        let (r, outs) = run_scenario_detailed(&s, 1).unwrap();
        for p in [r.coverage, r.exceedance, r.invalid_nu_rate] {
            assert!((0.0..=1.0).contains(&p));
        }
        assert!(r.knn_rmse >= r.knn_bias.abs());
        assert!(r.composite_rmse >= r.composite_bias.abs());
        assert!(r.corr_composite_rmse.unwrap() >= r.corr_composite_bias.unwrap().abs());
        // composite never falls below the k-NN value
        for o in outs.iter().flatten() {
            assert!(o.composite >= o.knn);
            assert!(o.lower <= o.upper);
        }
        assert!(r.composite_bias >= r.knn_bias);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let s = small(GenModel::bivariate_normal(2.0, 1.0, 1.0).unwrap(), 5);
        let a = run_scenario(&s, 1).unwrap();
        let b = run_scenario(&s, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.corr_composite_bias.is_none());
    }

    #[test]
    fn aggregate_by_hand() {
        let truth = TruthResult {
            mi_nats: std::f64::consts::LN_2,
            method: models::TruthMethod::ClosedForm,
            mc_draws: 0,
            mc_stderr: 0.0,
        };
        let o = |knn: f64, lower: f64, upper: f64| {
            Some(ReplicateOutcome {
                knn,
                estimate: 0.5 * (lower + upper),
                lower,
                upper,
                composite: knn.max(lower),
                corr_lower: None,
                corr_composite: None,
            })
        };
        let outs = vec![
            o(0.5, 0.8, 1.2),
            o(1.5, 1.1, 1.3),
            o(0.9, 0.2, 0.9),
            None,
            o(1.0, 0.5, 1.5),
        ];
        let mut ten = outs.clone();
        ten.extend(std::iter::repeat_n(o(1.0, 0.5, 1.5), 5));
        assert!(matches!(
            aggregate(&truth, &outs),
            Err(Error::ScenarioFailed { excluded: 1, total: 5 })
        ));
        let r = aggregate(&truth, &ten).unwrap();
        // errors: knn -0.5, 0.5, -0.1, 0 x6
        assert!((r.knn_bias - (-0.1 / 9.0)).abs() < 1e-15);
        assert!((r.knn_rmse - (0.51f64 / 9.0).sqrt()).abs() < 1e-15);
        assert!((r.coverage - 7.0 / 9.0).abs() < 1e-15);
        assert!((r.exceedance - 8.0 / 9.0).abs() < 1e-15);
        assert!((r.invalid_nu_rate - 0.1).abs() < 1e-15);
        assert_eq!(r.corr_composite_bias, None);
    }

    #[test]
    fn convergence_table() {
        let rows = run_convergence_demo(2, 2.0, &[1.0, 0.3, 0.1], 10_000, 1).unwrap();
        assert!(rows
            .windows(2)
            .all(|w| w[1].nu < w[0].nu && w[1].entropy_gap_bits < w[0].entropy_gap_bits));
        assert!(run_convergence_demo(2, 1.5, &[1.0], 10_000, 1).is_err());
        // large noise: almost no information
        let loud = run_convergence_demo(2, 2.0, &[50.0], 10_000, 1).unwrap();
        assert!(loud[0].mi_bits < 1e-3);
    }

    #[test]
    fn csv_round_trip_and_determinism() {
        let cfg = StudyConfig::parse(
            "model = mixture\nn = 25\nreplications = 10\nB = 200\nbeta = 1\nsigma_eps2 = 0.5\n\
             panels = 3\ntruth_draws = 10000\nconvergence_sd = 1, 0.1\n",
        )
        .unwrap();
        let res = run_study(&cfg, 2, 11).unwrap();
        assert_eq!(res.scenarios.len(), 1);
        assert_eq!(res.panels.len(), 3);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        emit_results(&res, d1.path()).unwrap();
        emit_results(&run_study(&cfg, 1, 11).unwrap(), d2.path()).unwrap();
        for f in ["scenarios.csv", "panels.csv", "convergence.csv"] {
            assert_eq!(
                fs::read(d1.path().join(f)).unwrap(),
                fs::read(d2.path().join(f)).unwrap()
            );
        }
        let back = read_results(d1.path()).unwrap();
        assert_eq!(back, res);
        assert_eq!(back.scenarios[0].report(), res.scenarios[0].report());
        let header = fs::read_to_string(d1.path().join("scenarios.csv")).unwrap();
        assert_eq!(header.lines().next().unwrap(), SCENARIO_COLUMNS.join(","));
    }

    #[test]
    fn config_errors() {
        assert!(StudyConfig::parse("model = discrete").is_err());
        assert!(StudyConfig::parse("nonsense").is_err());
        assert!(StudyConfig::parse("colour = blue").is_err());
        assert!(StudyConfig::parse("sample_params = maybe").is_err());
        let c = StudyConfig::parse("# comment\n\nbeta = 1, 2\nsigma_eps2 = 1,2,3\nn = 25").unwrap();
        assert_eq!(c.scenarios(0).unwrap().len(), 6);
    }
}
