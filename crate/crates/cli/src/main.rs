use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nubound::bounds::{nats_to_bits, Direction};
use nubound::capacity::{bound_at, maximize_capacity_bound, BuiltinChannel, GaussianPseudoInput, SearchBox};
use nubound::estimate::{self, BcaConfig, NuMethod, PipelineConfig, VarianceReference};
use nubound::harness::{emit_results, run_study, StudyConfig};
use nubound::knnmi::{self, KnnConfig};
use nubound::models::{true_mi, GenModel, ModelKind, TruthMethod};
use nubound::rng::stream;
use nubound::transforms::{EmpiricalTable, GaussianizingMap, SourceCdf};
use nubound::JointSample;
use serde_json::json;
use std::fs;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "nubound",
    version,
    about = "Lower bounds on mutual information and channel capacity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    /// Regress the Gaussianized input on the output.
    Input,
    /// Regress the output on the Gaussianized input.
    Output,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Spline,
    Correlation,
}

#[derive(Subcommand)]
enum Command {
    /// k-NN mutual information estimate of a two-column CSV (`x,z`).
    Knnmi {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Standard deviation of jitter added to break ties.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Regression bound with a BCa interval, k-NN estimate and composite.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        /// `gaussian`, `normal:MEAN,SD`, `mixture`, `mixture:MU1,MU2,VAR1,VAR2` or `empirical`.
        #[arg(long = "x-cdf", default_value = "empirical")]
        x_cdf: String,
        #[arg(long, value_enum, default_value_t = DirectionArg::Input)]
        direction: DirectionArg,
        #[arg(long, value_enum, default_value_t = MethodArg::Spline)]
        method: MethodArg,
        /// Response variance used in ν̂: `sample` or a known value.
        #[arg(long, default_value = "sample")]
        reference: String,
        #[arg(long, default_value_t = 0.9)]
        level: f64,
        #[arg(long = "B", default_value_t = 2000)]
        b: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Write the empirical Gaussianizing table to this file.
        #[arg(long)]
        dump_map: Option<PathBuf>,
    },
    /// True mutual information of a reference model.
    Truth {
        /// `gaussian`, `mixture` or `discrete`.
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long = "sigma-eps2", default_value_t = 1.0)]
        sigma_eps2: f64,
        /// Input variance of the bivariate normal model.
        #[arg(long = "sigma-x2", default_value_t = 1.0)]
        sigma_x2: f64,
        /// Support of the discrete model, comma separated (uniform weights).
        #[arg(long, default_value = "0,2")]
        support: String,
        /// Noise standard deviation of the discrete model.
        #[arg(long = "cond-sd", default_value_t = 0.3)]
        cond_sd: f64,
        #[arg(long = "M", default_value_t = 100_000)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replication study driven by a key = value config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Capacity lower bound for a built-in channel, from a key = value config.
    Capacity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn emit(format: Format, fields: &[(&str, serde_json::Value)]) {
    match format {
        Format::Json => {
            let map: serde_json::Map<String, serde_json::Value> =
                fields.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
            println!("{}", serde_json::Value::Object(map));
        }
        Format::Csv => {
            let cell = |v: &serde_json::Value| match v {
                serde_json::Value::Null => String::new(),
                serde_json::Value::String(s) if s.contains(',') || s.contains('"') => {
                    format!("\"{}\"", s.replace('"', "\"\""))
                }
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            println!("{}", fields.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(","));
            println!("{}", fields.iter().map(|(_, v)| cell(v)).collect::<Vec<_>>().join(","));
        }
    }
}

fn bits(nats: Option<f64>) -> serde_json::Value {
    json!(nats.map(nats_to_bits))
}

fn knnmi_cmd(input: PathBuf, k: usize, jitter: f64, seed: u64) -> Result<()> {
    let sample = JointSample::read_csv_path(&input).with_context(|| format!("reading {}", input.display()))?;
    let cfg = KnnConfig {
        k,
        jitter_scale: jitter,
        jitter_seed: seed,
    };
    let nats = knnmi::estimate_mi(&sample, &cfg)?;
    println!(
        "{}",
        json!({"n": sample.len(), "k": k, "nats": nats, "bits": nats_to_bits(nats)})
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn estimate_cmd(
    input: PathBuf,
    x_cdf: &str,
    direction: DirectionArg,
    method: MethodArg,
    reference: &str,
    level: f64,
    b: usize,
    k: usize,
    seed: u64,
    format: Format,
    dump_map: Option<PathBuf>,
) -> Result<()> {
    let sample = JointSample::read_csv_path(&input).with_context(|| format!("reading {}", input.display()))?;
    let map = match x_cdf {
        "empirical" => GaussianizingMap::EmpiricalRank,
        name => GaussianizingMap::known(name.parse::<SourceCdf>()?)?,
    };
    if let Some(path) = dump_map {
        let table = EmpiricalTable::from_sample(&sample.x)?;
        fs::write(&path, table.to_text()).with_context(|| format!("writing {}", path.display()))?;
    }
    let reference = match reference {
        "sample" => VarianceReference::Sample,
        v => VarianceReference::Known(v.parse().with_context(|| format!("--reference {v}"))?),
    };
    let cfg = PipelineConfig::new(map)
        .with_direction(match direction {
            DirectionArg::Input => Direction::InputGivenOutput,
            DirectionArg::Output => Direction::OutputGivenInput,
        })
        .with_method(match method {
            MethodArg::Spline => NuMethod::Spline,
            MethodArg::Correlation => NuMethod::Correlation,
        })
        .with_reference(reference);
    let point = estimate::nu_hat(&sample, &cfg)?;
    let bca = BcaConfig {
        level,
        replicates: b,
        seed,
    };
    let interval = estimate::bca_interval(&sample, &cfg, &bca);
    let knn = knnmi::estimate_mi(
        &sample,
        &KnnConfig {
            k,
            ..Default::default()
        },
    )?;
    let comp = estimate::combine(knn, interval.as_ref().ok());
    let mut warning = comp.warning.clone();
    if let Err(e) = &interval {
        warning = Some(format!("bootstrap failed: {e}"));
    }
    let iv = interval.as_ref().ok();
    emit(
        format,
        &[
            ("n", json!(sample.len())),
            ("nu_hat", json!(point.nu_hat)),
            ("lambda", json!(point.lambda)),
            ("bound_nats", json!(point.bound_nats)),
            ("bound_bits", bits(point.bound_nats)),
            ("level", json!(level)),
            ("B", json!(b)),
            ("lower_nats", json!(iv.map(|i| i.lower))),
            ("upper_nats", json!(iv.map(|i| i.upper))),
            ("lower_bits", bits(iv.map(|i| i.lower))),
            ("upper_bits", bits(iv.map(|i| i.upper))),
            ("valid_replicates", json!(iv.map(|i| i.valid))),
            ("knn_nats", json!(knn)),
            ("knn_bits", json!(nats_to_bits(knn))),
            ("composite_nats", json!(comp.value)),
            ("composite_bits", json!(nats_to_bits(comp.value))),
            ("composite_source", json!(format!("{:?}", comp.source).to_lowercase())),
            ("warning", json!(warning)),
        ],
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn truth_cmd(
    model: &str,
    beta: f64,
    sigma_eps2: f64,
    sigma_x2: f64,
    support: &str,
    cond_sd: f64,
    m: usize,
    seed: u64,
) -> Result<()> {
    let model = match model.parse::<ModelKind>()? {
        ModelKind::BivariateNormal => GenModel::bivariate_normal(beta, sigma_eps2, sigma_x2)?,
        ModelKind::Mixture => GenModel::mixture(beta, sigma_eps2)?,
        ModelKind::DiscreteInput => {
            let pts = support
                .split(',')
                .map(|t| t.trim().parse::<f64>().with_context(|| format!("--support {t}")))
                .collect::<Result<Vec<_>>>()?;
            GenModel::discrete_uniform(pts, cond_sd)?
        }
    };
    let t = true_mi(&model, m, &mut stream(seed, &[]))?;
    let method = match t.method {
        TruthMethod::ClosedForm => "closed_form",
        TruthMethod::MonteCarlo => "monte_carlo",
    };
    println!(
        "{}",
        json!({
            "model": model.kind().name(),
            "mi_nats": t.mi_nats,
            "mi_bits": t.mi_bits(),
            "stderr_nats": t.mc_stderr,
            "stderr_bits": t.stderr_bits(),
            "method": method,
            "draws": t.mc_draws,
        })
    );
    Ok(())
}

fn simulate_cmd(config: PathBuf, out: PathBuf, workers: usize, seed: u64) -> Result<()> {
    if workers == 0 {
        bail!("--workers must be at least 1");
    }
    let cfg = StudyConfig::from_path(&config).with_context(|| format!("reading {}", config.display()))?;
    let results = run_study(&cfg, workers, seed)?;
    emit_results(&results, &out)?;
    eprintln!(
        "wrote {} scenario rows, {} panel rows, {} convergence rows to {}",
        results.scenarios.len(),
        results.panels.len(),
        results.convergence.len(),
        out.display()
    );
    Ok(())
}

/// Capacity config: `channel`, `mean = LO,HI`, `variance = LO,HI`,
/// `budget`, `draws`, and optionally `at = MEAN,VARIANCE` to evaluate a
/// single pseudo-input instead of searching.
struct CapacityConfig {
    channel: BuiltinChannel,
    mean: (f64, f64),
    variance: (f64, f64),
    budget: usize,
    draws: usize,
    at: Option<(f64, f64)>,
}

fn pair(key: &str, v: &str) -> Result<(f64, f64)> {
    let nums: Vec<f64> = v
        .split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("{key} = {v}")))
        .collect::<Result<_>>()?;
    match nums.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => bail!("{key} needs two comma-separated numbers"),
    }
}

fn parse_capacity_config(text: &str) -> Result<CapacityConfig> {
    let mut c = CapacityConfig {
        channel: BuiltinChannel::LinearGaussian { beta: 1.0, sigma2: 1.0 },
        mean: (-1.0, 1.0),
        variance: (0.01, 1.0),
        budget: 500,
        draws: 2000,
        at: None,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected key = value", i + 1);
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "channel" => c.channel = value.parse()?,
            "mean" => c.mean = pair(key, value)?,
            "variance" => c.variance = pair(key, value)?,
            "budget" => c.budget = value.parse().with_context(|| format!("budget = {value}"))?,
            "draws" => c.draws = value.parse().with_context(|| format!("draws = {value}"))?,
            "at" => c.at = Some(pair(key, value)?),
            other => bail!("line {}: unknown key `{other}`", i + 1),
        }
    }
    Ok(c)
}

fn capacity_cmd(config: PathBuf, seed: u64) -> Result<()> {
    let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
    let c = parse_capacity_config(&text)?;
    let channel = c.channel.build()?;
    if let Some((mean, var)) = c.at {
        let b = bound_at(&channel, &GaussianPseudoInput::scalar(mean, var)?, c.draws, seed)?;
        println!(
            "{}",
            json!({
                "mean": mean, "variance": var,
                "bound_nats": b.bound.nats, "bound_bits": b.bound.bits(),
                "stderr_nats": b.stderr, "draws": b.draws, "escaped": b.escaped,
            })
        );
        return Ok(());
    }
    let search = SearchBox::scalar(c.mean, c.variance)?;
    let opt = maximize_capacity_bound(&channel, &search, c.budget, c.draws, seed)?;
    println!(
        "{}",
        json!({
            "mean": opt.pseudo.mean[0], "variance": opt.pseudo.covariance[(0, 0)],
            "bound_nats": opt.bound.bound.nats, "bound_bits": opt.bound.bound.bits(),
            "stderr_nats": opt.bound.stderr, "evaluations": opt.evaluations,
            "budget_exhausted": opt.budget_exhausted,
        })
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Knnmi { input, k, jitter, seed } => knnmi_cmd(input, k, jitter, seed),
        Command::Estimate {
            input,
            x_cdf,
            direction,
            method,
            reference,
            level,
            b,
            k,
            seed,
            format,
            dump_map,
        } => estimate_cmd(
            input, &x_cdf, direction, method, &reference, level, b, k, seed, format, dump_map,
        ),
        Command::Truth {
            model,
            beta,
            sigma_eps2,
            sigma_x2,
            support,
            cond_sd,
            m,
            seed,
        } => truth_cmd(&model, beta, sigma_eps2, sigma_x2, &support, cond_sd, m, seed),
        Command::Simulate {
            config,
            out,
            workers,
            seed,
        } => simulate_cmd(config, out, workers, seed),
        Command::Capacity { config, seed } => capacity_cmd(config, seed),
    }
}
