use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use latentcs::baselines::{lasso_recover, LassoConfig, SparsifyingBasis};
use latentcs::harness::{run_experiment, ExperimentSpec};
use latentcs::measurement::{load_observation, save_observation, sense, ImageShape, MeasurementOp, NoiseModel};
use latentcs::model::{load_weights, save_weights, Activation, RandomNetSpec};
use latentcs::recovery::{recover, theorem_bound_check, RecoveryConfig};
use latentcs::srec::{
    count_net_regions, count_regions, random_hyperplanes, srec_sweep, LatentSampler, SrecSweep,
};
use latentcs::tensor::{Rng, Vector};

#[derive(Parser)]
#[command(name = "latentcs", version, about = "Compressed sensing with generative priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    LassoPixel,
    LassoDct,
    LassoDb1,
}

#[derive(Clone, Copy, ValueEnum)]
enum OpKind {
    Gaussian,
    Identity,
    Superres,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerKind {
    Prior,
    Ball,
}

#[derive(Subcommand)]
enum Command {
    /// Recover a signal by latent-space descent.
    Recover {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        observation: PathBuf,
        /// RecoveryConfig JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover a signal with a Lasso baseline.
    Baseline {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        observation: PathBuf,
        /// LassoConfig JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Image shape `HxW` or `HxWxC`, required by the DCT and DB1 bases.
        #[arg(long, value_parser = parse_shape)]
        shape: Option<ImageShape>,
        /// Haar depth; defaults to the deepest the shape allows.
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the restricted eigenvalue constant over a sweep of m.
    Srec {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,40,80")]
        m_sweep: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        /// Number of matrix seeds per m.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "prior")]
        sampler: SamplerKind,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count the regions of a random hyperplane arrangement, or of the first
    /// layer of a network.
    Regions {
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        c: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, conflicts_with_all = ["k", "c", "seed"])]
        weights: Option<PathBuf>,
    },
    /// Run an experiment spec; exits non-zero if any unit failed.
    Run {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Write an observation file `y = A x* + η`.
    Sense {
        /// Take `x* = G(z*)` from this generator...
        #[arg(long, conflicts_with = "signal")]
        weights: Option<PathBuf>,
        /// ...with `z* ~ N(0, I)` drawn from this seed.
        #[arg(long, default_value_t = 0)]
        latent_seed: u64,
        /// Or read `x*` from a little-endian f32 file.
        #[arg(long)]
        signal: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "gaussian")]
        op: OpKind,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        pool: usize,
        #[arg(long, default_value_t = 2)]
        stride: usize,
        #[arg(long, value_parser = parse_shape)]
        shape: Option<ImageShape>,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a random generator in GENW format.
    RandomNet {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        bias_scale: f64,
        /// Hidden activation: relu, leaky:<slope>, tanh, sigmoid, identity.
        #[arg(long, default_value = "relu", value_parser = parse_activation)]
        activation: Activation,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the shape and Lipschitz bounds of a GENW generator.
    Inspect {
        #[arg(long)]
        weights: PathBuf,
    },
}

fn parse_shape(s: &str) -> Result<ImageShape, String> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [h, w] => Ok(ImageShape::new(h, w, 1)),
        [h, w, c] => Ok(ImageShape::new(h, w, c)),
        _ => Err(format!("expected HxW or HxWxC, got {s:?}")),
    }
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    let a = match s {
        "relu" => Activation::Relu,
        "tanh" => Activation::Tanh,
        "sigmoid" => Activation::Sigmoid,
        "identity" => Activation::Identity,
        other => match other.strip_prefix("leaky:") {
            Some(v) => Activation::LeakyRelu {
                slope: v.parse().map_err(|e| format!("leaky slope {v:?}: {e}"))?,
            },
            None => return Err(format!("unknown activation {other:?}")),
        },
    };
    a.validate().map_err(|e| e.to_string())?;
    Ok(a)
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_f32(path: &Path) -> Result<Vector> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() % 4 != 0 {
        bail!("{} is not a whole number of f32 values", path.display());
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

#[derive(Serialize)]
struct BaselineOutput {
    method: &'static str,
    x_hat: Vector,
    w_hat: Vector,
    objective: f64,
    measurement_error: f64,
    reconstruction_error: Option<f64>,
    iterations: usize,
    converged: bool,
    warning: Option<String>,
}

#[derive(Serialize)]
struct SrecOutput {
    k: usize,
    n: usize,
    sampler: LatentSampler,
    /// `gamma_hat[s][j]` for matrix seed `s` and `m_sweep[j]`.
    gamma_hat: Vec<Vec<f64>>,
    mean_gamma_hat: Vec<f64>,
    norm_expansion_fraction: Vec<Vec<f64>>,
    sweep: SrecSweep,
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Recover {
            weights,
            observation,
            config,
            out,
        } => {
            let g = load_weights(&weights)?;
            let obs = load_observation(&observation)?;
            let cfg: RecoveryConfig = read_json(config.as_deref())?;
            let result = recover(&g, &obs, &cfg)?;
            let check = obs
                .truth
                .as_ref()
                .map(|_| theorem_bound_check(&result, &obs, 1.0))
                .transpose()?;
            let mut value = serde_json::to_value(&result)?;
            value["theorem_check"] = serde_json::to_value(check)?;
            write_json(&out, &value)?;
            println!(
                "restart {} of {}: measurement error {:.6e}",
                result.best_restart,
                result.per_restart.len(),
                result.measurement_error
            );
        }
        Command::Baseline {
            method,
            observation,
            config,
            shape,
            levels,
            out,
        } => {
            let obs = load_observation(&observation)?;
            let cfg: LassoConfig = read_json(config.as_deref())?;
            let need_shape = || shape.context("--shape is required for the DCT and DB1 bases");
            let (name, basis) = match method {
                Method::LassoPixel => ("lasso-pixel", SparsifyingBasis::Pixel),
                Method::LassoDct => ("lasso-dct", SparsifyingBasis::Dct2d { shape: need_shape()? }),
                Method::LassoDb1 => ("lasso-db1", SparsifyingBasis::Db1 { shape: need_shape()?, levels }),
            };
            let r = lasso_recover(&obs.op, &obs.y, basis, &cfg)?;
            if let Some(w) = &r.warning {
                eprintln!("warning: {w}");
            }
            let reconstruction_error = obs.truth.as_ref().map(|t| r.x_hat.sub(t).norm2_squared());
            write_json(
                &out,
                &BaselineOutput {
                    method: name,
                    x_hat: r.x_hat,
                    w_hat: r.w_hat,
                    objective: r.objective,
                    measurement_error: r.measurement_error,
                    reconstruction_error,
                    iterations: r.iterations,
                    converged: r.converged,
                    warning: r.warning,
                },
            )?;
            println!("{name}: objective {:.6e} after {} iterations", r.objective, r.iterations);
        }
        Command::Srec {
            weights,
            m_sweep,
            pairs,
            seeds,
            seed,
            sampler,
            radius,
            out,
        } => {
            let g = load_weights(&weights)?;
            let sampler = match sampler {
                SamplerKind::Prior => LatentSampler::Prior,
                SamplerKind::Ball => LatentSampler::Ball { radius },
            };
            let sweep = srec_sweep(&g, sampler, &m_sweep, pairs, seeds, seed)?;
            let gamma_hat: Vec<Vec<f64>> = sweep
                .reports
                .iter()
                .map(|row| row.iter().map(|r| r.gamma_hat).collect())
                .collect();
            let mean_gamma_hat = (0..m_sweep.len())
                .map(|j| gamma_hat.iter().map(|row| row[j]).sum::<f64>() / seeds as f64)
                .collect::<Vec<_>>();
            let norm_expansion_fraction = sweep
                .reports
                .iter()
                .map(|row| row.iter().map(|r| r.norm_expansion_fraction).collect())
                .collect();
            for (m, gm) in m_sweep.iter().zip(&mean_gamma_hat) {
                println!("m = {m:>5}: mean gamma_hat {gm:.4}");
            }
            println!("non-decreasing in {:.1}% of adjacent steps", 100.0 * sweep.monotone_fraction);
            write_json(
                &out,
                &SrecOutput {
                    k: g.k(),
                    n: g.n(),
                    sampler,
                    gamma_hat,
                    mean_gamma_hat,
                    norm_expansion_fraction,
                    sweep,
                },
            )?;
        }
        Command::Regions { k, c, seed, weights } => {
            let r = match weights {
                Some(w) => count_net_regions(&load_weights(&w)?)?,
                None => count_regions(&random_hyperplanes(k, c, seed), k)?,
            };
            println!("{}", serde_json::to_string(&r)?);
        }
        Command::Run { spec } => {
            let spec = ExperimentSpec::load(&spec)?;
            let result = run_experiment(&spec)?;
            println!(
                "{} units, {} failed; outputs in {}",
                result.raw.len(),
                result.failures(),
                result.output_dir.display()
            );
            for r in result.raw.iter().filter(|r| !r.ok()) {
                eprintln!("task {} {} m={} trial {}: {}", r.task, r.algorithm, r.m, r.trial, r.status);
            }
            if !result.all_ran() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Sense {
            weights,
            latent_seed,
            signal,
            op,
            m,
            seed,
            pool,
            stride,
            shape,
            noise,
            noise_seed,
            out,
        } => {
            let x = match (weights, signal) {
                (Some(w), None) => {
                    let g = load_weights(&w)?;
                    g.forward(&Rng::new(latent_seed).normal_vector(g.k()))?
                }
                (None, Some(s)) => read_f32(&s)?,
                _ => bail!("give exactly one of --weights or --signal"),
            };
            let n = x.len();
            let op = match op {
                OpKind::Gaussian => MeasurementOp::gaussian(m.context("--m is required for a gaussian operator")?, n, seed)?,
                OpKind::Identity => MeasurementOp::identity(n),
                OpKind::Superres => MeasurementOp::superres(
                    pool,
                    pool,
                    stride,
                    shape.context("--shape is required for a superres operator")?,
                )?,
            };
            let obs = sense(&op, &x, NoiseModel::new(noise, noise_seed)?)?;
            save_observation(&obs, &out)?;
            println!("wrote {} measurements of a {}-dimensional signal", op.m(), n);
        }
        Command::RandomNet {
            k,
            n,
            depth,
            width,
            seed,
            bias_scale,
            activation,
            out,
        } => {
            let mut spec = RandomNetSpec::relu(k, n, depth, width, seed);
            spec.activation = activation;
            spec.bias_scale = bias_scale;
            let g = spec.build()?;
            save_weights(&g, &out)?;
            println!("wrote {} layers, {} -> {}", g.depth(), g.k(), g.n());
        }
        Command::Inspect { weights } => {
            let g = load_weights(&weights)?;
            let widths: Vec<usize> = std::iter::once(g.k()).chain(g.layers().iter().map(|l| l.out_dim())).collect();
            let acts: Vec<&str> = g.layers().iter().map(|l| l.activation.name()).collect();
            let value = serde_json::json!({
                "widths": widths,
                "activations": acts,
                "piecewise_linear": g.is_piecewise_linear(),
                "lipschitz": g.lipschitz_bound(),
            });
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
