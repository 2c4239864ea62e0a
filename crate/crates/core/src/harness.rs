//! Declarative experiment runner.
//!
//! An [`ExperimentSpec`] names a generator, a signal source, measurement
//! tasks and recovery algorithms. [`run_experiment`] evaluates every
//! `(task, algorithm, m, noise level, trial)` unit, in parallel, and writes
//!
//! * `raw.csv`: one row per unit, in canonical order;
//! * `agg.csv`: mean and 95% interval per `(task, algorithm, m, noise)`;
//! * `timing.csv`: wall time per unit (kept out of `raw.csv` so that file is
//!   byte-identical across reruns);
//! * `plots/*.svg`: error versus `m` and error versus noise level.
//!
//! Every unit for the same `(task, m, trial)` sees the same operator, and the
//! same noise direction at every noise level, so algorithms and levels are
//! compared on paired draws.

pub mod plot;
pub mod stats;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{lasso_recover, LassoConfig, SparsifyingBasis};
use crate::error::{Error, Result};
use crate::measurement::{sense, ImageShape, MeasurementOp, NoiseModel};
use crate::model::{load_weights, GeneratorNet, RandomNetSpec};
use crate::recovery::{recover, RecoveryConfig};
use crate::tensor::{derive_seed, norm2, Rng, Vector};

pub use stats::{spearman, summarize, Summary};

/// Environment variable holding the worker count; unset or 0 means one
/// worker per core.
pub const WORKERS_ENV: &str = "LATENTCS_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorSource {
    /// A GENW file, relative paths resolved against the spec's directory.
    Path(PathBuf),
    RandomNet(RandomNetSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageLayout {
    /// Raw little-endian `f32`, `n` values per file, channel-major.
    #[default]
    F32,
    /// 8-bit PNG, converted to channel-major floats.
    Png,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelRange {
    /// `[0, 1]`
    #[default]
    Unit,
    /// `[−1, 1]`
    Signed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// `x* = G(z*)` with `z* ~ N(0, I)`, so the representation error is 0.
    InRange { count: usize, seed: u64 },
    /// Files in a directory, sorted by name then shuffled with the
    /// experiment seed; the first `trials` are used.
    ImageDir {
        path: PathBuf,
        #[serde(default)]
        layout: ImageLayout,
        #[serde(default)]
        range: PixelRange,
    },
}

fn zero_noise() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Gaussian {
        m_list: Vec<usize>,
        #[serde(default = "zero_noise")]
        noise_levels: Vec<f64>,
    },
    /// Block averaging of `pool × pool` windows; needs `image_shape`.
    Superres {
        pool: usize,
        stride: usize,
        #[serde(default = "zero_noise")]
        noise_levels: Vec<f64>,
    },
    Identity {
        #[serde(default = "zero_noise")]
        noise_levels: Vec<f64>,
    },
}

impl TaskSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskSpec::Gaussian { .. } => "gaussian",
            TaskSpec::Superres { .. } => "superres",
            TaskSpec::Identity { .. } => "identity",
        }
    }

    fn noise_levels(&self) -> &[f64] {
        match self {
            TaskSpec::Gaussian { noise_levels, .. }
            | TaskSpec::Superres { noise_levels, .. }
            | TaskSpec::Identity { noise_levels } => noise_levels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LassoBasis {
    Pixel,
    Dct,
    Db1 {
        #[serde(default)]
        levels: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlgorithmSpec {
    Generative {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        config: RecoveryConfig,
    },
    Lasso {
        #[serde(default)]
        label: Option<String>,
        basis: LassoBasis,
        #[serde(default)]
        config: LassoConfig,
    },
}

impl AlgorithmSpec {
    pub fn label(&self) -> String {
        match self {
            AlgorithmSpec::Generative { label, .. } => label.clone().unwrap_or_else(|| "generative".into()),
            AlgorithmSpec::Lasso { label, basis, .. } => label.clone().unwrap_or_else(|| {
                match basis {
                    LassoBasis::Pixel => "lasso-pixel",
                    LassoBasis::Dct => "lasso-dct",
                    LassoBasis::Db1 { .. } => "lasso-db1",
                }
                .into()
            }),
        }
    }
}

fn default_trials() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub generator: GeneratorSource,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub image_shape: Option<ImageShape>,
    pub tasks: Vec<TaskSpec>,
    pub algorithms: Vec<AlgorithmSpec>,
    /// Signals per sweep point.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Loads a spec and resolves its relative paths against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let GeneratorSource::Path(p) = &mut spec.generator {
            resolve(p);
        }
        if let DatasetSpec::ImageDir { path, .. } = &mut spec.dataset {
            resolve(path);
        }
        resolve(&mut spec.output_dir);
        Ok(spec)
    }

    /// Structural checks that do not need any input file.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be ≥ 1".into()));
        }
        if self.tasks.is_empty() || self.algorithms.is_empty() {
            return Err(Error::InvalidParameter("spec needs at least one task and one algorithm".into()));
        }
        if let DatasetSpec::InRange { count, .. } = self.dataset {
            if count < self.trials {
                return Err(Error::InvalidParameter(format!(
                    "in-range dataset has {count} signals but {} trials were requested",
                    self.trials
                )));
            }
        }
        for task in &self.tasks {
            if task.noise_levels().is_empty() {
                return Err(Error::InvalidParameter(format!("{} task has no noise levels", task.kind())));
            }
            for &l in task.noise_levels() {
                NoiseModel::new(l, 0)?;
            }
            if let TaskSpec::Gaussian { m_list, .. } = task {
                if m_list.is_empty() || m_list.contains(&0) {
                    return Err(Error::InvalidParameter("gaussian m_list must be non-empty and positive".into()));
                }
            }
        }
        for alg in &self.algorithms {
            match alg {
                AlgorithmSpec::Generative { config, .. } => config.validate()?,
                AlgorithmSpec::Lasso { config, .. } => config.validate()?,
            }
        }
        Ok(())
    }
}

/// One evaluated unit. `status` is `"ok"` or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub task_index: usize,
    pub task: String,
    pub algorithm: String,
    pub m: usize,
    pub noise_level: f64,
    pub trial: usize,
    pub signal: String,
    /// `‖x̂ − x*‖² / n`
    pub per_pixel_error: Option<f64>,
    /// `‖A x̂ − y‖²`
    pub measurement_error: Option<f64>,
    /// `‖A x̂ − y‖`
    pub eps_hat: Option<f64>,
    pub noise_norm: Option<f64>,
    /// `‖x̂ − x*‖`
    pub error_norm: Option<f64>,
    pub status: String,
}

impl RawRecord {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub task_index: usize,
    pub task: String,
    pub algorithm: String,
    pub m: usize,
    pub noise_level: f64,
    pub trials: usize,
    pub failures: usize,
    pub mean_per_pixel_error: Option<f64>,
    pub std_per_pixel_error: Option<f64>,
    /// `mean ± 1.96·std/√trials`
    pub ci95_low: Option<f64>,
    pub ci95_high: Option<f64>,
    pub mean_measurement_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub task_index: usize,
    pub algorithm: String,
    pub m: usize,
    pub noise_level: f64,
    pub trial: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub raw: Vec<RawRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub timings: Vec<TimingRecord>,
    pub output_dir: PathBuf,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.raw.iter().filter(|r| !r.ok()).count()
    }

    pub fn all_ran(&self) -> bool {
        self.failures() == 0
    }

    /// Aggregates for one task and algorithm, sorted by `(m, noise)`.
    pub fn series(&self, task_index: usize, algorithm: &str) -> Vec<&AggregateRow> {
        self.aggregates
            .iter()
            .filter(|a| a.task_index == task_index && a.algorithm == algorithm)
            .collect()
    }
}

struct Signal {
    id: String,
    x: Vector,
}

fn build_generator(source: &GeneratorSource) -> Result<GeneratorNet> {
    match source {
        GeneratorSource::Path(p) => load_weights(p),
        GeneratorSource::RandomNet(spec) => spec.build(),
    }
}

fn read_image(path: &Path, layout: ImageLayout, range: PixelRange, shape: Option<ImageShape>) -> Result<Vector> {
    let mut x = match layout {
        ImageLayout::F32 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            if bytes.len() % 4 != 0 {
                return Err(Error::Image {
                    path: path.to_path_buf(),
                    message: format!("{} bytes is not a whole number of f32 values", bytes.len()),
                });
            }
            return Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect());
        }
        ImageLayout::Png => {
            let img = image::open(path).map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            let channels = shape.map(|s| s.channels).unwrap_or(1);
            let (buf, c) = match channels {
                1 => (img.into_luma8().into_raw(), 1),
                3 => (img.into_rgb8().into_raw(), 3),
                other => {
                    return Err(Error::Image {
                        path: path.to_path_buf(),
                        message: format!("{other} channels not supported for PNG"),
                    })
                }
            };
            if let Some(s) = shape {
                if (s.height, s.width) != (h, w) {
                    return Err(Error::Image {
                        path: path.to_path_buf(),
                        message: format!("image is {h}x{w}, expected {}x{}", s.height, s.width),
                    });
                }
            }
            // Interleaved HWC bytes to channel-major floats in [0, 1].
            let mut x = vec![0.0; h * w * c];
            for row in 0..h {
                for col in 0..w {
                    for ch in 0..c {
                        x[ch * h * w + row * w + col] = buf[(row * w + col) * c + ch] as f64 / 255.0;
                    }
                }
            }
            Vector::new(x)
        }
    };
    if range == PixelRange::Signed {
        for v in x.iter_mut() {
            *v = 2.0 * *v - 1.0;
        }
    }
    Ok(x)
}

fn load_signals(spec: &ExperimentSpec, g: &std::result::Result<GeneratorNet, String>) -> Result<Vec<Signal>> {
    match &spec.dataset {
        DatasetSpec::InRange { seed, .. } => {
            let g = g.as_ref().map_err(|e| Error::InvalidParameter(format!("in-range data needs the generator: {e}")))?;
            (0..spec.trials)
                .map(|i| {
                    let z = Rng::new(derive_seed(*seed, i as u64)).normal_vector(g.k());
                    Ok(Signal {
                        id: format!("in_range:{i}"),
                        x: g.forward(&z)?,
                    })
                })
                .collect()
        }
        DatasetSpec::ImageDir { path, layout, range } => {
            let ext = match layout {
                ImageLayout::F32 => "f32",
                ImageLayout::Png => "png",
            };
            let mut files: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case(ext)))
                .collect();
            files.sort();
            Rng::new(derive_seed(spec.seed, 0xda7a)).shuffle(&mut files);
            if files.len() < spec.trials {
                return Err(Error::InvalidParameter(format!(
                    "{} has {} .{ext} files, fewer than {} trials",
                    path.display(),
                    files.len(),
                    spec.trials
                )));
            }
            files
                .iter()
                .take(spec.trials)
                .map(|f| {
                    Ok(Signal {
                        id: f.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                        x: read_image(f, *layout, *range, spec.image_shape)?,
                    })
                })
                .collect()
        }
    }
}

struct Unit {
    task_index: usize,
    m_slot: usize,
    noise_index: usize,
    trial: usize,
    algorithm_index: usize,
}

/// Operator for a task at a given `m`, seeded per `(task, m, trial)`.
fn task_operator(task: &TaskSpec, m_value: usize, n: usize, shape: Option<ImageShape>, seed: u64) -> Result<MeasurementOp> {
    match task {
        TaskSpec::Gaussian { .. } => {
            if m_value > n {
                return Err(Error::InvalidParameter(format!("m = {m_value} exceeds n = {n}")));
            }
            MeasurementOp::gaussian(m_value, n, seed)
        }
        TaskSpec::Superres { pool, stride, .. } => {
            let shape = shape.ok_or_else(|| Error::InvalidParameter("superres needs image_shape".into()))?;
            if shape.len() != n {
                return Err(Error::dims("image_shape size", n, shape.len()));
            }
            MeasurementOp::superres(*pool, *pool, *stride, shape)
        }
        TaskSpec::Identity { .. } => Ok(MeasurementOp::identity(n)),
    }
}

/// Number of measurements a task produces; for `superres` and `identity`
/// this needs the signal size.
fn task_m_values(task: &TaskSpec, n: Option<usize>, shape: Option<ImageShape>) -> Vec<Option<usize>> {
    match task {
        TaskSpec::Gaussian { m_list, .. } => m_list.iter().map(|&m| Some(m)).collect(),
        TaskSpec::Identity { .. } => vec![n],
        TaskSpec::Superres { pool, stride, .. } => vec![shape.and_then(|s| {
            if *stride == 0 || s.height < *pool || s.width < *pool {
                None
            } else {
                Some(((s.height - pool) / stride + 1) * ((s.width - pool) / stride + 1) * s.channels)
            }
        })],
    }
}

struct Outcome {
    record: RawRecord,
    seconds: f64,
}

struct Shared<'a> {
    spec: &'a ExperimentSpec,
    generator: std::result::Result<GeneratorNet, String>,
    signals: std::result::Result<Vec<Signal>, String>,
    m_values: Vec<Vec<Option<usize>>>,
}

fn run_unit(shared: &Shared, unit: &Unit) -> Outcome {
    let spec = shared.spec;
    let task = &spec.tasks[unit.task_index];
    let alg = &spec.algorithms[unit.algorithm_index];
    let noise_level = task.noise_levels()[unit.noise_index];
    let m_value = shared.m_values[unit.task_index][unit.m_slot];
    let start = Instant::now();
    let mut record = RawRecord {
        task_index: unit.task_index,
        task: task.kind().into(),
        algorithm: alg.label(),
        m: m_value.unwrap_or(0),
        noise_level,
        trial: unit.trial,
        signal: String::new(),
        per_pixel_error: None,
        measurement_error: None,
        eps_hat: None,
        noise_norm: None,
        error_norm: None,
        status: "ok".into(),
    };
    let result = (|| -> std::result::Result<(), String> {
        let signals = shared.signals.as_ref().map_err(Clone::clone)?;
        let signal = &signals[unit.trial];
        record.signal = signal.id.clone();
        let n = signal.x.len();
        let m_value = m_value.ok_or("could not determine the number of measurements")?;
        let unit_seed = derive_seed(
            derive_seed(derive_seed(spec.seed, 1 + unit.task_index as u64), m_value as u64),
            unit.trial as u64,
        );
        let op = task_operator(task, m_value, n, spec.image_shape, derive_seed(unit_seed, 0)).map_err(|e| e.to_string())?;
        // Same noise direction at every level of this (task, m, trial).
        let noise = NoiseModel::new(noise_level, derive_seed(unit_seed, 1)).map_err(|e| e.to_string())?;
        let obs = sense(&op, &signal.x, noise).map_err(|e| e.to_string())?;
        let x_hat = match alg {
            AlgorithmSpec::Generative { config, .. } => {
                let g = shared.generator.as_ref().map_err(Clone::clone)?;
                let mut cfg = config.clone();
                cfg.seed = derive_seed(derive_seed(config.seed, spec.seed), unit.trial as u64);
                recover(g, &obs, &cfg).map_err(|e| e.to_string())?.x_hat
            }
            AlgorithmSpec::Lasso { basis, config, .. } => {
                let basis = match (basis, spec.image_shape) {
                    (LassoBasis::Pixel, _) => SparsifyingBasis::Pixel,
                    (LassoBasis::Dct, Some(shape)) => SparsifyingBasis::Dct2d { shape },
                    (LassoBasis::Db1 { levels }, Some(shape)) => SparsifyingBasis::Db1 { shape, levels: *levels },
                    _ => return Err("DCT and DB1 bases need image_shape".into()),
                };
                lasso_recover(&op, &obs.y, basis, config).map_err(|e| e.to_string())?.x_hat
            }
        };
        let residual = op.apply(&x_hat).map_err(|e| e.to_string())?.sub(&obs.y);
        let err = x_hat.sub(&signal.x);
        let me = residual.norm2_squared();
        record.per_pixel_error = Some(err.norm2_squared() / n as f64);
        record.error_norm = Some(err.norm2());
        record.measurement_error = Some(me);
        record.eps_hat = Some(me.sqrt());
        record.noise_norm = Some(norm2(&obs.noise_vector()));
        Ok(())
    })();
    if let Err(msg) = result {
        record.status = format!("error: {msg}");
    }
    Outcome {
        record,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn aggregate(raw: &[RawRecord]) -> Vec<AggregateRow> {
    // Key order matches the canonical record order.
    let mut groups: BTreeMap<(usize, usize, usize, usize), Vec<&RawRecord>> = BTreeMap::new();
    let mut alg_order: Vec<String> = Vec::new();
    let mut noise_order: Vec<u64> = Vec::new();
    for r in raw {
        let a = alg_order.iter().position(|x| *x == r.algorithm).unwrap_or_else(|| {
            alg_order.push(r.algorithm.clone());
            alg_order.len() - 1
        });
        let bits = r.noise_level.to_bits();
        let nz = noise_order.iter().position(|&x| x == bits).unwrap_or_else(|| {
            noise_order.push(bits);
            noise_order.len() - 1
        });
        groups.entry((r.task_index, a, r.m, nz)).or_default().push(r);
    }
    let mut rows: Vec<AggregateRow> = groups
        .into_values()
        .map(|rs| {
            let first = rs[0];
            let errs: Vec<f64> = rs.iter().filter_map(|r| r.per_pixel_error).collect();
            let mes: Vec<f64> = rs.iter().filter_map(|r| r.measurement_error).collect();
            let s = summarize(&errs);
            AggregateRow {
                task_index: first.task_index,
                task: first.task.clone(),
                algorithm: first.algorithm.clone(),
                m: first.m,
                noise_level: first.noise_level,
                trials: rs.len(),
                failures: rs.iter().filter(|r| !r.ok()).count(),
                mean_per_pixel_error: s.map(|s| s.mean),
                std_per_pixel_error: s.map(|s| s.std),
                ci95_low: s.map(|s| s.mean - s.ci95),
                ci95_high: s.map(|s| s.mean + s.ci95),
                mean_measurement_error: summarize(&mes).map(|s| s.mean),
            }
        })
        .collect();
    // Within a (task, algorithm) block, order by (m, noise level) numerically.
    rows.sort_by(|a, b| {
        (a.task_index, alg_order.iter().position(|x| *x == a.algorithm), a.m)
            .cmp(&(b.task_index, alg_order.iter().position(|x| *x == b.algorithm), b.m))
            .then(a.noise_level.total_cmp(&b.noise_level))
    });
    rows
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn level_tag(v: f64) -> String {
    format!("{v}").replace('.', "p").replace('-', "m")
}

fn write_plots(dir: &Path, spec: &ExperimentSpec, aggregates: &[AggregateRow]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let labels: Vec<String> = spec.algorithms.iter().map(AlgorithmSpec::label).collect();
    for (ti, task) in spec.tasks.iter().enumerate() {
        let rows: Vec<&AggregateRow> = aggregates
            .iter()
            .filter(|a| a.task_index == ti && a.mean_per_pixel_error.is_some())
            .collect();
        let ms: Vec<usize> = {
            let mut v: Vec<usize> = rows.iter().map(|r| r.m).collect();
            v.dedup();
            v.sort_unstable();
            v.dedup();
            v
        };
        let levels: Vec<f64> = {
            let mut v: Vec<f64> = task.noise_levels().to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let point = |r: &AggregateRow, x: f64| {
            let mean = r.mean_per_pixel_error.unwrap();
            (x, mean, r.ci95_high.unwrap() - mean)
        };
        if ms.len() > 1 {
            for &level in &levels {
                let series = labels
                    .iter()
                    .map(|lab| plot::Series {
                        label: lab.clone(),
                        points: rows
                            .iter()
                            .filter(|r| r.algorithm == *lab && r.noise_level == level)
                            .map(|r| point(r, r.m as f64))
                            .collect(),
                    })
                    .collect();
                let chart = plot::Chart {
                    title: format!("{}: {} task, noise {level}", spec.name, task.kind()),
                    x_label: "measurements m".into(),
                    y_label: "per-pixel error".into(),
                    series,
                };
                let path = dir.join(format!("task{ti}_{}_error_vs_m_noise{}.svg", task.kind(), level_tag(level)));
                fs::write(&path, plot::render_svg(&chart)).map_err(|e| Error::io(&path, e))?;
            }
        }
        if levels.len() > 1 {
            for &m in &ms {
                let series = labels
                    .iter()
                    .map(|lab| plot::Series {
                        label: lab.clone(),
                        points: rows
                            .iter()
                            .filter(|r| r.algorithm == *lab && r.m == m)
                            .map(|r| point(r, r.noise_level))
                            .collect(),
                    })
                    .collect();
                let chart = plot::Chart {
                    title: format!("{}: {} task, m = {m}", spec.name, task.kind()),
                    x_label: "noise level".into(),
                    y_label: "per-pixel error".into(),
                    series,
                };
                let path = dir.join(format!("task{ti}_{}_error_vs_noise_m{m}.svg", task.kind()));
                fs::write(&path, plot::render_svg(&chart)).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    Ok(())
}

/// Worker count from [`WORKERS_ENV`]; `None` means the rayon default.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs every unit of `spec` and writes the CSV and SVG outputs. Failing
/// units are recorded with their error and the run continues; an `Err` is
/// returned only for an invalid spec or unwritable outputs.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    let generator = build_generator(&spec.generator).map_err(|e| e.to_string());
    let signals = load_signals(spec, &generator).map_err(|e| e.to_string());
    let n = match (&signals, &generator) {
        (Ok(s), _) => s.first().map(|s| s.x.len()),
        (Err(_), Ok(g)) => Some(g.n()),
        _ => None,
    };
    let m_values: Vec<Vec<Option<usize>>> = spec
        .tasks
        .iter()
        .map(|t| task_m_values(t, n, spec.image_shape))
        .collect();

    let mut units = Vec::new();
    for (task_index, task) in spec.tasks.iter().enumerate() {
        for algorithm_index in 0..spec.algorithms.len() {
            for m_slot in 0..m_values[task_index].len() {
                for noise_index in 0..task.noise_levels().len() {
                    for trial in 0..spec.trials {
                        units.push(Unit {
                            task_index,
                            m_slot,
                            noise_index,
                            trial,
                            algorithm_index,
                        });
                    }
                }
            }
        }
    }
    let shared = Shared {
        spec,
        generator,
        signals,
        m_values,
    };
    let work = || units.par_iter().map(|u| run_unit(&shared, u)).collect::<Vec<_>>();
    let outcomes = match workers_from_env() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?
            .install(work),
        None => work(),
    };

    // `units` is already in canonical (task, algorithm, m, noise, trial)
    // order and the parallel collect preserves it.
    let timings = outcomes
        .iter()
        .map(|o| TimingRecord {
            task_index: o.record.task_index,
            algorithm: o.record.algorithm.clone(),
            m: o.record.m,
            noise_level: o.record.noise_level,
            trial: o.record.trial,
            wall_seconds: o.seconds,
        })
        .collect::<Vec<_>>();
    let raw: Vec<RawRecord> = outcomes.into_iter().map(|o| o.record).collect();
    let aggregates = aggregate(&raw);

    let out = &spec.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_csv(&out.join("raw.csv"), &raw)?;
    write_csv(&out.join("agg.csv"), &aggregates)?;
    write_csv(&out.join("timing.csv"), &timings)?;
    write_plots(&out.join("plots"), spec, &aggregates)?;
    Ok(SweepResult {
        raw,
        aggregates,
        timings,
        output_dir: out.clone(),
    })
}

/// Where a baseline overtakes the generative method, and how flat the
/// generative error curve becomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport {
    pub generative: String,
    pub baseline: String,
    pub noise_level: f64,
    /// Smallest `m` at which the baseline's mean error is below the
    /// generative method's.
    pub crossover_m: Option<usize>,
    /// First `m` from which every later log-log slope of the generative
    /// error exceeds `-PLATEAU_SLOPE`, ignoring points at or below the floor.
    pub plateau_onset_m: Option<usize>,
    /// Least-squares log-log slope of the generative error from the onset on.
    pub plateau_slope: Option<f64>,
    pub summary: String,
}

/// Log-log slope above which the error curve counts as flat.
pub const PLATEAU_SLOPE: f64 = 0.1;

fn mean_by_m(result: &SweepResult, task_index: usize, algorithm: &str, noise_level: f64) -> Vec<(usize, f64)> {
    result
        .series(task_index, algorithm)
        .into_iter()
        .filter(|a| a.noise_level == noise_level)
        .filter_map(|a| a.mean_per_pixel_error.map(|e| (a.m, e)))
        .collect()
}

fn loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx)
}

/// Compares a generative curve against a baseline curve on one task.
/// Points with generative error at or below `floor` are treated as solved
/// rather than saturated.
pub fn compare_saturation(
    result: &SweepResult,
    task_index: usize,
    generative: &str,
    baseline: &str,
    noise_level: f64,
    floor: f64,
) -> SaturationReport {
    let gen = mean_by_m(result, task_index, generative, noise_level);
    let base = mean_by_m(result, task_index, baseline, noise_level);
    let crossover_m = gen
        .iter()
        .find(|(m, ge)| base.iter().any(|(bm, be)| bm == m && be < ge))
        .map(|(m, _)| *m);

    let above: Vec<(usize, f64)> = gen.iter().copied().filter(|&(_, e)| e > floor).collect();
    let slopes: Vec<f64> = above
        .windows(2)
        .map(|w| (w[1].1.ln() - w[0].1.ln()) / ((w[1].0 as f64).ln() - (w[0].0 as f64).ln()))
        .collect();
    let onset_index = (0..slopes.len()).find(|&i| slopes[i..].iter().all(|&s| s > -PLATEAU_SLOPE));
    let plateau_onset_m = onset_index.map(|i| above[i].0);
    let plateau_slope = onset_index.and_then(|i| loglog_slope(&above[i..]));

    let summary = match (crossover_m, plateau_onset_m) {
        (None, None) => "no crossover; no saturation above the floor".to_string(),
        (None, Some(m)) => format!("no crossover; generative error plateaus from m = {m}"),
        (Some(c), None) => format!("{baseline} overtakes {generative} at m = {c}"),
        (Some(c), Some(m)) => format!("{baseline} overtakes {generative} at m = {c}; generative error plateaus from m = {m}"),
    };
    SaturationReport {
        generative: generative.into(),
        baseline: baseline.into(),
        noise_level,
        crossover_m,
        plateau_onset_m,
        plateau_slope,
        summary,
    }
}
