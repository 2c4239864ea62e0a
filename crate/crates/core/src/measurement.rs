//! Measurement operators and the observation process `y = A x* + η`.
//!
//! Image vectors are laid out channel-major, row-major within a channel:
//! `index = ch·H·W + row·W + col`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gaussian_matrix, Matrix, Rng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    #[serde(default = "one")]
    pub channels: usize,
}

fn one() -> usize {
    1
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        ImageShape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ch: usize, row: usize, col: usize) -> usize {
        ch * self.height * self.width + row * self.width + col
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasurementKind {
    Identity,
    Gaussian { seed: u64 },
    SuperRes {
        pool_h: usize,
        pool_w: usize,
        stride: usize,
        shape: ImageShape,
    },
}

/// A materialized `m × n` measurement matrix and how it was built.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementOp {
    kind: MeasurementKind,
    matrix: Matrix,
}

impl MeasurementOp {
    pub fn identity(n: usize) -> Self {
        MeasurementOp {
            kind: MeasurementKind::Identity,
            matrix: Matrix::identity(n),
        }
    }

    /// IID `N(0, 1/m)` entries drawn from `Rng::new(seed)`.
    pub fn gaussian(m: usize, n: usize, seed: u64) -> Result<Self> {
        let variance = 1.0 / m.max(1) as f64;
        let matrix = gaussian_matrix(&mut Rng::new(seed), m, n, variance)?;
        Ok(MeasurementOp {
            kind: MeasurementKind::Gaussian { seed },
            matrix,
        })
    }

    /// Local averaging over `pool_h × pool_w` windows placed every `stride`
    /// pixels, independently per channel. One row per output pixel, ordered
    /// with the same channel-major layout as the input.
    pub fn superres(pool_h: usize, pool_w: usize, stride: usize, shape: ImageShape) -> Result<Self> {
        let ImageShape {
            height,
            width,
            channels,
        } = shape;
        if pool_h == 0 || pool_w == 0 || stride == 0 || shape.is_empty() {
            return Err(Error::InvalidParameter("super-resolution sizes must be positive".into()));
        }
        if height % stride != 0 || width % stride != 0 {
            return Err(Error::InvalidParameter(format!(
                "image {height}x{width} is not divisible by stride {stride}"
            )));
        }
        let (oh, ow) = (height / stride, width / stride);
        if (oh - 1) * stride + pool_h > height || (ow - 1) * stride + pool_w > width {
            return Err(Error::InvalidParameter(format!(
                "{pool_h}x{pool_w} pool with stride {stride} runs past a {height}x{width} image"
            )));
        }
        let m = channels * oh * ow;
        let mut matrix = Matrix::zeros(m, shape.len());
        let weight = 1.0 / (pool_h * pool_w) as f64;
        for ch in 0..channels {
            for r in 0..oh {
                for c in 0..ow {
                    let row = ch * oh * ow + r * ow + c;
                    for dr in 0..pool_h {
                        for dc in 0..pool_w {
                            let col = shape.index(ch, r * stride + dr, c * stride + dc);
                            matrix.set(row, col, weight);
                        }
                    }
                }
            }
        }
        Ok(MeasurementOp {
            kind: MeasurementKind::SuperRes {
                pool_h,
                pool_w,
                stride,
                shape,
            },
            matrix,
        })
    }

    /// Rebuilds an operator from its description.
    pub fn from_kind(kind: MeasurementKind, m: usize, n: usize) -> Result<Self> {
        let op = match kind {
            MeasurementKind::Identity => MeasurementOp::identity(n),
            MeasurementKind::Gaussian { seed } => MeasurementOp::gaussian(m, n, seed)?,
            MeasurementKind::SuperRes {
                pool_h,
                pool_w,
                stride,
                shape,
            } => MeasurementOp::superres(pool_h, pool_w, stride, shape)?,
        };
        if op.m() != m || op.n() != n {
            return Err(Error::InvalidParameter(format!(
                "operator description yields {}x{}, expected {m}x{n}",
                op.m(),
                op.n()
            )));
        }
        Ok(op)
    }

    pub fn kind(&self) -> MeasurementKind {
        self.kind
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn m(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n(&self) -> usize {
        self.matrix.cols()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vector> {
        self.matrix.matvec(x)
    }

    pub fn apply_t(&self, r: &[f64]) -> Result<Vector> {
        self.matrix.matvec_t(r)
    }
}

/// Noise with `√E‖η‖² = level`: entries are IID `N(0, level²/m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub level: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(level: f64, seed: u64) -> Result<Self> {
        if !(level >= 0.0 && level.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise level must be finite and non-negative, got {level}"
            )));
        }
        Ok(NoiseModel { level, seed })
    }

    pub fn noiseless() -> Self {
        NoiseModel { level: 0.0, seed: 0 }
    }

    /// Draws `η ∈ R^m` from `Rng::new(self.seed)`.
    pub fn sample(&self, m: usize) -> Vector {
        if self.level == 0.0 {
            return Vector::zeros(m);
        }
        let sd = self.level / (m as f64).sqrt();
        let mut rng = Rng::new(self.seed);
        (0..m).map(|_| sd * rng.normal()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: Vector,
    pub op: MeasurementOp,
    pub noise: NoiseModel,
    /// Ground truth, kept for evaluation only.
    pub truth: Option<Vector>,
}

impl Observation {
    /// The realized noise vector `η`, regenerated from the noise seed.
    pub fn noise_vector(&self) -> Vector {
        self.noise.sample(self.op.m())
    }
}

/// `y = A x* + η` with `η` drawn from `noise`.
pub fn sense(op: &MeasurementOp, x_star: &[f64], noise: NoiseModel) -> Result<Observation> {
    if x_star.len() != op.n() {
        return Err(Error::dims("sense: signal length", op.n(), x_star.len()));
    }
    let mut y = op.apply(x_star)?;
    y.axpy(1.0, &noise.sample(op.m()));
    Ok(Observation {
        y,
        op: op.clone(),
        noise,
        truth: Some(Vector::new(x_star.to_vec())),
    })
}

/// Fraction of `draws` fresh Gaussian operators with `‖A x‖ > 2‖x‖` for a
/// fixed `x`.
pub fn norm_expansion_fraction(x: &[f64], m: usize, draws: usize, seed: u64) -> Result<f64> {
    let nx = crate::tensor::norm2(x);
    let base = Rng::new(seed);
    let mut failures = 0usize;
    for d in 0..draws {
        let mut rng = base.stream(d as u64);
        let a = gaussian_matrix(&mut rng, m, x.len(), 1.0 / m as f64)?;
        if a.matvec(x)?.norm2() > 2.0 * nx {
            failures += 1;
        }
    }
    Ok(failures as f64 / draws.max(1) as f64)
}

// Observation file ("CSOB"), little-endian:
//   magic "CSOB", u32 version = 1, u8 kind (0 identity, 1 gaussian, 2 superres)
//   u32 m, u32 n
//   kind 1: u64 seed
//   kind 2: u32 pool_h, u32 pool_w, u32 stride, u32 height, u32 width, u32 channels
//   f64 noise level, u64 noise seed
//   m × f64 y
//   u8 has_truth, then n × f64 truth when 1
// The operator is rebuilt from its description on load.
const OBS_MAGIC: &[u8; 4] = b"CSOB";

pub fn encode_observation(obs: &Observation) -> Vec<u8> {
    let mut out = OBS_MAGIC.to_vec();
    out.extend_from_slice(&1u32.to_le_bytes());
    let (m, n) = (obs.op.m() as u32, obs.op.n() as u32);
    match obs.op.kind() {
        MeasurementKind::Identity => {
            out.push(0);
            out.extend_from_slice(&m.to_le_bytes());
            out.extend_from_slice(&n.to_le_bytes());
        }
        MeasurementKind::Gaussian { seed } => {
            out.push(1);
            out.extend_from_slice(&m.to_le_bytes());
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(&seed.to_le_bytes());
        }
        MeasurementKind::SuperRes {
            pool_h,
            pool_w,
            stride,
            shape,
        } => {
            out.push(2);
            out.extend_from_slice(&m.to_le_bytes());
            out.extend_from_slice(&n.to_le_bytes());
            for v in [pool_h, pool_w, stride, shape.height, shape.width, shape.channels] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
    }
    out.extend_from_slice(&obs.noise.level.to_le_bytes());
    out.extend_from_slice(&obs.noise.seed.to_le_bytes());
    for v in obs.y.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match &obs.truth {
        Some(t) => {
            out.push(1);
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::MalformedObservation(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, len: usize) -> Result<Vector> {
        let bytes = len
            .checked_mul(8)
            .ok_or_else(|| Error::MalformedObservation("vector length overflows".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_observation(bytes: &[u8]) -> Result<Observation> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != OBS_MAGIC {
        return Err(Error::MalformedObservation("bad magic".into()));
    }
    let version = r.u32()?;
    if version != 1 {
        return Err(Error::MalformedObservation(format!("unsupported version {version}")));
    }
    let code = r.u8()?;
    let m = r.u32()? as usize;
    let n = r.u32()? as usize;
    let kind = match code {
        0 => MeasurementKind::Identity,
        1 => MeasurementKind::Gaussian { seed: r.u64()? },
        2 => {
            let mut v = [0usize; 6];
            for slot in v.iter_mut() {
                *slot = r.u32()? as usize;
            }
            MeasurementKind::SuperRes {
                pool_h: v[0],
                pool_w: v[1],
                stride: v[2],
                shape: ImageShape::new(v[3], v[4], v[5]),
            }
        }
        other => {
            return Err(Error::MalformedObservation(format!("unknown operator kind {other}")))
        }
    };
    let level = f64::from_bits(r.u64()?);
    let noise_seed = r.u64()?;
    let y = r.f64s(m)?;
    let truth = match r.u8()? {
        0 => None,
        1 => Some(r.f64s(n)?),
        other => return Err(Error::MalformedObservation(format!("bad truth flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::MalformedObservation("trailing bytes".into()));
    }
    let op = MeasurementOp::from_kind(kind, m, n)?;
    Ok(Observation {
        y,
        op,
        noise: NoiseModel::new(level, noise_seed)?,
        truth,
    })
}

pub fn save_observation(obs: &Observation, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_observation(obs)).map_err(|e| Error::io(path, e))
}

pub fn load_observation(path: impl AsRef<Path>) -> Result<Observation> {
    let path = path.as_ref();
    decode_observation(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
