//! GENW, the portable generator weight format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes  "GENW"
//! version      u32      1
//! layer_count  u32
//! per layer:
//!   in_dim       u32
//!   out_dim      u32
//!   activation   u8     0 = identity, 1 = relu, 2 = leaky relu, 3 = tanh, 4 = sigmoid
//!   leaky_slope  f32    0 unless activation = 2
//!   weights      out_dim × in_dim f32, row-major
//!   biases       out_dim f32
//! checksum     u64      FNV-1a 64 over every preceding byte, magic included
//! ```
//!
//! Parameters are stored at `f32` precision; a net whose parameters are
//! `f32`-representable round-trips bit-exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, GeneratorNet, Layer};
use crate::tensor::{Matrix, Vector};

pub const MAGIC: &[u8; 4] = b"GENW";
pub const VERSION: u32 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn activation_code(a: &Activation) -> (u8, f32) {
    match *a {
        Activation::Identity => (0, 0.0),
        Activation::Relu => (1, 0.0),
        Activation::LeakyRelu { slope } => (2, slope as f32),
        Activation::Tanh => (3, 0.0),
        Activation::Sigmoid => (4, 0.0),
    }
}

fn activation_from_code(code: u8, slope: f32) -> Result<Activation> {
    Ok(match code {
        0 => Activation::Identity,
        1 => Activation::Relu,
        2 => Activation::LeakyRelu { slope: slope as f64 },
        3 => Activation::Tanh,
        4 => Activation::Sigmoid,
        other => return Err(Error::UnsupportedActivation(other)),
    })
}

pub fn encode(g: &GeneratorNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(g.depth() as u32).to_le_bytes());
    for layer in g.layers() {
        out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
        let (code, slope) = activation_code(&layer.activation);
        out.push(code);
        out.extend_from_slice(&slope.to_le_bytes());
        for &w in layer.weights.data() {
            out.extend_from_slice(&(w as f32).to_le_bytes());
        }
        for &b in layer.bias.iter() {
            out.extend_from_slice(&(b as f32).to_le_bytes());
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::MalformedWeights(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| {
            Error::MalformedWeights(format!("{what} size overflows"))
        })?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<GeneratorNet> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::MalformedWeights("bad magic".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::MalformedWeights(format!("unsupported version {version}")));
    }
    let count = cur.u32("layer count")? as usize;
    if count == 0 {
        return Err(Error::MalformedWeights("zero layers".into()));
    }

    struct Raw {
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    }
    let mut raw = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let in_dim = cur.u32("in_dim")? as usize;
        let out_dim = cur.u32("out_dim")? as usize;
        let code = cur.take(1, "activation")?[0];
        let slope = cur.f32("leaky slope")?;
        let activation = activation_from_code(code, slope)?;
        let weights = cur.f32s(in_dim.saturating_mul(out_dim), "weights")?;
        let bias = cur.f32s(out_dim, "biases")?;
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::MalformedWeights(format!("layer {i} has a zero dimension")));
        }
        raw.push(Raw {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        });
    }
    let payload_end = cur.pos;
    let stored = u64::from_le_bytes(cur.take(8, "checksum")?.try_into().unwrap());
    if cur.pos != bytes.len() {
        return Err(Error::MalformedWeights(format!(
            "{} trailing bytes after checksum",
            bytes.len() - cur.pos
        )));
    }
    let computed = fnv1a64(&bytes[..payload_end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    for (i, pair) in raw.windows(2).enumerate() {
        if pair[1].in_dim != pair[0].out_dim {
            return Err(Error::InconsistentLayers {
                layer: i + 1,
                expected: pair[1].in_dim,
                actual: pair[0].out_dim,
            });
        }
    }
    let layers = raw
        .into_iter()
        .map(|r| {
            let w = Matrix::new(r.out_dim, r.in_dim, r.weights)
                .map_err(|_| Error::MalformedWeights("non-finite weight".into()))?;
            Layer::new(w, Vector::new(r.bias), r.activation)
                .map_err(|e| Error::MalformedWeights(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    GeneratorNet::new(layers)
}

pub fn save_weights(g: &GeneratorNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(g)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<GeneratorNet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
