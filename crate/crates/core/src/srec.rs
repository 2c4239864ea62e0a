//! Empirical checks of the set-restricted eigenvalue condition
//! `‖A(x₁ − x₂)‖ ≥ γ‖x₁ − x₂‖ − δ` on the range of a generator, the
//! recovery bound that follows from it, and exact linear-region counts.
//!
//! Everything here is pair-sampled: a reported `γ̂` is the minimum over the
//! sample, not a certificate for the whole range.

mod lp;
pub mod regions;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::MeasurementOp;
use crate::model::GeneratorNet;
use crate::tensor::{derive_seed, norm2, Matrix, Rng, Vector};

pub use regions::{
    count_net_regions, count_regions, general_position_count, random_hyperplanes, restrict_to_hyperplane,
    Hyperplane, RegionCount,
};

/// Pairs with `‖G(z₁) − G(z₂)‖` below this are skipped.
pub const DEGENERATE_PAIR: f64 = 1e-12;
/// Below this `γ` the recovery bound is reported as uninformative.
pub const MIN_INFORMATIVE_GAMMA: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentSampler {
    /// `z ~ N(0, I_k)`.
    #[default]
    Prior,
    /// Uniform on the ball `‖z‖ ≤ radius`.
    Ball { radius: f64 },
}

impl LatentSampler {
    pub fn sample(&self, rng: &mut Rng, k: usize) -> Result<Vector> {
        match *self {
            LatentSampler::Prior => Ok(rng.normal_vector(k)),
            LatentSampler::Ball { radius } => {
                if !(radius.is_finite() && radius > 0.0) {
                    return Err(Error::InvalidParameter(format!("ball radius must be > 0, got {radius}")));
                }
                let dir = rng.normal_vector(k);
                let len = norm2(&dir);
                let r = radius * rng.uniform().powf(1.0 / k as f64);
                Ok(if len > 0.0 { dir.scaled(r / len) } else { dir })
            }
        }
    }
}

/// One sampled secant `d = G(z₁) − G(z₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    /// `‖d‖`
    pub secant_norm: f64,
    /// `‖A d‖`
    pub image_norm: f64,
}

impl PairSample {
    pub fn ratio(&self) -> f64 {
        self.image_norm / self.secant_norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrecReport {
    pub m: usize,
    /// Pairs that entered the statistics.
    pub pair_count: usize,
    pub degenerate_pairs: usize,
    /// `min ‖A d‖ / ‖d‖` over the sample (`δ = 0`).
    pub gamma_hat: f64,
    pub max_ratio: f64,
    pub mean_ratio: f64,
    /// Fraction of sampled points `x = G(z)` with `‖A x‖ > 2‖x‖`.
    pub norm_expansion_fraction: f64,
    #[serde(skip)]
    pub samples: Vec<PairSample>,
}

impl SrecReport {
    /// Fraction of sampled pairs with `‖A d‖ < γ‖d‖ − δ`, evaluated as
    /// `‖A d‖/‖d‖ < γ − δ/‖d‖` so that `γ = γ̂, δ = 0` never counts a pair.
    pub fn violation_fraction(&self, gamma: f64, delta: f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let bad = self
            .samples
            .iter()
            .filter(|s| s.ratio() < gamma - delta / s.secant_norm)
            .count();
        bad as f64 / self.samples.len() as f64
    }

    /// Violation fractions over a `(γ, δ)` grid, row-major in `gammas`.
    pub fn violation_table(&self, gammas: &[f64], deltas: &[f64]) -> Vec<ViolationRow> {
        gammas
            .iter()
            .flat_map(|&gamma| {
                deltas.iter().map(move |&delta| ViolationRow {
                    gamma,
                    delta,
                    fraction: self.violation_fraction(gamma, delta),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationRow {
    pub gamma: f64,
    pub delta: f64,
    pub fraction: f64,
}

/// Range samples shared by every operator in a sweep.
struct RangeSample {
    points: Vec<Vector>,
    secants: Vec<Vector>,
    degenerate: usize,
}

fn sample_range(g: &GeneratorNet, sampler: LatentSampler, pairs: usize, seed: u64) -> Result<RangeSample> {
    if pairs == 0 {
        return Err(Error::InvalidParameter("pairs must be ≥ 1".into()));
    }
    let drawn: Vec<(Vector, Vector)> = (0..pairs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::new(derive_seed(seed, i));
            let z1 = sampler.sample(&mut rng, g.k())?;
            let z2 = sampler.sample(&mut rng, g.k())?;
            Ok((g.forward(&z1)?, g.forward(&z2)?))
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(2 * pairs);
    let mut secants = Vec::with_capacity(pairs);
    let mut degenerate = 0;
    for (x1, x2) in drawn {
        let d = x1.sub(&x2);
        if norm2(&d) < DEGENERATE_PAIR {
            degenerate += 1;
        } else {
            secants.push(d);
        }
        points.push(x1);
        points.push(x2);
    }
    if secants.is_empty() {
        return Err(Error::DegeneratePairs(degenerate));
    }
    Ok(RangeSample {
        points,
        secants,
        degenerate,
    })
}

fn report_for(matrix: &Matrix, range: &RangeSample) -> Result<SrecReport> {
    let samples: Vec<PairSample> = range
        .secants
        .par_iter()
        .map(|d| {
            Ok(PairSample {
                secant_norm: norm2(d),
                image_norm: norm2(&matrix.matvec(d)?),
            })
        })
        .collect::<Result<_>>()?;
    let expanded = range
        .points
        .par_iter()
        .map(|x| Ok(norm2(&matrix.matvec(x)?) > 2.0 * norm2(x)))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&b| b)
        .count();
    let ratios = samples.iter().map(PairSample::ratio);
    let gamma_hat = ratios.clone().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.clone().fold(0.0, f64::max);
    let mean_ratio = ratios.sum::<f64>() / samples.len() as f64;
    Ok(SrecReport {
        m: matrix.rows(),
        pair_count: samples.len(),
        degenerate_pairs: range.degenerate,
        gamma_hat,
        max_ratio,
        mean_ratio,
        norm_expansion_fraction: expanded as f64 / range.points.len() as f64,
        samples,
    })
}

/// Samples `pairs` latent pairs and measures how well `op` separates their
/// images.
pub fn estimate_srec(
    g: &GeneratorNet,
    op: &MeasurementOp,
    sampler: LatentSampler,
    pairs: usize,
    seed: u64,
) -> Result<SrecReport> {
    if op.n() != g.n() {
        return Err(Error::dims("operator input dimension", g.n(), op.n()));
    }
    let range = sample_range(g, sampler, pairs, seed)?;
    report_for(op.matrix(), &range)
}

/// `γ̂` for Gaussian operators over several `m` and matrix seeds, with one
/// shared set of range pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrecSweep {
    pub m_list: Vec<usize>,
    pub pairs: usize,
    /// `reports[s][j]` is matrix seed `s` at `m_list[j]`.
    pub reports: Vec<Vec<SrecReport>>,
    /// Share of adjacent `(m_j, m_{j+1})` comparisons with `γ̂` non-decreasing.
    pub monotone_fraction: f64,
}

impl SrecSweep {
    pub fn gamma_hat(&self, seed_index: usize, m_index: usize) -> f64 {
        self.reports[seed_index][m_index].gamma_hat
    }
}

/// Gaussian matrix for seed index `s` at `m` rows in a sweep seeded by `seed`.
///
/// The seed ignores `m`: rows are drawn row-major from one stream, so the
/// operator at `m` is the first `m` rows of the one at any larger `m`,
/// rescaled to variance `1/m`. Each operator keeps its exact marginal law;
/// only the comparison across `m` is coupled.
pub fn sweep_operator(m: usize, n: usize, seed: u64, s: usize) -> Result<MeasurementOp> {
    MeasurementOp::gaussian(m, n, derive_seed(seed, 1 + s as u64))
}

pub fn srec_sweep(
    g: &GeneratorNet,
    sampler: LatentSampler,
    m_list: &[usize],
    pairs: usize,
    matrix_seeds: usize,
    seed: u64,
) -> Result<SrecSweep> {
    if m_list.is_empty() || matrix_seeds == 0 {
        return Err(Error::InvalidParameter("sweep needs at least one m and one matrix seed".into()));
    }
    let range = sample_range(g, sampler, pairs, derive_seed(seed, 0))?;
    let mut reports = Vec::with_capacity(matrix_seeds);
    for s in 0..matrix_seeds {
        let row = m_list
            .iter()
            .map(|&m| report_for(sweep_operator(m, g.n(), seed, s)?.matrix(), &range))
            .collect::<Result<Vec<_>>>()?;
        reports.push(row);
    }
    let mut up = 0usize;
    let mut total = 0usize;
    for row in &reports {
        for pair in row.windows(2) {
            total += 1;
            if pair[1].gamma_hat >= pair[0].gamma_hat {
                up += 1;
            }
        }
    }
    Ok(SrecSweep {
        m_list: m_list.to_vec(),
        pairs,
        reports,
        monotone_fraction: if total == 0 { 1.0 } else { up as f64 / total as f64 },
    })
}

/// Bound on `‖x₁ − x₂‖` when both points explain `y` to within `e₁`, `e₂`
/// and the pair satisfies the S-REC with `(γ, δ)`: `(e₁ + e₂ + δ) / γ`.
pub fn two_point_bound(e1: f64, e2: f64, gamma: f64, delta: f64) -> f64 {
    (e1 + e2 + delta) / gamma
}

/// Recovery-bound right-hand side
/// `(4/γ + 1)·rep + (2‖η‖ + ε + δ)/γ`.
pub fn recovery_bound(gamma: f64, delta: f64, representation_error: f64, noise_norm: f64, eps: f64) -> f64 {
    (4.0 / gamma + 1.0) * representation_error + (2.0 * noise_norm + eps + delta) / gamma
}

/// One recovery to test against the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryInstance {
    /// `‖x̂ − x*‖`
    pub error_norm: f64,
    /// `‖η‖`
    pub noise_norm: f64,
    /// `ε̂ = ‖y − A x̂‖`
    pub eps_hat: f64,
    /// Distance from `x*` to the range; 0 for in-range truths.
    #[serde(default)]
    pub representation_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVerdict {
    Pass,
    Fail,
    /// `γ` too small for the bound to constrain anything.
    Uninformative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundMargin {
    pub lhs: f64,
    pub bound: f64,
    /// `bound − lhs`
    pub slack: f64,
    pub verdict: BoundVerdict,
}

/// Evaluates the recovery bound for each instance with the empirical
/// `(γ̂, δ̂)`. Results are empirical, since `γ̂` is pair-sampled.
pub fn check_recovery_bound(gamma: f64, delta: f64, instances: &[RecoveryInstance]) -> Vec<BoundMargin> {
    instances
        .iter()
        .map(|inst| {
            let bound = recovery_bound(gamma, delta, inst.representation_error, inst.noise_norm, inst.eps_hat);
            let verdict = if !(gamma >= MIN_INFORMATIVE_GAMMA) || !bound.is_finite() {
                BoundVerdict::Uninformative
            } else if inst.error_norm <= bound {
                BoundVerdict::Pass
            } else {
                BoundVerdict::Fail
            };
            BoundMargin {
                lhs: inst.error_norm,
                bound,
                slack: bound - inst.error_norm,
                verdict,
            }
        })
        .collect()
}
