//! Lasso sparse recovery in a pixel, 2D-DCT or 2D Haar basis.
//!
//! Objective: `F(w) = ‖A Ψ w − y‖² + s ‖w‖₁` where `Ψ` is the synthesis
//! (inverse) transform of an orthonormal basis and `s` the shrinkage.

pub mod transforms;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{ImageShape, MeasurementOp};
use crate::tensor::{norm2, Rng, Vector};

pub use transforms::{dct2, haar2, idct2, ihaar2, max_haar_levels};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SparsifyingBasis {
    Pixel,
    Dct2d { shape: ImageShape },
    /// `levels = None` means the deepest decomposition the shape allows.
    Db1 {
        shape: ImageShape,
        #[serde(default)]
        levels: Option<usize>,
    },
}

impl SparsifyingBasis {
    fn check(&self, n: usize) -> Result<()> {
        match self {
            SparsifyingBasis::Pixel => Ok(()),
            SparsifyingBasis::Dct2d { shape } | SparsifyingBasis::Db1 { shape, .. } => {
                if shape.len() != n {
                    Err(Error::dims("basis image size", n, shape.len()))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn levels(&self) -> Option<usize> {
        match *self {
            SparsifyingBasis::Db1 { shape, levels } => Some(levels.unwrap_or_else(|| max_haar_levels(shape))),
            _ => None,
        }
    }

    /// Coefficients of an image: `Φ x`.
    pub fn analyze(&self, x: &[f64]) -> Result<Vector> {
        match *self {
            SparsifyingBasis::Pixel => Ok(Vector::new(x.to_vec())),
            SparsifyingBasis::Dct2d { shape } => dct2(x, shape),
            SparsifyingBasis::Db1 { shape, .. } => haar2(x, shape, self.levels().unwrap()),
        }
    }

    /// Image from coefficients: `Ψ w = Φᵀ w`.
    pub fn synthesize(&self, w: &[f64]) -> Result<Vector> {
        match *self {
            SparsifyingBasis::Pixel => Ok(Vector::new(w.to_vec())),
            SparsifyingBasis::Dct2d { shape } => idct2(w, shape),
            SparsifyingBasis::Db1 { shape, .. } => ihaar2(w, shape, self.levels().unwrap()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LassoSolver {
    Ista,
    #[default]
    Fista,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub shrinkage: f64,
    pub max_iters: usize,
    /// Stop once no coefficient moves by more than this in one iteration.
    pub tolerance: f64,
    pub solver: LassoSolver,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            shrinkage: 0.1,
            max_iters: 10_000,
            tolerance: 1e-10,
            solver: LassoSolver::Fista,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrinkage.is_finite() && self.shrinkage > 0.0) {
            return Err(Error::InvalidParameter(format!("shrinkage must be > 0, got {}", self.shrinkage)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoResult {
    pub x_hat: Vector,
    pub w_hat: Vector,
    pub objective: f64,
    /// `‖A x̂ − y‖²`.
    pub measurement_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warning: Option<String>,
    pub step: f64,
    /// Objective after every iteration, starting from `w = 0`.
    #[serde(skip)]
    pub history: Vec<f64>,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

struct Problem<'a> {
    op: &'a MeasurementOp,
    y: &'a [f64],
    basis: SparsifyingBasis,
    shrinkage: f64,
}

impl Problem<'_> {
    /// Residual `A Ψ w − y`.
    fn residual(&self, w: &[f64]) -> Result<Vector> {
        let x = self.basis.synthesize(w)?;
        Ok(self.op.apply(&x)?.sub(self.y))
    }

    fn smooth(&self, w: &[f64]) -> Result<f64> {
        Ok(self.residual(w)?.norm2_squared())
    }

    /// Gradient of the smooth part, `2 Φ Aᵀ r`, along with `‖r‖²`.
    fn gradient(&self, w: &[f64]) -> Result<(f64, Vector)> {
        let r = self.residual(w)?;
        let g = self.basis.analyze(&self.op.apply_t(&r)?)?.scaled(2.0);
        Ok((r.norm2_squared(), g))
    }

    fn objective(&self, w: &[f64]) -> Result<f64> {
        Ok(self.smooth(w)? + self.shrinkage * w.iter().map(|v| v.abs()).sum::<f64>())
    }
}

/// Estimate of `‖A‖₂²` by power iteration on `AᵀA` from a seeded start.
pub fn operator_norm_squared(op: &MeasurementOp, iters: usize, seed: u64) -> Result<f64> {
    let mut v = Rng::new(seed).normal_vector(op.n());
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        let nv = norm2(&v);
        if nv == 0.0 {
            return Ok(0.0);
        }
        v = v.scaled(1.0 / nv);
        let w = op.apply_t(&op.apply(&v)?)?;
        est = v.dot(&w);
        v = w;
    }
    Ok(est)
}

const POWER_ITERS: usize = 20;
const POWER_SEED: u64 = 0x1a550;

/// Minimizes `‖A Ψ w − y‖² + s ‖w‖₁` by ISTA or FISTA.
///
/// The initial step is `1 / (2 σ̂²)` with `σ̂²` the power-iteration estimate of
/// `‖A‖₂²` (`Ψ` is orthonormal, so `‖AΨ‖₂ = ‖A‖₂`). Each step backtracks
/// until the quadratic upper bound holds, which keeps ISTA monotone even if
/// the estimate is low.
pub fn lasso_recover(
    op: &MeasurementOp,
    y: &[f64],
    basis: SparsifyingBasis,
    config: &LassoConfig,
) -> Result<LassoResult> {
    config.validate()?;
    if y.len() != op.m() {
        return Err(Error::dims("observation length", op.m(), y.len()));
    }
    basis.check(op.n())?;
    let p = Problem {
        op,
        y,
        basis,
        shrinkage: config.shrinkage,
    };
    let sigma2 = operator_norm_squared(op, POWER_ITERS, POWER_SEED)?;
    let mut step = if sigma2 > 0.0 { 1.0 / (2.0 * sigma2) } else { 1.0 };

    let n = op.n();
    let mut w = Vector::zeros(n);
    let mut anchor = w.clone();
    let mut t = 1.0_f64;
    let mut history = vec![p.objective(&w)?];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        iterations += 1;
        let (f_anchor, grad) = p.gradient(&anchor)?;
        let next = loop {
            let cand: Vector = anchor
                .iter()
                .zip(grad.iter())
                .map(|(a, g)| soft_threshold(a - step * g, step * config.shrinkage))
                .collect();
            let diff = cand.sub(&anchor);
            let bound = f_anchor + grad.dot(&diff) + diff.norm2_squared() / (2.0 * step);
            let f_cand = p.smooth(&cand)?;
            if f_cand <= bound * (1.0 + 1e-12) + 1e-300 || step < 1e-300 {
                break cand;
            }
            step *= 0.5;
        };
        let moved = next
            .iter()
            .zip(w.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        match config.solver {
            LassoSolver::Ista => anchor = next.clone(),
            LassoSolver::Fista => {
                // Gradient-based adaptive restart: drop momentum once it
                // points against the latest proximal step.
                let against: f64 = anchor
                    .iter()
                    .zip(next.iter())
                    .zip(w.iter())
                    .map(|((a, x1), x0)| (a - x1) * (x1 - x0))
                    .sum();
                if against > 0.0 {
                    t = 1.0;
                }
                let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
                let beta = (t - 1.0) / t_next;
                anchor = next.iter().zip(w.iter()).map(|(a, b)| a + beta * (a - b)).collect();
                t = t_next;
            }
        }
        w = next;
        history.push(p.objective(&w)?);
        if moved <= config.tolerance {
            converged = true;
            break;
        }
    }

    let x_hat = basis.synthesize(&w)?;
    let measurement_error = p.smooth(&w)?;
    let warning = (!converged).then(|| {
        format!(
            "did not converge within {} iterations (tolerance {:e})",
            config.max_iters, config.tolerance
        )
    });
    Ok(LassoResult {
        x_hat,
        objective: *history.last().unwrap(),
        w_hat: w,
        measurement_error,
        iterations,
        converged,
        warning,
        step,
        history,
    })
}

/// Lasso objective at coefficients `w`.
pub fn lasso_objective(op: &MeasurementOp, y: &[f64], basis: SparsifyingBasis, shrinkage: f64, w: &[f64]) -> Result<f64> {
    basis.check(op.n())?;
    Problem { op, y, basis, shrinkage }.objective(w)
}

/// Largest violation of the subgradient optimality condition: with
/// `g = 2 Φ Aᵀ(A Ψ w − y)`, `|g_i + s sign(w_i)|` on the support and
/// `max(0, |g_i| − s)` off it.
pub fn kkt_residual(op: &MeasurementOp, y: &[f64], basis: SparsifyingBasis, shrinkage: f64, w: &[f64]) -> Result<f64> {
    basis.check(op.n())?;
    let (_, g) = Problem { op, y, basis, shrinkage }.gradient(w)?;
    Ok(w.iter()
        .zip(g.iter())
        .map(|(&wi, &gi)| {
            if wi != 0.0 {
                (gi + shrinkage * wi.signum()).abs()
            } else {
                (gi.abs() - shrinkage).max(0.0)
            }
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::MeasurementOp;

    fn sparse_problem(seed: u64) -> (MeasurementOp, Vector, Vector) {
        let (n, m, s) = (200, 80, 5);
        let mut rng = Rng::new(seed);
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        let mut x = Vector::zeros(n);
        for &i in &idx[..s] {
            x[i] = rng.normal() + 2.0 * rng.normal().signum();
        }
        let op = MeasurementOp::gaussian(m, n, seed + 1).unwrap();
        let y = op.apply(&x).unwrap();
        (op, x, y)
    }

    #[test]
    fn identity_gives_soft_threshold() {
        let y = Rng::new(4).normal_vector(30);
        let op = MeasurementOp::identity(30);
        let s = 0.6;
        let r = lasso_recover(&op, &y, SparsifyingBasis::Pixel, &LassoConfig { shrinkage: s, ..Default::default() }).unwrap();
        assert!(r.converged);
        for (xi, yi) in r.x_hat.iter().zip(y.iter()) {
            // argmin (w − y)² + s|w| thresholds at s/2.
            let expected = yi.signum() * (yi.abs() - s / 2.0).max(0.0);
            assert!((xi - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn huge_shrinkage_gives_zero() {
        let (op, _, y) = sparse_problem(3);
        let r = lasso_recover(&op, &y, SparsifyingBasis::Pixel, &LassoConfig { shrinkage: 1e9, ..Default::default() }).unwrap();
        assert!(r.x_hat.iter().all(|&v| v == 0.0));
        assert!(r.converged);
    }

    #[test]
    fn sparse_recovery_and_kkt() {
        for seed in [10, 20, 30] {
            let (op, x, y) = sparse_problem(seed);
            let cfg = LassoConfig { shrinkage: 1e-4, max_iters: 50_000, tolerance: 1e-12, ..Default::default() };
            let r = lasso_recover(&op, &y, SparsifyingBasis::Pixel, &cfg).unwrap();
            assert!(r.converged, "seed {seed}: {} iters", r.iterations);
            let rel = norm2(&r.x_hat.sub(&x)) / norm2(&x);
            assert!(rel <= 1e-2, "seed {seed}: {rel}");
            let kkt = kkt_residual(&op, &y, SparsifyingBasis::Pixel, cfg.shrinkage, &r.w_hat).unwrap();
            assert!(kkt <= 1e-6, "seed {seed}: kkt {kkt}");
        }
    }

    #[test]
    fn ista_is_monotone_and_fista_no_worse() {
        for seed in 0..5 {
            let (op, _, y) = sparse_problem(100 + seed);
            let base = LassoConfig { shrinkage: 0.05, max_iters: 300, tolerance: 1e-300, solver: LassoSolver::Ista };
            let ista = lasso_recover(&op, &y, SparsifyingBasis::Pixel, &base).unwrap();
            for pair in ista.history.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12, "{pair:?}");
            }
            let fista = lasso_recover(&op, &y, SparsifyingBasis::Pixel, &LassoConfig { solver: LassoSolver::Fista, ..base }).unwrap();
            assert!(fista.iterations <= ista.iterations);
            assert!(fista.objective <= ista.objective + 1e-12);
        }
    }

    #[test]
    fn non_convergence_sets_warning() {
        let (op, _, y) = sparse_problem(7);
        let r = lasso_recover(&op, &y, SparsifyingBasis::Pixel, &LassoConfig { shrinkage: 1e-3, max_iters: 3, ..Default::default() }).unwrap();
        assert!(!r.converged);
        assert!(r.warning.is_some());
    }

    #[test]
    fn transform_bases_recover_sparse_coefficients() {
        let shape = ImageShape::new(8, 8, 1);
        for basis in [SparsifyingBasis::Dct2d { shape }, SparsifyingBasis::Db1 { shape, levels: None }] {
            let mut w = Vector::zeros(64);
            w[0] = 3.0;
            w[5] = -2.0;
            w[17] = 1.5;
            let x = basis.synthesize(&w).unwrap();
            let op = MeasurementOp::gaussian(40, 64, 9).unwrap();
            let y = op.apply(&x).unwrap();
            let cfg = LassoConfig { shrinkage: 1e-5, max_iters: 50_000, tolerance: 1e-12, ..Default::default() };
            let r = lasso_recover(&op, &y, basis, &cfg).unwrap();
            assert!(norm2(&r.x_hat.sub(&x)) / norm2(&x) < 1e-2, "{basis:?}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let op = MeasurementOp::identity(4);
        assert!(lasso_recover(&op, &[0.0; 3], SparsifyingBasis::Pixel, &LassoConfig::default()).is_err());
        let shape = ImageShape::new(3, 3, 1);
        assert!(lasso_recover(&op, &[0.0; 4], SparsifyingBasis::Dct2d { shape }, &LassoConfig::default()).is_err());
        assert!(LassoConfig { shrinkage: 0.0, ..Default::default() }.validate().is_err());
        assert!(LassoConfig { tolerance: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn power_iteration_matches_known_norm() {
        let op = MeasurementOp::identity(10);
        assert!((operator_norm_squared(&op, 20, 1).unwrap() - 1.0).abs() < 1e-12);
    }
}
