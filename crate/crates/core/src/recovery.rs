//! Latent-space recovery: minimize `‖A G(z) − y‖² + λ‖z‖²` over `z` with
//! Adam and random restarts, keeping the restart with the lowest measurement
//! error.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{MeasurementOp, Observation};
use crate::model::{GeneratorNet, LatentBallConstraint};
use crate::tensor::{derive_seed, dist2_squared, norm2, Rng, Vector};

mod adam;

pub use adam::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LatentInit {
    /// `z₀ ~ N(0, I_k)`, the generator's prior.
    #[default]
    GaussianPrior,
    /// `z₀ ~ U[-1, 1]^k`
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub steps_per_restart: usize,
    pub restarts: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub latent_constraint: Option<LatentBallConstraint>,
    pub init: LatentInit,
    pub seed: u64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            lambda: 0.0,
            learning_rate: 0.01,
            steps_per_restart: 1000,
            restarts: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            latent_constraint: None,
            init: LatentInit::GaussianPrior,
            seed: 0,
        }
    }
}

impl RecoveryConfig {
    /// 20-dimensional VAE decoder profile: λ = 0.1, lr 0.01, 10 × 1000 steps.
    pub fn mnist_profile() -> Self {
        RecoveryConfig {
            lambda: 0.1,
            ..RecoveryConfig::default()
        }
    }

    /// DCGAN profile: λ = 0.001, lr 0.1, 2 × 500 steps.
    pub fn celeba_profile() -> Self {
        RecoveryConfig {
            lambda: 0.001,
            learning_rate: 0.1,
            steps_per_restart: 500,
            restarts: 2,
            ..RecoveryConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if self.restarts == 0 {
            return bad("at least one restart is required".into());
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("adam {name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam eps must be > 0, got {}", self.adam_eps));
        }
        if let Some(c) = self.latent_constraint {
            LatentBallConstraint::new(c.radius)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub restart: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub measurement_error: f64,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub z_hat: Vector,
    pub x_hat: Vector,
    /// `‖A G(ẑ) − y‖²`
    pub measurement_error: f64,
    /// `‖G(ẑ) − x*‖²`, when the truth is known.
    pub reconstruction_error: Option<f64>,
    /// `‖y − A G(ẑ)‖`, an a-posteriori upper bound on the optimization slack.
    pub eps_hat: f64,
    pub best_restart: usize,
    pub per_restart: Vec<RestartTrace>,
}

/// `(‖A G(z) − y‖² + λ‖z‖², ∇_z)`.
pub fn loss(
    g: &GeneratorNet,
    op: &MeasurementOp,
    y: &[f64],
    z: &[f64],
    lambda: f64,
) -> Result<(f64, Vector)> {
    let (value, grad, _) = loss_parts(g, op, y, z, lambda)?;
    Ok((value, grad))
}

/// Loss, gradient and measurement error `‖A G(z) − y‖²`.
fn loss_parts(
    g: &GeneratorNet,
    op: &MeasurementOp,
    y: &[f64],
    z: &[f64],
    lambda: f64,
) -> Result<(f64, Vector, f64)> {
    check_dims(g, op, y)?;
    let tape = g.forward_tape(z)?;
    let residual = op.apply(&tape.output)?.sub(y);
    let measurement = residual.norm2_squared();
    let cot = op.apply_t(&residual)?.scaled(2.0);
    let mut grad = g.backward(&tape, &cot)?;
    let zv = Vector::new(z.to_vec());
    grad.axpy(2.0 * lambda, &zv);
    let value = measurement + lambda * zv.norm2_squared();
    Ok((value, grad, measurement))
}

fn check_dims(g: &GeneratorNet, op: &MeasurementOp, y: &[f64]) -> Result<()> {
    if g.n() != op.n() {
        return Err(Error::dims("generator output vs operator", op.n(), g.n()));
    }
    if y.len() != op.m() {
        return Err(Error::dims("measurements", op.m(), y.len()));
    }
    Ok(())
}

fn initial_latent(rng: &mut Rng, k: usize, init: LatentInit) -> Vector {
    match init {
        LatentInit::GaussianPrior => rng.normal_vector(k),
        LatentInit::Uniform => (0..k).map(|_| 2.0 * rng.uniform() - 1.0).collect(),
    }
}

struct RestartOutcome {
    trace: RestartTrace,
    z: Vector,
}

fn run_restart(
    g: &GeneratorNet,
    op: &MeasurementOp,
    y: &[f64],
    config: &RecoveryConfig,
    restart: usize,
) -> RestartOutcome {
    let mut rng = Rng::new(derive_seed(config.seed, restart as u64));
    let mut z = initial_latent(&mut rng, g.k(), config.init);
    if let Some(c) = config.latent_constraint {
        c.project(&mut z);
    }
    let aborted = |initial_loss: f64, z: Vector| RestartOutcome {
        trace: RestartTrace {
            restart,
            initial_loss,
            final_loss: f64::NAN,
            measurement_error: f64::NAN,
            aborted: true,
        },
        z,
    };

    let mut adam = Adam::new(
        g.k(),
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let mut initial_loss = f64::NAN;
    for step in 0..config.steps_per_restart {
        let (value, grad) = match loss(g, op, y, &z, config.lambda) {
            Ok((v, gr)) if v.is_finite() && gr.is_finite() => (v, gr),
            _ => return aborted(initial_loss, z),
        };
        if step == 0 {
            initial_loss = value;
        }
        adam.step(&mut z, &grad);
        if let Some(c) = config.latent_constraint {
            c.project(&mut z);
        }
    }
    match loss_parts(g, op, y, &z, config.lambda) {
        Ok((value, _, measurement)) if value.is_finite() => {
            if initial_loss.is_nan() {
                initial_loss = value;
            }
            RestartOutcome {
                trace: RestartTrace {
                    restart,
                    initial_loss,
                    final_loss: value,
                    measurement_error: measurement,
                    aborted: false,
                },
                z,
            }
        }
        _ => aborted(initial_loss, z),
    }
}

/// Runs `config.restarts` independent Adam descents and returns the one with
/// the smallest measurement error (lowest restart index on ties).
pub fn recover(
    g: &GeneratorNet,
    obs: &Observation,
    config: &RecoveryConfig,
) -> Result<RecoveryResult> {
    config.validate()?;
    check_dims(g, &obs.op, &obs.y)?;
    if let Some(t) = &obs.truth {
        if t.len() != g.n() {
            return Err(Error::dims("truth", g.n(), t.len()));
        }
    }

    let outcomes: Vec<RestartOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(g, &obs.op, &obs.y, config, r))
        .collect();

    let mut best: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if o.trace.aborted {
            continue;
        }
        match best {
            Some(b) if outcomes[b].trace.measurement_error <= o.trace.measurement_error => {}
            _ => best = Some(i),
        }
    }
    let best = best.ok_or(Error::AllRestartsAborted(config.restarts))?;

    let z_hat = outcomes[best].z.clone();
    let x_hat = g.forward(&z_hat)?;
    let residual = obs.op.apply(&x_hat)?.sub(&obs.y);
    let measurement_error = residual.norm2_squared();
    let reconstruction_error = obs.truth.as_ref().map(|t| dist2_squared(&x_hat, t));
    Ok(RecoveryResult {
        z_hat,
        x_hat,
        measurement_error,
        reconstruction_error,
        eps_hat: measurement_error.sqrt(),
        best_restart: best,
        per_restart: outcomes.into_iter().map(|o| o.trace).collect(),
    })
}

/// Outcome of testing `‖G(ẑ) − x*‖ ≤ 6·rep + 3‖η‖ + 2ε̂` for one recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    /// `‖G(ẑ) − x*‖`
    pub error_norm: f64,
    pub noise_norm: f64,
    pub eps_hat: f64,
    pub representation_error: f64,
    /// Right-hand side, already scaled by the slack multiplier.
    pub bound: f64,
    /// `bound − error_norm`; non-negative when the inequality holds.
    pub margin: f64,
    pub holds: bool,
    /// `2ε̂` alone already covers the error, so the check says nothing about
    /// the generator prior (typical for unoptimized `ẑ`).
    pub vacuous: bool,
}

/// Checks the recovery guarantee for an in-range truth (representation
/// error zero). `slack_multiplier` scales the right-hand side; 1 checks the
/// inequality as stated.
pub fn theorem_bound_check(
    result: &RecoveryResult,
    obs: &Observation,
    slack_multiplier: f64,
) -> Result<TheoremCheck> {
    theorem_bound_check_with_representation(result, obs, 0.0, slack_multiplier)
}

pub fn theorem_bound_check_with_representation(
    result: &RecoveryResult,
    obs: &Observation,
    representation_error: f64,
    slack_multiplier: f64,
) -> Result<TheoremCheck> {
    let truth = obs.truth.as_ref().ok_or(Error::MissingTruth)?;
    let error_norm = dist2_squared(&result.x_hat, truth).sqrt();
    let noise_norm = norm2(&obs.noise_vector());
    let eps_hat = norm2(&obs.op.apply(&result.x_hat)?.sub(&obs.y));
    let bound =
        slack_multiplier * (6.0 * representation_error + 3.0 * noise_norm + 2.0 * eps_hat);
    Ok(TheoremCheck {
        error_norm,
        noise_norm,
        eps_hat,
        representation_error,
        bound,
        margin: bound - error_norm,
        holds: error_norm <= bound,
        vacuous: error_norm <= 2.0 * eps_hat,
    })
}
