//! Gaussian-policy gradient optimizer for black-box, non-differentiable losses.
//!
//! Candidates `theta_b = theta + eta_b` are drawn from the isotropic density
//! `exp(-|theta_b - theta|^2 / sigma_pi^2)`, i.e. with per-coordinate variance
//! `sigma_pi^2 / 2`. The update pulls `theta` toward the best point seen so far:
//!
//! ```text
//! theta <- ( theta - eps' * sum_b (l_b - l_theta) / l_theta * (theta_b - theta) + theta* ) / 2
//! ```
//!
//! where `eps' = eps / B` by default (see [`PolicyConfig::average_over_perturbations`]).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Perturbations per iteration.
    #[serde(rename = "B")]
    pub perturbations: usize,
    pub sigma_pi2: f64,
    pub epsilon: f64,
    /// Scale the normalized sum by `1/B`, matching the Monte-Carlo mean of the
    /// gradient estimator. Without it the step noise near an optimum is `B`
    /// times larger.
    pub average_over_perturbations: bool,
    /// Also let the best perturbation become `theta*`, not only evaluated
    /// `theta` iterates.
    pub refresh_from_candidates: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            perturbations: 20,
            sigma_pi2: 0.01,
            epsilon: 0.5,
            average_over_perturbations: true,
            refresh_from_candidates: true,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.perturbations == 0 {
            return Err(Error::Validation("policy: B must be >= 1".into()));
        }
        if !(self.sigma_pi2 > 0.0 && self.sigma_pi2.is_finite()) {
            return Err(Error::Validation("policy: sigma_pi2 must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Validation("policy: epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Per-coordinate standard deviation of the perturbations.
    pub fn perturbation_std(&self) -> f64 {
        (self.sigma_pi2 / 2.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStep {
    pub iteration: usize,
    pub loss_theta: f64,
    pub loss_star: f64,
    /// The iterate whose loss is `loss_theta`.
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub theta: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub loss_star: f64,
    pub history: Vec<PolicyStep>,
}

impl PolicyState {
    pub fn new(theta: Vec<f64>) -> Self {
        Self { theta_star: theta.clone(), theta, loss_star: f64::INFINITY, history: Vec::new() }
    }

    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

pub fn sample_perturbations<R: Rng + ?Sized>(theta: &[f64], cfg: &PolicyConfig, rng: &mut R) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, cfg.perturbation_std()).expect("positive std");
    (0..cfg.perturbations)
        .map(|_| theta.iter().map(|t| t + normal.sample(rng)).collect())
        .collect()
}

fn check_batch(perturbations: &[Vec<f64>], losses: &[f64], theta: &[f64]) -> Result<()> {
    if perturbations.len() != losses.len() {
        return Err(Error::Argument(format!(
            "{} perturbations but {} losses",
            perturbations.len(),
            losses.len()
        )));
    }
    if perturbations.is_empty() {
        return Err(Error::Argument("no perturbations".into()));
    }
    if let Some(p) = perturbations.iter().find(|p| p.len() != theta.len()) {
        return Err(Error::Argument(format!("perturbation of length {} for N = {}", p.len(), theta.len())));
    }
    Ok(())
}

/// Score-function estimate `(1/B) sum_b l_b 2/(N sigma^2) (theta_b - theta)`.
pub fn pg_gradient_estimate(
    perturbations: &[Vec<f64>],
    losses: &[f64],
    theta: &[f64],
    cfg: &PolicyConfig,
) -> Result<Vec<f64>> {
    check_batch(perturbations, losses, theta)?;
    let b = perturbations.len() as f64;
    let scale = 2.0 / (theta.len() as f64 * cfg.sigma_pi2) / b;
    let mut grad = vec![0.0; theta.len()];
    for (p, &l) in perturbations.iter().zip(losses) {
        for ((g, pi), t) in grad.iter_mut().zip(p).zip(theta) {
            *g += scale * l * (pi - t);
        }
    }
    Ok(grad)
}

/// Applies the stabilized update, then refreshes `theta*` from the evaluated
/// `theta` (and, if enabled, from the best perturbation).
pub fn stabilized_update(
    state: &PolicyState,
    perturbations: &[Vec<f64>],
    losses: &[f64],
    loss_theta: f64,
    cfg: &PolicyConfig,
) -> Result<PolicyState> {
    check_batch(perturbations, losses, &state.theta)?;
    if !(loss_theta > 0.0) || !loss_theta.is_finite() {
        return Err(Error::Domain(format!("loss of theta must be positive and finite, got {loss_theta}")));
    }
    if let Some(l) = losses.iter().find(|l| !l.is_finite()) {
        return Err(Error::Domain(format!("non-finite perturbation loss {l}")));
    }
    let step = if cfg.average_over_perturbations {
        cfg.epsilon / perturbations.len() as f64
    } else {
        cfg.epsilon
    };
    let mut sum = vec![0.0; state.theta.len()];
    for (p, &l) in perturbations.iter().zip(losses) {
        let w = (l - loss_theta) / loss_theta;
        for ((s, pi), t) in sum.iter_mut().zip(p).zip(&state.theta) {
            *s += w * (pi - t);
        }
    }
    let theta: Vec<f64> = state
        .theta
        .iter()
        .zip(&sum)
        .zip(&state.theta_star)
        .map(|((t, s), ts)| 0.5 * (t - step * s + ts))
        .collect();

    let mut next = PolicyState { theta, ..state.clone() };
    if loss_theta < next.loss_star {
        next.loss_star = loss_theta;
        next.theta_star = state.theta.clone();
    }
    if cfg.refresh_from_candidates {
        let best = losses.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, &l)| (i, l));
        if let Some((i, l)) = best {
            if l < next.loss_star {
                next.loss_star = l;
                next.theta_star = perturbations[i].clone();
            }
        }
    }
    next.history.push(PolicyStep {
        iteration: state.history.len(),
        loss_theta,
        loss_star: next.loss_star,
        theta: state.theta.clone(),
    });
    Ok(next)
}

/// A stochastic loss that evaluates `theta` and all candidates on one common
/// draw of data.
pub trait Objective {
    fn evaluate(&mut self, theta: &[f64], candidates: &[Vec<f64>]) -> Result<(f64, Vec<f64>)>;
}

/// Adapter for deterministic pointwise losses.
pub struct FnObjective<F>(pub F);

impl<F: FnMut(&[f64]) -> f64> Objective for FnObjective<F> {
    fn evaluate(&mut self, theta: &[f64], candidates: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        let l = (self.0)(theta);
        Ok((l, candidates.iter().map(|c| (self.0)(c)).collect()))
    }
}

/// One sample-evaluate-update iteration.
pub fn pg_step<O: Objective + ?Sized, R: Rng + ?Sized>(
    state: &PolicyState,
    objective: &mut O,
    cfg: &PolicyConfig,
    rng: &mut R,
) -> Result<PolicyState> {
    let iteration = state.history.len();
    let candidates = sample_perturbations(&state.theta, cfg, rng);
    let (loss_theta, losses) = objective
        .evaluate(&state.theta, &candidates)
        .map_err(|e| Error::Evaluator { iteration, message: e.to_string() })?;
    stabilized_update(state, &candidates, &losses, loss_theta, cfg)
}

pub fn optimize<O: Objective + ?Sized, R: Rng + ?Sized>(
    objective: &mut O,
    theta0: Vec<f64>,
    cfg: &PolicyConfig,
    iterations: usize,
    rng: &mut R,
) -> Result<PolicyState> {
    cfg.validate()?;
    let mut state = PolicyState::new(theta0);
    for _ in 0..iterations {
        state = pg_step(&state, objective, cfg, rng)?;
    }
    Ok(state)
}
