//! Decentralized virtual-time controller, neighbor estimator, and trigger.
//!
//! Agent `i` drives its virtual time with
//!
//! ```text
//! γ̈_i = −b (γ̇_i − γ̇_d) − a Σ_{j ∈ N_i(t)} (γ_i − γ̂_j) + α_i
//! ```
//!
//! where `γ̂_j` is predicted from the last sample broadcast by `j`. Between
//! samples the prediction follows `γ̈̂ = −b (γ̇̂ − γ̇_d)`, which has the closed
//! form implemented by [`estimator_propagate`]. Agent `j` runs the same
//! predictor on itself; when the self-prediction error `e_j = γ̂_j − γ_j`
//! leaves the threshold tube `h(t)`, it broadcasts a fresh sample and the
//! error resets to zero.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Virtual time and its rate for one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinationState {
    pub gamma: f64,
    pub gamma_dot: f64,
}

/// State broadcast at an event: the trigger instant and the sender's
/// virtual time and rate at that instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSample {
    pub t_event: f64,
    pub gamma: f64,
    pub gamma_dot: f64,
}

/// Coordination gains. `a` weighs neighbor disagreement, `b` damps rate
/// deviations, and `eta` regularizes the tracking-error feedback term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub a: f64,
    pub b: f64,
    pub eta: f64,
}

impl Gains {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0 && self.eta > 0.0) {
            return Err(Error::Parameter(format!(
                "gains must be positive (a={}, b={}, eta={})",
                self.a, self.b, self.eta
            )));
        }
        Ok(())
    }
}

/// Trigger threshold `h(t) = c1 + c2 e^{−decay_rate·t}`.
///
/// `decay_rate` is kept independent of the coordination gain `a`, although
/// the convergence analysis identifies the two; configurations with `c2 = 0`
/// make the distinction moot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerConfig {
    pub c1: f64,
    pub c2: f64,
    pub decay_rate: f64,
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c1 < 0.0 || self.c2 < 0.0 || self.decay_rate < 0.0 {
            return Err(Error::Parameter(
                "trigger parameters must be nonnegative".into(),
            ));
        }
        if self.c1 + self.c2 <= 0.0 {
            return Err(Error::Parameter(
                "threshold must not be identically zero (c1 + c2 > 0)".into(),
            ));
        }
        Ok(())
    }

    /// `h(t)`; monotone nonincreasing from `c1 + c2` toward `c1`.
    pub fn threshold(&self, t: f64) -> f64 {
        self.c1 + self.c2 * (-self.decay_rate * t).exp()
    }

    /// `sup_{t≥0} h(t) = c1 + c2`.
    pub fn sup(&self) -> f64 {
        self.c1 + self.c2
    }
}

/// True when the estimation error has left the threshold tube (strict).
pub fn trigger_fires(e: f64, t: f64, cfg: &TriggerConfig) -> bool {
    e.abs() - cfg.threshold(t) > 0.0
}

/// Tracking-error feedback `ṗ_dᵀ e_pf / (‖ṗ_d‖ + η)`.
///
/// Positive when the vehicle is ahead of its desired point along the motion
/// direction (speeding the desired point up), negative when behind.
pub fn alpha_term(traj_velocity: &Vector3<f64>, e_pf: &Vector3<f64>, eta: f64) -> f64 {
    traj_velocity.dot(e_pf) / (traj_velocity.norm() + eta)
}

/// Virtual-time acceleration commanded by the coordination law.
///
/// `neighbor_estimates` must hold the predicted virtual times of exactly the
/// agents in the current in-neighborhood.
pub fn controller_rhs(
    state: &CoordinationState,
    neighbor_estimates: &[f64],
    gains: &Gains,
    gamma_dot_d: f64,
    alpha: f64,
) -> f64 {
    let disagreement: f64 = neighbor_estimates.iter().map(|g| state.gamma - g).sum();
    -gains.b * (state.gamma_dot - gamma_dot_d) - gains.a * disagreement + alpha
}

/// Closed-form prediction from a sample: with `Δ = t − t_event`,
///
/// ```text
/// γ̇̂(t) = γ̇_d + (γ̇(t_k) − γ̇_d) e^{−bΔ}
/// γ̂(t)  = γ(t_k) + γ̇_d Δ + (γ̇(t_k) − γ̇_d)(1 − e^{−bΔ})/b
/// ```
///
/// `gamma_dot_d` must be constant over `[t_event, t]`.
pub fn estimator_propagate(
    sample: &EstimatorSample,
    b: f64,
    gamma_dot_d: f64,
    t: f64,
) -> Result<(f64, f64)> {
    if t < sample.t_event {
        return Err(Error::TemporalOrder(format!(
            "query at t={t} precedes the sample time {}",
            sample.t_event
        )));
    }
    let dt = t - sample.t_event;
    let dev = sample.gamma_dot - gamma_dot_d;
    let decay = (-b * dt).exp();
    let gamma_hat_dot = gamma_dot_d + dev * decay;
    // (1 − e^{−bΔ})/b via expm1 for small bΔ.
    let gamma_hat = sample.gamma + gamma_dot_d * dt - dev * (-b * dt).exp_m1() / b;
    Ok((gamma_hat, gamma_hat_dot))
}

/// Self-prediction error `e_j(t) = γ̂_j(t) − γ_j(t)` where `γ̂_j` replays the
/// agent's own most recent broadcast sample.
pub fn self_estimation_error(
    state: &CoordinationState,
    own_sample: &EstimatorSample,
    b: f64,
    gamma_dot_d: f64,
    t: f64,
) -> Result<f64> {
    let (gamma_hat, _) = estimator_propagate(own_sample, b, gamma_dot_d, t)?;
    Ok(gamma_hat - state.gamma)
}

/// Per-agent store of the most recent sample received from each peer.
///
/// Stale receptions (an event time not newer than the stored one) are
/// discarded, which makes duplicate and out-of-order deliveries harmless.
#[derive(Debug, Clone)]
pub struct EstimatorBank {
    samples: Vec<Option<EstimatorSample>>,
}

impl EstimatorBank {
    pub fn new(n: usize) -> Self {
        Self { samples: vec![None; n] }
    }

    /// Stores a sample from agent `j` (1-indexed). Returns true when the
    /// sample was accepted (strictly newer than the stored one).
    pub fn accept(&mut self, j: usize, sample: EstimatorSample) -> bool {
        let slot = &mut self.samples[j - 1];
        match slot {
            Some(existing) if sample.t_event <= existing.t_event => false,
            _ => {
                *slot = Some(sample);
                true
            }
        }
    }

    pub fn sample_of(&self, j: usize) -> Option<&EstimatorSample> {
        self.samples[j - 1].as_ref()
    }

    /// Predicted `(γ̂_j, γ̇̂_j)` at time `t`, if a sample from `j` exists.
    pub fn estimate(&self, j: usize, b: f64, gamma_dot_d: f64, t: f64) -> Result<Option<(f64, f64)>> {
        match &self.samples[j - 1] {
            None => Ok(None),
            Some(s) => estimator_propagate(s, b, gamma_dot_d, t).map(Some),
        }
    }

    /// Replaces every stored sample by its prediction at time `t`.
    ///
    /// Called when the reference rate `γ̇_d` changes: the closed form is only
    /// valid per constant piece, so propagation re-anchors at the switch.
    pub fn reanchor(&mut self, b: f64, old_gamma_dot_d: f64, t: f64) -> Result<()> {
        for s in self.samples.iter_mut().flatten() {
            let (g, gd) = estimator_propagate(s, b, old_gamma_dot_d, t)?;
            *s = EstimatorSample { t_event: t, gamma: g, gamma_dot: gd };
        }
        Ok(())
    }
}
