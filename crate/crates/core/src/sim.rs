//! Fixed-step simulation engine.
//!
//! One step at time `t` proceeds as: look up the active edge set; evaluate
//! every agent's self-estimation error against the threshold and fire
//! triggers (each firing re-anchors the sender's own predictor and replaces
//! its queued sample); deliver the newest queued samples over the active
//! edges (a receiver ignores anything not strictly newer than what it
//! holds, so duplicates and reordered deliveries are harmless); log the
//! sample row; then advance the virtual-time subsystem and the vehicles by
//! one RK4 step. Events are detected at step boundaries only, and a sample
//! emitted at `t` is deliverable at `t` when the edge is already active
//! (links carry no delay).
//!
//! The loop owns all state and iterates in fixed order over deterministic
//! containers, so identical configurations produce bit-identical traces.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::coordination_error;
use crate::coordination::{
    alpha_term, controller_rhs, estimator_propagate, self_estimation_error, trigger_fires,
    CoordinationState, EstimatorBank, EstimatorSample,
};
use crate::error::{Error, Result};
use crate::graph::{has_delta_spanning_tree, NetworkSchedule, QMatrix};
use crate::scenario::{CommsMode, ScenarioConfig};
use crate::trace::{Diagnostics, EventRecord, TraceLog};
use crate::vehicle::{pf_error, VehicleState};

use std::collections::BTreeSet;

/// Concatenated integration state of the whole fleet.
#[derive(Clone)]
struct FleetState {
    gamma: Vec<f64>,
    gamma_dot: Vec<f64>,
    pos: Vec<Vector3<f64>>,
    vel: Vec<Vector3<f64>>,
}

impl FleetState {
    fn zeros(n: usize) -> Self {
        Self {
            gamma: vec![0.0; n],
            gamma_dot: vec![0.0; n],
            pos: vec![Vector3::zeros(); n],
            vel: vec![Vector3::zeros(); n],
        }
    }

    /// `self + h·d`, the stage state of an explicit Runge-Kutta step.
    fn axpy(&self, h: f64, d: &FleetState) -> Self {
        let n = self.gamma.len();
        let mut out = self.clone();
        for i in 0..n {
            out.gamma[i] += h * d.gamma[i];
            out.gamma_dot[i] += h * d.gamma_dot[i];
            out.pos[i] += d.pos[i] * h;
            out.vel[i] += d.vel[i] * h;
        }
        out
    }

    fn rk4_combine(&self, dt: f64, k1: &Self, k2: &Self, k3: &Self, k4: &Self) -> Self {
        let n = self.gamma.len();
        let w = dt / 6.0;
        let mut out = self.clone();
        for i in 0..n {
            out.gamma[i] += w * (k1.gamma[i] + 2.0 * k2.gamma[i] + 2.0 * k3.gamma[i] + k4.gamma[i]);
            out.gamma_dot[i] +=
                w * (k1.gamma_dot[i] + 2.0 * k2.gamma_dot[i] + 2.0 * k3.gamma_dot[i] + k4.gamma_dot[i]);
            out.pos[i] += (k1.pos[i] + (k2.pos[i] + k3.pos[i]) * 2.0 + k4.pos[i]) * w;
            out.vel[i] += (k1.vel[i] + (k2.vel[i] + k3.vel[i]) * 2.0 + k4.vel[i]) * w;
        }
        out
    }
}

/// Edge set active at time `t` (right-continuous; cyclic schedules wrap).
pub fn active_edges(schedule: &NetworkSchedule, t: f64) -> &BTreeSet<(usize, usize)> {
    schedule.graph_at(t).edges()
}

/// Integral-connectivity verdict for one window.
#[derive(Debug, Clone)]
pub struct WindowCheck {
    pub start: f64,
    pub end: f64,
    pub holds: bool,
    pub roots: BTreeSet<usize>,
}

/// Scans integral connectivity over one schedule period.
///
/// Windows of length `window` start at every segment boundary and at every
/// multiple of `window` inside one cycle (the whole span for non-cyclic
/// schedules); by periodicity this covers all `t ≥ 0` for cyclic schedules.
pub fn scan_integral_connectivity(
    schedule: &NetworkSchedule,
    window: f64,
    delta: f64,
) -> Result<Vec<WindowCheck>> {
    if !(window > 0.0) {
        return Err(Error::Parameter(format!("window must be positive, got {window}")));
    }
    let span = schedule.cycle_duration();
    let mut starts: Vec<f64> = schedule.segment_starts();
    let mut m = 1.0;
    while m * window < span {
        starts.push(m * window);
        m += 1.0;
    }
    starts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    starts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut out = Vec::with_capacity(starts.len());
    for s in starts {
        let l_int = schedule.integrated_laplacian(s, window)?;
        let check = has_delta_spanning_tree(&l_int, delta)?;
        out.push(WindowCheck { start: s, end: s + window, holds: check.holds, roots: check.roots });
    }
    Ok(out)
}

/// Integrates `ẋ = −(a/b) L(t) x` over the schedule with fixed-step RK4
/// (the Laplacian is frozen per step at its start-of-step value). Returns
/// the sample times and the state at each sample.
pub fn run_consensus_reference(
    schedule: &NetworkSchedule,
    a: f64,
    b: f64,
    x0: &[f64],
    dt: f64,
    t_end: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if x0.len() != schedule.n() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, schedule has {} nodes",
            x0.len(),
            schedule.n()
        )));
    }
    if !(dt > 0.0 && t_end > 0.0 && a > 0.0 && b > 0.0) {
        return Err(Error::Parameter(
            "a, b, dt and t_end must all be positive".into(),
        ));
    }
    let n = x0.len();
    let steps = ((t_end / dt).round() as usize).max(1);
    let ratio = a / b;
    let mut x = x0.to_vec();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x.clone());
    for step in 0..steps {
        let t = step as f64 * dt;
        let l = schedule.graph_at(t).laplacian();
        let f = |y: &[f64]| -> Vec<f64> {
            let mut d = vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += l[(i, j)] * y[j];
                }
                d[i] = -ratio * acc;
            }
            d
        };
        let k1 = f(&x);
        let y2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k1[i]).collect();
        let k2 = f(&y2);
        let y3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k2[i]).collect();
        let k3 = f(&y3);
        let y4: Vec<f64> = (0..n).map(|i| x[i] + dt * k3[i]).collect();
        let k4 = f(&y4);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !x[i].is_finite() {
                return Err(Error::Numeric {
                    step,
                    t,
                    what: format!("consensus reference state {i} diverged"),
                });
            }
        }
        times.push((step + 1) as f64 * dt);
        states.push(x.clone());
    }
    Ok((times, states))
}

/// Runs one scenario to completion and returns its trace.
///
/// Rejects the scenario when the schedule fails the integral-connectivity
/// scan (unless waived in the config). Any non-finite state aborts with the
/// offending step.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<TraceLog> {
    let warnings = cfg.validate()?;
    let schedule = cfg.build_schedule()?;
    let trajs = cfg.build_trajectories()?;
    let n = cfg.n;
    let dt = cfg.dt;
    let steps = cfg.steps();
    let t_f = cfg.mission_t_f();
    let gains = cfg.gains;
    let et_mode = cfg.comms == CommsMode::EventTriggered;

    if !cfg.waive_connectivity_check {
        let windows = scan_integral_connectivity(&schedule, cfg.qos.window_s, cfg.qos.delta)?;
        if let Some(w) = windows.iter().find(|w| !w.holds) {
            return Err(Error::ScenarioRejected { window_start: w.start, window_end: w.end });
        }
    }

    let q = if n >= 2 { Some(QMatrix::new(n)?) } else { None };

    let mut gamma = cfg.initial.gamma.clone();
    let mut gamma_dot = cfg.initial.gamma_dot.clone();
    let mut vehicles: Vec<VehicleState> = (0..n)
        .map(|i| {
            let position = cfg
                .initial
                .positions
                .as_ref()
                .map(|p| Vector3::from(p[i]))
                .unwrap_or_else(|| trajs[i].position(gamma[i]));
            let velocity = cfg
                .initial
                .velocities
                .as_ref()
                .map(|v| Vector3::from(v[i]))
                .unwrap_or_else(|| trajs[i].velocity(gamma[i]) * gamma_dot[i]);
            VehicleState { position, velocity }
        })
        .collect();

    let mut arrived = vec![false; n];
    let mut arrival: Vec<Option<f64>> = vec![None; n];

    let mut own_sample: Vec<EstimatorSample> = (0..n)
        .map(|i| EstimatorSample { t_event: 0.0, gamma: gamma[i], gamma_dot: gamma_dot[i] })
        .collect();
    let mut banks: Vec<EstimatorBank> = (0..n).map(|_| EstimatorBank::new(n)).collect();
    let mut events: Vec<EventRecord> = Vec::new();
    let mut latest_event: Vec<usize> = vec![0; n];
    if et_mode {
        for j in 0..n {
            events.push(EventRecord {
                agent: j + 1,
                t_event: 0.0,
                sample: own_sample[j],
                error_at_trigger: 0.0,
                initial: true,
                delivered_to: Vec::new(),
            });
            latest_event[j] = j;
        }
    }

    let mut rng = (cfg.disturbance.accel_max > 0.0).then(|| ChaCha8Rng::seed_from_u64(cfg.seed));

    let pieces = &cfg.gamma_dot_d;
    let mut piece_idx = 0usize;

    let mut diag = Diagnostics { warnings, ..Default::default() };
    let samples = steps + 1;
    let mut tr_times = Vec::with_capacity(samples);
    let mut tr_gamma: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); n];
    let mut tr_gamma_dot: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); n];
    let mut tr_gamma_ddot: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); n];
    let mut tr_est: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); n];
    let mut tr_pf_vec: Vec<Vec<[f64; 3]>> = vec![Vec::with_capacity(samples); n];
    let mut tr_pf: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); n];
    let mut tr_xi = Vec::with_capacity(samples);
    let mut tr_gdd = Vec::with_capacity(samples);

    for step in 0..=steps {
        let t = step as f64 * dt;

        // Reference-rate switch: re-anchor every predictor at the change
        // instant under the outgoing rate, then adopt the new one.
        while piece_idx + 1 < pieces.len() && pieces[piece_idx + 1].t < t + 0.5 * dt {
            let old = pieces[piece_idx].value;
            for sample in own_sample.iter_mut() {
                let (g, gd) = estimator_propagate(sample, gains.b, old, t)?;
                *sample = EstimatorSample { t_event: t, gamma: g, gamma_dot: gd };
            }
            for bank in &mut banks {
                bank.reanchor(gains.b, old, t)?;
            }
            piece_idx += 1;
        }
        let gdd = pieces[piece_idx].value;

        let graph = schedule.graph_at(t);
        if schedule.is_past_end(t) {
            diag.schedule_past_end_steps += 1;
        }

        // Triggers, then deliveries over the active edges.
        let mut est_now = vec![0.0; n];
        if et_mode {
            for j in 0..n {
                let state = CoordinationState { gamma: gamma[j], gamma_dot: gamma_dot[j] };
                let e = self_estimation_error(&state, &own_sample[j], gains.b, gdd, t)?;
                if trigger_fires(e, t, &cfg.trigger) {
                    own_sample[j] =
                        EstimatorSample { t_event: t, gamma: gamma[j], gamma_dot: gamma_dot[j] };
                    events.push(EventRecord {
                        agent: j + 1,
                        t_event: t,
                        sample: own_sample[j],
                        error_at_trigger: e,
                        initial: false,
                        delivered_to: Vec::new(),
                    });
                    latest_event[j] = events.len() - 1;
                    // est_now[j] stays 0: the predictor was just re-anchored.
                } else {
                    est_now[j] = e;
                }
            }
            for &(i, j) in graph.edges() {
                if banks[i - 1].accept(j, own_sample[j - 1]) {
                    events[latest_event[j - 1]].delivered_to.push((i, t));
                }
            }
        }

        // Instantaneous per-agent quantities at t.
        let mut alpha = vec![0.0; n];
        for i in 0..n {
            if trajs[i].clamps(gamma[i]) {
                diag.domain_clamped_evals += 1;
            }
            let e_pf = pf_error(&vehicles[i], &trajs[i], gamma[i]);
            tr_pf_vec[i].push(e_pf.into());
            tr_pf[i].push(e_pf.norm());
            alpha[i] = alpha_term(&trajs[i].velocity(gamma[i]), &e_pf, gains.eta);
        }
        let neighbors: Vec<Vec<usize>> = (1..=n).map(|i| graph.in_neighbors(i)).collect();
        for i in 0..n {
            let ddot = if arrived[i] {
                0.0
            } else {
                let mut ests = Vec::with_capacity(neighbors[i].len());
                for &j in &neighbors[i] {
                    let g_hat = if et_mode {
                        match banks[i].estimate(j, gains.b, gdd, t)? {
                            Some((g, _)) => g,
                            None => {
                                return Err(Error::Internal(format!(
                                    "agent {} has no sample from active in-neighbor {j} at t={t}",
                                    i + 1
                                )))
                            }
                        }
                    } else {
                        gamma[j - 1]
                    };
                    ests.push(g_hat);
                }
                let state = CoordinationState { gamma: gamma[i], gamma_dot: gamma_dot[i] };
                controller_rhs(&state, &ests, &gains, gdd, alpha[i])
            };
            tr_gamma_ddot[i].push(ddot);
        }
        let xi = match &q {
            Some(q) => coordination_error(&gamma, &gamma_dot, gdd, q)?.norm,
            None => (gamma_dot[0] - gdd).abs(),
        };
        tr_times.push(t);
        for i in 0..n {
            tr_gamma[i].push(gamma[i]);
            tr_gamma_dot[i].push(gamma_dot[i]);
            tr_est[i].push(est_now[i]);
        }
        tr_xi.push(xi);
        tr_gdd.push(gdd);

        if step == steps {
            break;
        }

        // One joint RK4 step over the whole fleet state (γ, γ̇, p, v). The
        // neighbor predictions depend only on the stage time, so they are
        // cached per stage; tracking feedback, the α term, and the vehicle
        // acceleration are evaluated at the stage states, which keeps the
        // step genuinely fourth-order between events and topology switches.
        let stage_times = [t, t + 0.5 * dt, t + dt];
        let est_cache: Option<Vec<Vec<Vec<f64>>>> = if et_mode {
            let mut cache = Vec::with_capacity(3);
            for &tau in &stage_times {
                let mut per_agent = Vec::with_capacity(n);
                for i in 0..n {
                    let mut ests = Vec::with_capacity(neighbors[i].len());
                    for &j in &neighbors[i] {
                        match banks[i].estimate(j, gains.b, gdd, tau)? {
                            Some((g, _)) => ests.push(g),
                            None => {
                                return Err(Error::Internal(format!(
                                    "agent {} has no sample from active in-neighbor {j} at t={tau}",
                                    i + 1
                                )))
                            }
                        }
                    }
                    per_agent.push(ests);
                }
                cache.push(per_agent);
            }
            Some(cache)
        } else {
            None
        };
        let extra_accel: Vec<Vector3<f64>> = (0..n)
            .map(|_| match &mut rng {
                Some(r) => {
                    Vector3::new(
                        r.random_range(-1.0..=1.0),
                        r.random_range(-1.0..=1.0),
                        r.random_range(-1.0..=1.0),
                    ) * cfg.disturbance.accel_max
                }
                None => Vector3::zeros(),
            })
            .collect();

        let deriv = |stage: usize, s: &FleetState| -> FleetState {
            let mut d = FleetState::zeros(n);
            for i in 0..n {
                let g_i = if arrived[i] { t_f } else { s.gamma[i] };
                let gd_i = if arrived[i] { 0.0 } else { s.gamma_dot[i] };
                let traj_vel = trajs[i].velocity(g_i);
                let e_pf = s.pos[i] - trajs[i].position(g_i);
                if !arrived[i] {
                    let coupling: f64 = match &est_cache {
                        Some(cache) => cache[stage][i].iter().map(|ghat| g_i - ghat).sum(),
                        None => neighbors[i].iter().map(|&j| g_i - s.gamma[j - 1]).sum(),
                    };
                    let alpha_i = alpha_term(&traj_vel, &e_pf, gains.eta);
                    d.gamma[i] = gd_i;
                    d.gamma_dot[i] = -gains.b * (gd_i - gdd) - gains.a * coupling + alpha_i;
                }
                d.pos[i] = s.vel[i];
                d.vel[i] = -e_pf * cfg.pf.kp - (s.vel[i] - traj_vel * gd_i) * cfg.pf.kd
                    + extra_accel[i];
            }
            d
        };

        let y0 = FleetState {
            gamma: gamma.clone(),
            gamma_dot: gamma_dot.clone(),
            pos: vehicles.iter().map(|v| v.position).collect(),
            vel: vehicles.iter().map(|v| v.velocity).collect(),
        };
        let k1 = deriv(0, &y0);
        let k2 = deriv(1, &y0.axpy(0.5 * dt, &k1));
        let k3 = deriv(1, &y0.axpy(0.5 * dt, &k2));
        let k4 = deriv(2, &y0.axpy(dt, &k3));
        let next = y0.rk4_combine(dt, &k1, &k2, &k3, &k4);

        for i in 0..n {
            vehicles[i] = VehicleState { position: next.pos[i], velocity: next.vel[i] };
            if arrived[i] {
                continue;
            }
            let g_old = gamma[i];
            gamma[i] = next.gamma[i];
            gamma_dot[i] = next.gamma_dot[i];

            if gamma[i] >= t_f {
                let frac = if gamma[i] > g_old {
                    ((t_f - g_old) / (gamma[i] - g_old)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                arrival[i] = Some(t + dt * frac);
                gamma[i] = t_f;
                gamma_dot[i] = 0.0;
                arrived[i] = true;
                diag.clamp_events.push((i + 1, t + dt));
            }
            if gamma_dot[i] < 0.0 {
                diag.negative_rate_count += 1;
                if diag.negative_rate_instants.len() < 64 {
                    diag.negative_rate_instants.push((i + 1, t + dt));
                }
            }
        }

        for i in 0..n {
            let finite = gamma[i].is_finite()
                && gamma_dot[i].is_finite()
                && vehicles[i].position.iter().all(|v| v.is_finite())
                && vehicles[i].velocity.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Numeric {
                    step,
                    t: t + dt,
                    what: format!("state of agent {} became non-finite", i + 1),
                });
            }
        }
    }

    Ok(TraceLog {
        n,
        dt,
        times: tr_times,
        gamma: tr_gamma,
        gamma_dot: tr_gamma_dot,
        gamma_ddot: tr_gamma_ddot,
        est_error: tr_est,
        pf_error: tr_pf_vec,
        pf_error_norm: tr_pf,
        xi_norm: tr_xi,
        gamma_dot_d: tr_gdd,
        events,
        arrival_times: arrival,
        diagnostics: diag,
    })
}
