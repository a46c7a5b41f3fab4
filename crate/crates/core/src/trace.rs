//! Run artifacts: the sampled trace, the event log, and the summary report.
//!
//! CSV floats carry 17 significant digits so that files round-trip exactly
//! and identical runs produce byte-identical output.

use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{
    check_iss_envelope, min_interevent_bound, EnvelopeCheck, InterEventBound, TheoreticalBounds,
};
use crate::coordination::EstimatorSample;
use crate::error::Result;
use crate::scenario::ScenarioConfig;

/// Slack added to the trigger threshold when checking logged estimation
/// errors: the trigger is evaluated once per step, so a crossing can
/// overshoot by at most one step of error growth.
pub const EST_ERROR_STEP_SLACK: f64 = 1e-4;

/// One broadcast sample, with its delivery fan-out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    /// 1-indexed sender.
    pub agent: usize,
    pub t_event: f64,
    pub sample: EstimatorSample,
    /// Self-estimation error that crossed the threshold (0 for the initial
    /// broadcast at mission start).
    pub error_at_trigger: f64,
    pub initial: bool,
    /// `(receiver, t_delivered)` pairs, in delivery order.
    pub delivered_to: Vec<(usize, f64)>,
}

/// Non-fatal observations collected during a run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    /// Instants where an agent's rate went negative (virtual time must be
    /// nondecreasing; this is logged, not clamped). Capped at 64 samples.
    pub negative_rate_instants: Vec<(usize, f64)>,
    pub negative_rate_count: usize,
    /// `(agent, t)` where the virtual time was clamped at arrival.
    pub clamp_events: Vec<(usize, f64)>,
    /// Steps taken past the end of a non-cyclic schedule.
    pub schedule_past_end_steps: usize,
    /// Trajectory evaluations outside `[0, t_f]` (clamped to the endpoint).
    pub domain_clamped_evals: usize,
    /// Validation warnings carried over from the scenario.
    pub warnings: Vec<String>,
}

/// Time-indexed record of a simulation run.
#[derive(Debug, Clone)]
pub struct TraceLog {
    pub n: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    /// Per-agent series, indexed `[agent][sample]` with 0-based agents.
    pub gamma: Vec<Vec<f64>>,
    pub gamma_dot: Vec<Vec<f64>>,
    pub gamma_ddot: Vec<Vec<f64>>,
    /// Self-estimation error of each agent (post-event value at the sample).
    pub est_error: Vec<Vec<f64>>,
    /// Per-agent tracking error vectors `e_PF,i = p_i − p_d,i(γ_i)`.
    pub pf_error: Vec<Vec<[f64; 3]>>,
    /// Per-agent tracking error norms `‖e_PF,i‖` (derived, kept for cheap
    /// column access).
    pub pf_error_norm: Vec<Vec<f64>>,
    /// Stacked coordination-error norm `‖ξ‖`.
    pub xi_norm: Vec<f64>,
    /// Reference rate at each sample.
    pub gamma_dot_d: Vec<f64>,
    pub events: Vec<EventRecord>,
    pub arrival_times: Vec<Option<f64>>,
    pub diagnostics: Diagnostics,
}

impl TraceLog {
    pub fn samples(&self) -> usize {
        self.times.len()
    }

    /// `max_{i<j} |γ_i − γ_j|` at one sample.
    pub fn pairwise_gamma_gap(&self, sample: usize) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for agent in 0..self.n {
            let g = self.gamma[agent][sample];
            lo = lo.min(g);
            hi = hi.max(g);
        }
        if self.n == 0 {
            0.0
        } else {
            hi - lo
        }
    }

    /// `max_i |γ̇_i − γ̇_d|` at one sample.
    pub fn rate_deviation(&self, sample: usize) -> f64 {
        let gdd = self.gamma_dot_d[sample];
        (0..self.n)
            .map(|agent| (self.gamma_dot[agent][sample] - gdd).abs())
            .fold(0.0, f64::max)
    }

    /// Stacked tracking-error norm `‖e_PF‖ = √(Σ_i ‖e_PF,i‖²)` at one sample.
    pub fn stacked_pf_norm(&self, sample: usize) -> f64 {
        (0..self.n)
            .map(|agent| self.pf_error_norm[agent][sample].powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_stacked_pf_norm(&self) -> f64 {
        (0..self.samples())
            .map(|s| self.stacked_pf_norm(s))
            .fold(0.0, f64::max)
    }

    pub fn max_abs_est_error(&self) -> f64 {
        self.est_error
            .iter()
            .flat_map(|row| row.iter())
            .fold(0.0, |acc, e| acc.max(e.abs()))
    }

    /// Event timestamps of one 1-indexed agent, in order.
    pub fn event_times(&self, agent: usize) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.agent == agent)
            .map(|e| e.t_event)
            .collect()
    }

    /// Smallest spacing between consecutive events of the same agent.
    pub fn min_interevent_gap(&self) -> Option<f64> {
        let mut min_gap: Option<f64> = None;
        for agent in 1..=self.n {
            let times = self.event_times(agent);
            for w in times.windows(2) {
                let gap = w[1] - w[0];
                min_gap = Some(min_gap.map_or(gap, |m: f64| m.min(gap)));
            }
        }
        min_gap
    }

    pub fn events_per_agent(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n];
        for e in &self.events {
            counts[e.agent - 1] += 1;
        }
        counts
    }

    /// SHA-256 over every numeric series and event, as a hex string. Two
    /// runs of the same scenario must agree on this.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |xs: &[f64]| {
            for x in xs {
                h.update(x.to_bits().to_le_bytes());
            }
        };
        feed(&self.times);
        for agent in 0..self.n {
            feed(&self.gamma[agent]);
            feed(&self.gamma_dot[agent]);
            feed(&self.gamma_ddot[agent]);
            feed(&self.est_error[agent]);
            feed(&self.pf_error_norm[agent]);
            for v in &self.pf_error[agent] {
                feed(v);
            }
        }
        feed(&self.xi_norm);
        feed(&self.gamma_dot_d);
        for e in &self.events {
            h.update(e.agent.to_le_bytes());
            h.update(e.t_event.to_bits().to_le_bytes());
            h.update(e.sample.gamma.to_bits().to_le_bytes());
            h.update(e.sample.gamma_dot.to_bits().to_le_bytes());
            for (r, t) in &e.delivered_to {
                h.update(r.to_le_bytes());
                h.update(t.to_bits().to_le_bytes());
            }
        }
        hex_string(&h.finalize())
    }

    /// Writes the sample table: one row per step, floats with 17 significant
    /// digits.
    pub fn write_trace_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut header = String::from("t");
        for i in 1..=self.n {
            header.push_str(&format!(",gamma_{i}"));
        }
        for i in 1..=self.n {
            header.push_str(&format!(",gamma_dot_{i}"));
        }
        header.push_str(",xi_tc_norm");
        for i in 1..=self.n {
            header.push_str(&format!(",e_pf_{i}"));
        }
        for i in 1..=self.n {
            header.push_str(&format!(",e_est_{i}"));
        }
        for i in 1..=self.n {
            header.push_str(&format!(",gamma_ddot_{i}"));
        }
        writeln!(out, "{header}")?;
        for s in 0..self.samples() {
            let mut row = fmt_f64(self.times[s]);
            for agent in 0..self.n {
                row.push(',');
                row.push_str(&fmt_f64(self.gamma[agent][s]));
            }
            for agent in 0..self.n {
                row.push(',');
                row.push_str(&fmt_f64(self.gamma_dot[agent][s]));
            }
            row.push(',');
            row.push_str(&fmt_f64(self.xi_norm[s]));
            for agent in 0..self.n {
                row.push(',');
                row.push_str(&fmt_f64(self.pf_error_norm[agent][s]));
            }
            for agent in 0..self.n {
                row.push(',');
                row.push_str(&fmt_f64(self.est_error[agent][s]));
            }
            for agent in 0..self.n {
                row.push(',');
                row.push_str(&fmt_f64(self.gamma_ddot[agent][s]));
            }
            writeln!(out, "{row}")?;
        }
        Ok(())
    }

    /// Writes the event log: one row per broadcast, with the delivery
    /// fan-out packed as `receiver@t` pairs.
    pub fn write_events_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "agent,t_event,gamma,gamma_dot,error_at_trigger,initial,delivered_to"
        )?;
        for e in &self.events {
            let deliveries = e
                .delivered_to
                .iter()
                .map(|(r, t)| format!("{r}@{}", fmt_f64(*t)))
                .collect::<Vec<_>>()
                .join(";");
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.agent,
                fmt_f64(e.t_event),
                fmt_f64(e.sample.gamma),
                fmt_f64(e.sample.gamma_dot),
                fmt_f64(e.error_at_trigger),
                e.initial,
                deliveries
            )?;
        }
        Ok(())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// 17 significant digits; enough to reconstruct the exact f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One named verdict in the summary report.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub holds: bool,
    /// Bound/observation ratio; ≥ 1 means the bound holds with that margin.
    pub margin: f64,
    pub first_violation_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsSummary {
    pub negative_rate_count: usize,
    pub first_negative_rate: Option<(usize, f64)>,
    pub clamp_count: usize,
    pub schedule_past_end_steps: usize,
    pub domain_clamped_evals: usize,
    pub warnings: Vec<String>,
}

/// Stable-keyed report of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub n: usize,
    pub mission_t_f: f64,
    pub dt: f64,
    pub t_end: f64,
    pub samples: usize,
    pub trace_hash: String,
    pub final_max_pairwise_gamma_gap: f64,
    pub final_max_rate_deviation: f64,
    /// Largest pairwise |γ_i − γ_j| over samples with t ≥ 10 s.
    pub max_pairwise_gamma_gap_after_10s: Option<f64>,
    /// Largest |γ̇_i − γ̇_d| over samples with t ≥ 10 s, skipping agents that
    /// already arrived (their rate is clamped to zero by design).
    pub max_rate_deviation_after_10s_pre_arrival: Option<f64>,
    pub arrival_times: Vec<Option<f64>>,
    pub arrival_spread: Option<f64>,
    pub events_per_agent: Vec<usize>,
    pub total_events: usize,
    pub min_interevent_gap: Option<f64>,
    pub max_estimation_error: f64,
    pub max_stacked_pf_error: f64,
    pub xi_norm_initial: f64,
    pub xi_norm_final: f64,
    pub constants: Option<TheoreticalBounds>,
    pub interevent_bound: Option<InterEventBound>,
    pub iss_envelope: Option<EnvelopeCheck>,
    pub checks: Vec<BoundCheck>,
    pub diagnostics: DiagnosticsSummary,
}

/// Builds the summary report for a finished run.
pub fn summarize(cfg: &ScenarioConfig, trace: &TraceLog) -> RunSummary {
    let last = trace.samples() - 1;
    let mut checks = Vec::new();

    // Estimation errors must stay inside the threshold tube (plus one step
    // of growth, since triggers are evaluated per step).
    let mut est_margin = f64::INFINITY;
    let mut est_violation = None;
    for (s, &t) in trace.times.iter().enumerate() {
        let allowed = cfg.trigger.threshold(t) + EST_ERROR_STEP_SLACK;
        for agent in 0..trace.n {
            let e = trace.est_error[agent][s].abs();
            if e > allowed && est_violation.is_none() {
                est_violation = Some(t);
            }
            if e > 0.0 {
                est_margin = est_margin.min(allowed / e);
            }
        }
    }
    checks.push(BoundCheck {
        name: "estimation_error_bound".into(),
        holds: est_violation.is_none(),
        margin: est_margin,
        first_violation_t: est_violation,
        note: None,
    });

    // Tracking-error certificate: stacked norm within the configured rho.
    let max_pf = trace.max_stacked_pf_norm();
    let pf_holds = max_pf <= cfg.pf.rho;
    checks.push(BoundCheck {
        name: "pf_error_certificate".into(),
        holds: pf_holds,
        margin: if max_pf > 0.0 { cfg.pf.rho / max_pf } else { f64::INFINITY },
        first_violation_t: if pf_holds {
            None
        } else {
            (0..trace.samples())
                .find(|&s| trace.stacked_pf_norm(s) > cfg.pf.rho)
                .map(|s| trace.times[s])
        },
        note: None,
    });

    let constants = if cfg.n >= 2 {
        crate::analysis::iss_bound_constants(
            &cfg.gains,
            cfg.n,
            cfg.qos.window_s,
            cfg.qos.delta,
            1.0,
            None,
        )
        .ok()
    } else {
        None
    };

    let mut interevent = None;
    let mut envelope = None;
    if let Some(bounds) = &constants {
        let env = check_iss_envelope(
            &trace.times,
            &trace.xi_norm,
            bounds,
            &cfg.gains,
            cfg.trigger.sup(),
            max_pf,
            cfg.gamma_ddot_d_max(),
        )
        .ok();
        if let Some(env) = env {
            checks.push(BoundCheck {
                name: "iss_envelope".into(),
                holds: env.holds,
                margin: env.margin_ratio,
                first_violation_t: env.first_violation_t,
                note: Some("constants are conservative by construction".into()),
            });
            envelope = Some(env);
        }

        let bound = min_interevent_bound(
            &cfg.gains,
            &cfg.trigger,
            cfg.n,
            cfg.pf.rho,
            trace.xi_norm[0],
            cfg.gamma_ddot_d_max(),
            bounds,
        );
        let min_gap = trace.min_interevent_gap();
        let holds = match min_gap {
            Some(gap) => gap >= bound.seconds,
            None => true,
        };
        checks.push(BoundCheck {
            name: "zeno_min_interevent".into(),
            holds,
            margin: match min_gap {
                Some(gap) if bound.seconds > 0.0 => gap / bound.seconds,
                _ => f64::INFINITY,
            },
            first_violation_t: None,
            note: bound
                .degenerate
                .then(|| "degenerate (c1 = 0): no positive lower bound".into()),
        });
        checks.push(BoundCheck {
            name: "damping_feasibility_psd".into(),
            holds: bounds.damping_matrix_psd,
            margin: bounds.damping_matrix_eigenvalues[0],
            first_violation_t: None,
            note: Some(
                "informational: evaluated at the decay-rate cap, where strict \
                 feasibility is unattainable"
                    .into(),
            ),
        });
        interevent = Some(bound);
    }

    let after_10: Vec<usize> = (0..trace.samples())
        .filter(|&s| trace.times[s] >= 10.0)
        .collect();
    let max_gap_10 = (!after_10.is_empty()).then(|| {
        after_10
            .iter()
            .map(|&s| trace.pairwise_gamma_gap(s))
            .fold(0.0, f64::max)
    });
    let max_rate_10 = (!after_10.is_empty()).then(|| {
        let mut worst = 0.0f64;
        for &s in &after_10 {
            let t = trace.times[s];
            let gdd = trace.gamma_dot_d[s];
            for agent in 0..trace.n {
                let arrived = trace.arrival_times[agent].is_some_and(|ta| t >= ta);
                if !arrived {
                    worst = worst.max((trace.gamma_dot[agent][s] - gdd).abs());
                }
            }
        }
        worst
    });

    let arrivals: Vec<f64> = trace.arrival_times.iter().flatten().copied().collect();
    let arrival_spread = (arrivals.len() == trace.n && trace.n > 0).then(|| {
        arrivals.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - arrivals.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    });

    RunSummary {
        scenario: cfg.name.clone(),
        n: cfg.n,
        mission_t_f: cfg.mission_t_f(),
        dt: cfg.dt,
        t_end: cfg.t_end,
        samples: trace.samples(),
        trace_hash: trace.hash(),
        final_max_pairwise_gamma_gap: trace.pairwise_gamma_gap(last),
        final_max_rate_deviation: trace.rate_deviation(last),
        max_pairwise_gamma_gap_after_10s: max_gap_10,
        max_rate_deviation_after_10s_pre_arrival: max_rate_10,
        arrival_times: trace.arrival_times.clone(),
        arrival_spread,
        events_per_agent: trace.events_per_agent(),
        total_events: trace.events.len(),
        min_interevent_gap: trace.min_interevent_gap(),
        max_estimation_error: trace.max_abs_est_error(),
        max_stacked_pf_error: max_pf,
        xi_norm_initial: trace.xi_norm[0],
        xi_norm_final: trace.xi_norm[last],
        constants,
        interevent_bound: interevent,
        iss_envelope: envelope,
        checks,
        diagnostics: DiagnosticsSummary {
            negative_rate_count: trace.diagnostics.negative_rate_count,
            first_negative_rate: trace.diagnostics.negative_rate_instants.first().copied(),
            clamp_count: trace.diagnostics.clamp_events.len(),
            schedule_past_end_steps: trace.diagnostics.schedule_past_end_steps,
            domain_clamped_evals: trace.diagnostics.domain_clamped_evals,
            warnings: trace.diagnostics.warnings.clone(),
        },
    }
}

impl RunSummary {
    /// True when the certificate the surrogate is supposed to guarantee
    /// held on this run.
    pub fn pf_certificate_holds(&self) -> bool {
        self.checks
            .iter()
            .find(|c| c.name == "pf_error_certificate")
            .is_none_or(|c| c.holds)
    }
}
