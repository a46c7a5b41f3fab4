//! Engine-level behavior on the bundled five-agent scenario: determinism,
//! integration order, event bookkeeping, and the event-triggered versus
//! continuous-communication comparison.

use std::path::PathBuf;

use etcoord::error::Error;
use etcoord::scenario::ScenarioConfig;
use etcoord::sim::run_scenario;
use etcoord::trace::summarize;

fn default_scenario_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.json")
}

fn load(overrides: &[&str]) -> ScenarioConfig {
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ScenarioConfig::load(&default_scenario_path(), &ov).unwrap().0
}

#[test]
fn identical_configs_produce_identical_traces() {
    let cfg = load(&[]);
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a.hash(), b.hash());
}

#[test]
fn sample_times_strictly_increase() {
    let trace = run_scenario(&load(&["t_end=1.0"])).unwrap();
    for w in trace.times.windows(2) {
        assert!(w[1] > w[0]);
    }
    assert_eq!(trace.samples(), 1001);
}

#[test]
fn halving_the_step_shows_fourth_order_convergence() {
    // Stiffened gains push the truncation error above the rounding floor;
    // the threshold is disabled so the horizon stays free of events.
    let base = [
        "gains.a=30.0",
        "gains.b=40.0",
        "gains.eta=60.0",
        "speed_envelope.v_max=40.0",
        "trigger.c1=1000000.0",
        "t_end=2.0",
        "initial.gamma=[0.1,0.0,0.05,0.2,0.0]",
        "initial.gamma_dot=[1.3,0.8,1.1,0.95,1.05]",
    ];
    let mut finals: Vec<Vec<f64>> = Vec::new();
    for dt in ["dt=0.001", "dt=0.0005", "dt=0.00025"] {
        let mut ov = base.to_vec();
        ov.push(dt);
        let cfg = load(&ov);
        let trace = run_scenario(&cfg).unwrap();
        assert_eq!(trace.events.iter().filter(|e| !e.initial).count(), 0);
        let last = trace.samples() - 1;
        finals.push((0..cfg.n).map(|i| trace.gamma[i][last]).collect());
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let coarse = dist(&finals[0], &finals[1]);
    let fine = dist(&finals[1], &finals[2]);
    let ratio = coarse / fine;
    assert!(
        ratio >= 8.0,
        "expected fourth-order step-halving (ratio ≥ 8), got {ratio} \
         (coarse {coarse:.3e}, fine {fine:.3e})"
    );
}

#[test]
fn event_triggered_run_stays_near_continuous_run() {
    let et = run_scenario(&load(&[])).unwrap();
    let cont = run_scenario(&load(&["comms=\"continuous\""])).unwrap();
    assert!(cont.events.is_empty());
    assert_eq!(et.samples(), cont.samples());
    let mut worst = 0.0f64;
    for s in 0..et.samples() {
        for i in 0..et.n {
            worst = worst.max((et.gamma[i][s] - cont.gamma[i][s]).abs());
        }
    }
    // The gap scales with the threshold (sup h = 0.03 here); ten times that
    // is a loose sanity ceiling, not a tuned constant.
    println!("max |gamma_et - gamma_continuous| = {worst}");
    assert!(worst > 0.0);
    assert!(worst < 0.3, "runs diverged by {worst}");
}

#[test]
fn events_queue_until_a_channel_opens() {
    let trace = run_scenario(&load(&[])).unwrap();
    // Deliveries never precede their event, and at least one event had to
    // wait for its out-edge to activate.
    let mut saw_delayed = false;
    for e in &trace.events {
        for &(receiver, t_delivered) in &e.delivered_to {
            assert!(t_delivered >= e.t_event);
            assert!(receiver >= 1 && receiver <= trace.n && receiver != e.agent);
            if t_delivered > e.t_event {
                saw_delayed = true;
            }
        }
    }
    assert!(saw_delayed, "expected at least one queued delivery");
}

#[test]
fn every_triggered_event_crossed_the_threshold() {
    let cfg = load(&[]);
    let trace = run_scenario(&cfg).unwrap();
    let mut triggered = 0;
    for e in &trace.events {
        if e.initial {
            assert_eq!(e.t_event, 0.0);
            continue;
        }
        triggered += 1;
        let h = cfg.trigger.threshold(e.t_event);
        assert!(
            e.error_at_trigger.abs() > h,
            "event at t={} logged error {} inside the tube {h}",
            e.t_event,
            e.error_at_trigger
        );
    }
    assert!(triggered > 0);
}

#[test]
fn offset_agents_transmit_most_in_the_first_seconds() {
    let trace = run_scenario(&load(&[])).unwrap();
    let early = |agent: usize| {
        trace
            .events
            .iter()
            .filter(|e| e.agent == agent && e.t_event > 0.0 && e.t_event <= 3.0)
            .count()
    };
    let offset_min = [3, 4, 5].iter().map(|&a| early(a)).min().unwrap();
    let plain_max = [1, 2].iter().map(|&a| early(a)).max().unwrap();
    assert!(
        offset_min > plain_max,
        "agents with initial tracking offsets should transmit most \
         (offset min {offset_min}, plain max {plain_max})"
    );
}

#[test]
fn estimation_errors_stay_inside_the_tube() {
    let cfg = load(&[]);
    let trace = run_scenario(&cfg).unwrap();
    for (s, &t) in trace.times.iter().enumerate() {
        let allowed = cfg.trigger.threshold(t) + etcoord::trace::EST_ERROR_STEP_SLACK;
        for agent in 0..trace.n {
            let e = trace.est_error[agent][s].abs();
            assert!(e <= allowed, "agent {} at t={t}: |e| = {e} > {allowed}", agent + 1);
        }
    }
}

#[test]
fn rate_profile_change_reanchors_cleanly() {
    let cfg = load(&[
        "gamma_dot_d=[{\"t\":0.0,\"value\":1.0},{\"t\":5.0,\"value\":0.8}]",
        "t_end=12.0",
    ]);
    let trace = run_scenario(&cfg).unwrap();
    // Rates settle near the new reference and no estimation error escapes
    // the tube across the switch.
    let last = trace.samples() - 1;
    for agent in 0..trace.n {
        let dev = (trace.gamma_dot[agent][last] - 0.8).abs();
        assert!(dev < 0.05, "agent {} ended at rate deviation {dev}", agent + 1);
    }
    for (s, &t) in trace.times.iter().enumerate() {
        let allowed = cfg.trigger.threshold(t) + etcoord::trace::EST_ERROR_STEP_SLACK;
        for agent in 0..trace.n {
            assert!(trace.est_error[agent][s].abs() <= allowed);
        }
    }
    assert_eq!(trace.gamma_dot_d[0], 1.0);
    assert_eq!(*trace.gamma_dot_d.last().unwrap(), 0.8);
}

#[test]
fn unstable_override_fails_with_step_index() {
    let cfg = load(&["dt=0.5", "gains.b=5000.0", "gains.eta=5000.0"]);
    match run_scenario(&cfg) {
        Err(Error::Numeric { step, .. }) => {
            assert!(step <= cfg.steps(), "reported step {step} out of range")
        }
        other => panic!("expected numeric failure, got {other:?}"),
    }
}

#[test]
fn summary_reports_certificate_and_convergence() {
    let cfg = load(&[]);
    let trace = run_scenario(&cfg).unwrap();
    let summary = summarize(&cfg, &trace);
    assert!(summary.pf_certificate_holds());
    assert!(summary.max_stacked_pf_error <= cfg.pf.rho);
    for arrival in summary.arrival_times.iter().flatten() {
        assert!(*arrival <= cfg.t_end);
    }
    assert!(summary.arrival_spread.unwrap() < 0.2);
    assert!(summary.max_pairwise_gamma_gap_after_10s.unwrap() < 0.05);
    assert!(summary.max_rate_deviation_after_10s_pre_arrival.unwrap() < 0.05);
    assert_eq!(summary.total_events, trace.events.len());
    // The eta/speed-envelope margin warning is expected for this config.
    assert!(summary.diagnostics.warnings.iter().any(|w| w.contains("eta")));
}

#[test]
fn initial_tracking_offsets_set_the_alpha_signs() {
    // Agents 3 and 5 start ahead of their trajectory origin (+y), agent 4
    // behind; the tracking feedback must accelerate 3 and 5 and decelerate
    // 4 at mission start. With equalized initial states the controller's
    // other terms vanish, so γ̈(0) is exactly that feedback term.
    let trace = run_scenario(&load(&[])).unwrap();
    assert!(trace.gamma_ddot[2][0] > 0.0, "agent 3: {}", trace.gamma_ddot[2][0]);
    assert!(trace.gamma_ddot[4][0] > 0.0, "agent 5: {}", trace.gamma_ddot[4][0]);
    assert!(trace.gamma_ddot[3][0] < 0.0, "agent 4: {}", trace.gamma_ddot[3][0]);
    for agent in [0, 1] {
        assert!(
            trace.gamma_ddot[agent][0].abs() < 1e-9,
            "agent {} should start unforced",
            agent + 1
        );
    }
}

#[test]
fn bundled_trajectories_keep_safe_clearance_at_matched_progress() {
    let cfg = load(&[]);
    let trajs = cfg.build_trajectories().unwrap();
    let t_f = cfg.mission_t_f();
    let mut min_clearance = f64::INFINITY;
    for k in 0..=1000 {
        let gamma = t_f * k as f64 / 1000.0;
        for i in 0..trajs.len() {
            for j in i + 1..trajs.len() {
                let d = (trajs[i].position(gamma) - trajs[j].position(gamma)).norm();
                min_clearance = min_clearance.min(d);
            }
        }
    }
    assert!(
        min_clearance >= 10.0,
        "pairwise clearance dropped to {min_clearance} m"
    );
}

#[test]
fn coordination_error_norm_decays_over_the_transient() {
    let trace = run_scenario(&load(&[])).unwrap();
    let lambda_hat =
        etcoord::analysis::fit_decay_rate(&trace.times, &trace.xi_norm, 1.0, 8.0).unwrap();
    assert!(
        lambda_hat > 0.0,
        "empirical decay rate over [1 s, 8 s] should be positive, got {lambda_hat}"
    );
    println!("empirical decay rate over [1, 8] s: {lambda_hat:.4} 1/s");
}

#[test]
fn discoordination_measures_agree_on_every_sample() {
    // The projected error and the spread of the virtual times are
    // equivalent measures: (1/√n)‖Qγ‖ ≤ diam(γ) ≤ √2‖Qγ‖ along the trace.
    let cfg = load(&["t_end=4.0"]);
    let trace = run_scenario(&cfg).unwrap();
    let q = etcoord::graph::QMatrix::new(cfg.n).unwrap();
    for s in 0..trace.samples() {
        let gamma: Vec<f64> = (0..cfg.n).map(|i| trace.gamma[i][s]).collect();
        let d = etcoord::graph::diameter(&gamma).unwrap();
        let qn = q.project(&gamma).unwrap().norm();
        assert!(qn / (cfg.n as f64).sqrt() <= d + 1e-12);
        assert!(d <= 2f64.sqrt() * qn + 1e-12);
    }
}

#[test]
fn scenario_file_round_trips_exactly() {
    let text = std::fs::read_to_string(default_scenario_path()).unwrap();
    let cfg = ScenarioConfig::from_json_str(&text).unwrap();
    let back = ScenarioConfig::from_json_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(cfg, back);
}

#[test]
fn disturbance_hook_is_seed_deterministic() {
    let a = run_scenario(&load(&["disturbance.accel_max=0.2"])).unwrap();
    let b = run_scenario(&load(&["disturbance.accel_max=0.2"])).unwrap();
    assert_eq!(a.hash(), b.hash());
    let c = run_scenario(&load(&["disturbance.accel_max=0.2", "seed=43"])).unwrap();
    assert_ne!(a.hash(), c.hash(), "different seeds must perturb differently");
    // Bounded disturbance keeps the certificate intact.
    let cfg = load(&["disturbance.accel_max=0.2"]);
    let summary = summarize(&cfg, &a);
    assert!(summary.pf_certificate_holds());
}
