//! Command implementations behind the `etcoord` binary.
//!
//! Process contract: exit 0 on success, 2 on validation failures (bad
//! scenario files, unknown keys or override paths, failed connectivity
//! scans), 3 on numeric failures (non-finite states, violated tracking
//! certificates). Summaries are stable-keyed JSON.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use etcoord::analysis::{
    iss_bound_constants, min_interevent_bound, InterEventBound, TheoreticalBounds,
};
use etcoord::error::Error;
use etcoord::graph::{consensus_rate_constants, diameter, QMatrix};
use etcoord::scenario::ScenarioConfig;
use etcoord::sim::{run_consensus_reference, run_scenario, scan_integral_connectivity};
use etcoord::trace::{summarize, BoundCheck, RunSummary};

/// Command-level failure with a process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Numeric { .. } | Error::Internal(_) => 3,
            _ => 2,
        };
        CliError { code, message: e.to_string() }
    }
}

fn validation_error(message: String) -> CliError {
    CliError { code: 2, message }
}

fn load_scenario(path: &Path, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let (cfg, warnings) = ScenarioConfig::load(path, overrides)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

/// Runs a scenario and writes `trace.csv`, `events.csv`, and `summary.json`
/// under `out_dir`. A violated tracking certificate fails the run (exit 3)
/// after the artifacts are written, so the offending trace stays available.
pub fn cmd_run(
    scenario: &Path,
    out_dir: &Path,
    overrides: &[String],
) -> Result<RunSummary, CliError> {
    let cfg = load_scenario(scenario, overrides)?;
    let trace = run_scenario(&cfg)?;
    let summary = summarize(&cfg, &trace);

    fs::create_dir_all(out_dir).map_err(|e| CliError {
        code: 2,
        message: format!("cannot create output directory {}: {e}", out_dir.display()),
    })?;
    let mut trace_file = BufWriter::new(fs::File::create(out_dir.join("trace.csv")).map_err(Error::from)?);
    trace.write_trace_csv(&mut trace_file)?;
    trace_file.flush().map_err(Error::from)?;
    let mut events_file =
        BufWriter::new(fs::File::create(out_dir.join("events.csv")).map_err(Error::from)?);
    trace.write_events_csv(&mut events_file)?;
    events_file.flush().map_err(Error::from)?;
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n",
    )
    .map_err(Error::from)?;

    if !summary.pf_certificate_holds() {
        return Err(CliError {
            code: 3,
            message: format!(
                "tracking-error certificate violated: max ‖e_pf‖ = {} exceeds rho = {}",
                summary.max_stacked_pf_error, cfg.pf.rho
            ),
        });
    }
    Ok(summary)
}

/// Report produced by `verify`: theoretical constants plus named checks.
#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub constants: Option<TheoreticalBounds>,
    pub interevent_bound: Option<InterEventBound>,
    pub checks: Vec<BoundCheck>,
}

impl VerifyReport {
    pub fn mandatory_hold(&self) -> bool {
        const MANDATORY: [&str; 3] = [
            "integral_connectivity",
            "consensus_envelope_reference",
            "constants_finite",
        ];
        self.checks
            .iter()
            .filter(|c| MANDATORY.contains(&c.name.as_str()))
            .all(|c| c.holds)
    }
}

/// Scans integral connectivity, evaluates every theoretical constant, and
/// validates the consensus envelope on simulated reference runs.
pub fn cmd_verify(scenario: &Path, overrides: &[String]) -> Result<VerifyReport, CliError> {
    let cfg = load_scenario(scenario, overrides)?;
    let schedule = cfg.build_schedule()?;
    let mut checks = Vec::new();

    let windows = scan_integral_connectivity(&schedule, cfg.qos.window_s, cfg.qos.delta)?;
    let failing: Vec<_> = windows.iter().filter(|w| !w.holds).collect();
    for w in &windows {
        let roots: Vec<usize> = w.roots.iter().copied().collect();
        eprintln!(
            "window [{:.4}, {:.4}] s: {} (roots: {roots:?})",
            w.start,
            w.end,
            if w.holds { "connected in the integral sense" } else { "NOT connected" },
        );
    }
    checks.push(BoundCheck {
        name: "integral_connectivity".into(),
        holds: failing.is_empty(),
        margin: if failing.is_empty() { 1.0 } else { 0.0 },
        first_violation_t: failing.first().map(|w| w.start),
        note: None,
    });

    let mut constants = None;
    let mut interevent = None;
    if cfg.n >= 2 {
        let bounds = iss_bound_constants(
            &cfg.gains,
            cfg.n,
            cfg.qos.window_s,
            cfg.qos.delta,
            1.0,
            None,
        )?;
        let finite = [
            bounds.delta_prime,
            bounds.k,
            bounds.lambda,
            bounds.k_phi,
            bounds.lambda_tc,
            bounds.c1,
            bounds.c2,
            bounds.beta,
            bounds.kappa1,
            bounds.kappa2,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        checks.push(BoundCheck {
            name: "constants_finite".into(),
            holds: finite,
            margin: if finite { 1.0 } else { 0.0 },
            first_violation_t: None,
            note: None,
        });

        // Initial coordination error from the configured initial state.
        let q = QMatrix::new(cfg.n)?;
        let xi0 = {
            let xi1 = q.project(&cfg.initial.gamma)?.norm_squared();
            let gdd0 = cfg.gamma_dot_d_at(0.0);
            let xi2: f64 = cfg
                .initial
                .gamma_dot
                .iter()
                .map(|gd| (gd - gdd0) * (gd - gdd0))
                .sum();
            (xi1 + xi2).sqrt()
        };
        let bound = min_interevent_bound(
            &cfg.gains,
            &cfg.trigger,
            cfg.n,
            cfg.pf.rho,
            xi0,
            cfg.gamma_ddot_d_max(),
            &bounds,
        );
        checks.push(BoundCheck {
            name: "zeno_bound_positive".into(),
            holds: bound.seconds > 0.0,
            margin: bound.seconds,
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
            note: Some("informational: evaluated at the decay-rate cap".into()),
        });

        // Consensus envelope on simulated reference runs with random
        // initial conditions (seeded by the scenario).
        let rate = consensus_rate_constants(
            cfg.gains.a,
            cfg.gains.b,
            cfg.qos.delta,
            cfg.qos.window_s,
            cfg.n,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let horizon = cfg.t_end.min(3.0);
        let mut margin = f64::INFINITY;
        let mut first_violation = None;
        for _ in 0..20 {
            let x0: Vec<f64> = (0..cfg.n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d0 = diameter(&x0)?;
            let (times, states) =
                run_consensus_reference(&schedule, cfg.gains.a, cfg.gains.b, &x0, cfg.dt, horizon)?;
            for (t, x) in times.iter().zip(&states) {
                let d = diameter(x)?;
                let envelope = rate.k * d0 * (-rate.lambda * t).exp();
                if d > envelope * (1.0 + 1e-12) && first_violation.is_none() {
                    first_violation = Some(*t);
                }
                if d > 0.0 {
                    margin = margin.min(envelope / d);
                }
            }
        }
        checks.push(BoundCheck {
            name: "consensus_envelope_reference".into(),
            holds: first_violation.is_none(),
            margin,
            first_violation_t: first_violation,
            note: None,
        });
        constants = Some(bounds);
        interevent = Some(bound);
    } else {
        checks.push(BoundCheck {
            name: "constants_finite".into(),
            holds: true,
            margin: 1.0,
            first_violation_t: None,
            note: Some("single agent: no coordination constants".into()),
        });
        checks.push(BoundCheck {
            name: "consensus_envelope_reference".into(),
            holds: true,
            margin: f64::INFINITY,
            first_violation_t: None,
            note: Some("single agent: consensus is trivial".into()),
        });
    }

    Ok(VerifyReport {
        scenario: cfg.name.clone(),
        constants,
        interevent_bound: interevent,
        checks,
    })
}

/// One row of the sweep aggregate.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub total_events: usize,
    pub final_max_pairwise_gamma_gap: f64,
    pub final_max_rate_deviation: f64,
    pub max_estimation_error: f64,
    pub max_stacked_pf_error: f64,
    pub min_interevent_gap: Option<f64>,
    pub arrival_spread: Option<f64>,
}

/// Runs the scenario once per parameter value (optionally in parallel) and
/// writes per-run artifacts plus an aggregate `sweep.csv`.
pub fn cmd_sweep(
    scenario: &Path,
    param: &str,
    values: &[f64],
    out_dir: &Path,
    jobs: usize,
    overrides: &[String],
) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(validation_error("sweep needs at least one value".into()));
    }
    // Fail early (and with a good message) when the parameter path does not
    // address a numeric field.
    {
        let mut probe: Vec<String> = overrides.to_vec();
        probe.push(format!("{param}={}", values[0]));
        load_scenario(scenario, &probe)?;
    }

    fs::create_dir_all(out_dir).map_err(Error::from)?;
    let run_one = |value: &f64| -> Result<SweepRow, CliError> {
        let mut ov: Vec<String> = overrides.to_vec();
        ov.push(format!("{param}={value}"));
        let run_dir: PathBuf = out_dir.join(format!("run_{value}"));
        let summary = cmd_run(scenario, &run_dir, &ov)?;
        Ok(SweepRow {
            param: param.to_string(),
            value: *value,
            total_events: summary.total_events,
            final_max_pairwise_gamma_gap: summary.final_max_pairwise_gamma_gap,
            final_max_rate_deviation: summary.final_max_rate_deviation,
            max_estimation_error: summary.max_estimation_error,
            max_stacked_pf_error: summary.max_stacked_pf_error,
            min_interevent_gap: summary.min_interevent_gap,
            arrival_spread: summary.arrival_spread,
        })
    };

    let results: Vec<Result<SweepRow, CliError>> = if jobs == 1 {
        values.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| validation_error(format!("cannot build thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            values.par_iter().map(run_one).collect()
        })
    };
    let rows: Vec<SweepRow> = results.into_iter().collect::<Result<_, _>>()?;

    let mut table = BufWriter::new(
        fs::File::create(out_dir.join("sweep.csv")).map_err(Error::from)?,
    );
    writeln!(
        table,
        "param,value,total_events,final_max_pairwise_gamma_gap,final_max_rate_deviation,\
         max_estimation_error,max_stacked_pf_error,min_interevent_gap,arrival_spread"
    )
    .map_err(Error::from)?;
    for r in &rows {
        writeln!(
            table,
            "{},{},{},{},{},{},{},{},{}",
            r.param,
            r.value,
            r.total_events,
            etcoord::trace::fmt_f64(r.final_max_pairwise_gamma_gap),
            etcoord::trace::fmt_f64(r.final_max_rate_deviation),
            etcoord::trace::fmt_f64(r.max_estimation_error),
            etcoord::trace::fmt_f64(r.max_stacked_pf_error),
            r.min_interevent_gap.map(etcoord::trace::fmt_f64).unwrap_or_default(),
            r.arrival_spread.map(etcoord::trace::fmt_f64).unwrap_or_default(),
        )
        .map_err(Error::from)?;
    }
    table.flush().map_err(Error::from)?;
    Ok(rows)
}
