//! Deterministic simulation of event-triggered time-coordination for fleets
//! of path-following vehicles communicating over switching directed networks.
//!
//! Each vehicle tracks a desired trajectory parameterized by a *virtual time*
//! `γ_i` and adjusts its progression rate from estimates of its neighbors'
//! virtual times. Neighbors broadcast their state only when a local
//! self-estimation error crosses a threshold, so inter-vehicle traffic is
//! sparse. The crate provides:
//!
//! - [`graph`]: switching digraphs, integrated-Laplacian connectivity tests,
//!   and the disagreement-projection matrix `Q`;
//! - [`coordination`]: the decentralized controller, the closed-form neighbor
//!   estimator, and the event-trigger logic;
//! - [`vehicle`]: Bezier reference trajectories and a point-mass
//!   path-following surrogate with a certified tracking bound;
//! - [`sim`]: the fixed-step engine producing bit-reproducible traces;
//! - [`analysis`]: the theoretical convergence/ISS constants, the minimum
//!   inter-event bound, and trace-vs-bound verdicts;
//! - [`scenario`]: the JSON scenario format consumed by the CLI and the
//!   Python bindings.
//!
//! ```
//! use etcoord::{run_scenario, ScenarioConfig};
//!
//! let cfg = ScenarioConfig::from_json_str(r#"{
//!     "schema": 1, "name": "pair", "n": 2,
//!     "gains": {"a": 3.75, "b": 4.82, "eta": 12.0},
//!     "trigger": {"c1": 0.03, "c2": 0.0, "decay_rate": 0.0},
//!     "qos": {"window_s": 0.2, "delta": 0.1},
//!     "schedule": {"cyclic": true, "segments": [
//!         {"duration_s": 0.1, "edges": [[1, 2]]},
//!         {"duration_s": 0.1, "edges": [[2, 1]]}]},
//!     "trajectories": [
//!         {"control_points": [[0, 0, 5], [40, 0, 5]], "t_f": 20.0},
//!         {"control_points": [[0, 8, 5], [40, 8, 5]], "t_f": 20.0}],
//!     "pf": {"kp": 4.0, "kd": 4.0, "rho": 2.0},
//!     "speed_envelope": {"v_min": 0.0, "v_max": 10.0},
//!     "initial": {"gamma": [0.0, 0.4], "gamma_dot": [1.0, 1.0]},
//!     "gamma_dot_d": [{"t": 0.0, "value": 1.0}],
//!     "dt": 0.001, "t_end": 8.0, "seed": 1
//! }"#).unwrap();
//! cfg.validate().unwrap();
//!
//! let trace = run_scenario(&cfg).unwrap();
//! let last = trace.samples() - 1;
//! // The 0.4 s head start of agent 2 is coordinated away.
//! assert!(trace.pairwise_gamma_gap(0) == 0.4);
//! assert!(trace.pairwise_gamma_gap(last) < 0.05);
//! ```

// `!(x > 0.0)`-style range checks are used throughout on purpose: unlike
// `x <= 0.0`, they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod coordination;
pub mod error;
pub mod graph;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod vehicle;

pub use error::{Error, Result};
pub use graph::{Digraph, NetworkSchedule, QMatrix};
pub use scenario::ScenarioConfig;
pub use sim::{run_consensus_reference, run_scenario};
pub use trace::{EventRecord, RunSummary, TraceLog};
